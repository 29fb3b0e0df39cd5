"""One-dimensional spectral decomposition of the scaled FEM pencil.

For every ``θ_k = cos(πk/K)``, ``k = 1..K-1``, the ``n`` eigenvalues
``λ_k^(l)`` are the roots of the secular function ``ψ(λ;θ_k)`` (see
`secular_eval`), a rational function whose poles are the interior
eigenvalues ``λ₀^(l)``.  Its residues are non-negative and its linear part
decreases, so ``ψ`` decreases strictly between consecutive poles and each of
the ``n`` intervals ``(0, λ₀^(1)), …, (λ₀^(n-1), ∞)`` holds exactly one root.

Roots are solved as offsets ``τ = λ - λ*`` from the nearer end ``λ*`` of
their interval, and the pole weights ``1 ± θ`` are formed from the half
angle ``πk/2K``.  A root lying very close to a pole then still has
full relative accuracy in ``λ - λ₀``, which is what the eigenvector data
``p_k^(l)`` and the norms depend on.
"""

import dataclasses
import logging
import math
import time
from typing import Optional, Tuple

import numpy as np
import numpy.polynomial

from . import element_core
from .errors import (
    NonSimpleSpectrumError,
    PoleProximityError,
    SecularSolveError,
)

logger = logging.getLogger(__name__)

RESIDUAL_RTOL = 1e-13
SEPARATION_RTOL = 1e-10
MAX_DOUBLINGS = 60
MAX_ITERATIONS = 200


@dataclasses.dataclass(frozen=True)
class SecularFunction:
    """The secular function of one ``θ``, vectorized over ``θ`` if needed.

    ``theta`` may be a scalar or a 1D array; evaluations then broadcast
    ``λ`` against it.  ``theta_plus`` and ``theta_minus`` hold ``1 + θ`` and
    ``1 - θ`` with full relative accuracy.
    """

    eigen: element_core.InteriorEigen
    pencil: element_core.LocalPencil
    theta: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray

    @property
    def order(self) -> int:
        return self.pencil.order

    @property
    def poles(self) -> np.ndarray:
        return self.eigen.values

    @property
    def weights(self) -> np.ndarray:
        """``1 + σ_l θ`` per pole, shape ``θ.shape + (n-1,)``."""
        return np.where(
            self.eigen.parity > 0,
            self.theta_plus[..., None],
            self.theta_minus[..., None],
        )

    def residues(self) -> np.ndarray:
        """Pole residues ``r_l(θ) = (1 + σ_l θ)(a^(l) - λ₀^(l) c^(l))²``.

        Shape ``θ.shape + (n-1,)``.
        """
        e = self.eigen
        beta = e.a_coef - e.values * e.c_coef
        return self.weights * beta**2


def make_secular(
    eig: element_core.InteriorEigen,
    pencil: element_core.LocalPencil,
    theta,
    half_angle=None,
) -> SecularFunction:
    """Secular function of ``theta``.

    :param half_angle: ``φ`` with ``θ = cos 2φ``; if given, ``1 ± θ`` are
        computed as ``2cos²φ`` and ``2sin²φ``.
    """
    theta = np.asarray(theta, dtype=float)
    if half_angle is None:
        plus = 1.0 + theta
        minus = 1.0 - theta
    else:
        half_angle = np.asarray(half_angle, dtype=float)
        plus = 2.0 * np.cos(half_angle) ** 2
        minus = 2.0 * np.sin(half_angle) ** 2
    return SecularFunction(
        eigen=eig, pencil=pencil, theta=theta, theta_plus=plus, theta_minus=minus
    )


def family_theta(size: int) -> np.ndarray:
    """``θ_k = cos(πk/K)``, ``k = 1..K-1``."""
    return np.cos(np.pi * np.arange(1, size) / size)


def _flat(f: SecularFunction) -> SecularFunction:
    return dataclasses.replace(
        f,
        theta=np.atleast_1d(f.theta).ravel(),
        theta_plus=np.atleast_1d(f.theta_plus).ravel(),
        theta_minus=np.atleast_1d(f.theta_minus).ravel(),
    )


def _select(f: SecularFunction, index) -> SecularFunction:
    return dataclasses.replace(
        f,
        theta=np.asarray(f.theta[index]),
        theta_plus=np.asarray(f.theta_plus[index]),
        theta_minus=np.asarray(f.theta_minus[index]),
    )


def _terms(f: SecularFunction, tau: np.ndarray, origin=None):
    """Value, derivative and magnitude scale of ``ψ`` at ``λ = origin + τ``.

    ``tau`` and ``origin`` must broadcast against ``f.theta``.  Differences
    to the poles are formed as ``τ + (origin - λ₀)``, exact when ``origin``
    is the pole itself.
    """
    e = f.eigen
    p = f.pencil
    tau = np.asarray(tau, dtype=float)
    origin = np.zeros_like(tau) if origin is None else np.asarray(origin)
    # a₀ + θaₙ, exact at θ = 1 for the linear element.
    lin0 = (p.a0 + p.an) - f.theta_minus * p.an
    lin1 = p.c0 + f.theta * p.cn
    value = (lin0 - origin * lin1) - tau * lin1
    derivative = -lin1 * np.ones_like(value)
    scale = np.abs(lin0) + np.abs((origin + tau) * lin1)
    if e.size:
        tau_ = tau[..., None]
        origin_ = origin[..., None]
        t = f.weights
        u = (e.a_coef - origin_ * e.c_coef) - tau_ * e.c_coef
        dist = tau_ + (origin_ - e.values)
        num = t * u * u
        value = value + (num / dist).sum(axis=-1)
        derivative = derivative + (
            t * (-2.0 * e.c_coef * u * dist - u * u) / dist**2
        ).sum(axis=-1)
        scale = scale + np.abs(num / dist).sum(axis=-1)
    return value, derivative, scale


def _check_poles(f: SecularFunction, lam: np.ndarray) -> None:
    if not f.eigen.size:
        return
    dist = lam[..., None] - f.poles
    close = np.abs(dist) <= element_core.POLE_RTOL * np.maximum(
        np.abs(f.poles), 1.0
    )
    if close.any():
        bad = np.broadcast_to(lam[..., None], dist.shape)[close]
        raise PoleProximityError(
            f"Secular function evaluated at lambda={bad[0]!r}, "
            f"on a pole of {f.poles!r}"
        )


def secular_eval(f: SecularFunction, lam) -> Tuple[np.ndarray, np.ndarray]:
    """Value and analytic derivative of ``ψ(λ;θ)``.

    .. code-block:: text

       ψ = a₀ - λc₀ + Σ_l (a^(l) - λc^(l))²/(λ - λ₀^(l))
           + θ[aₙ - λcₙ + Σ_l σ_l (a^(l) - λc^(l))²/(λ - λ₀^(l))]

    :raises PoleProximityError: if ``λ`` lies on an interior eigenvalue.
    """
    lam = np.asarray(lam, dtype=float)
    _check_poles(f, lam)
    value, derivative, _ = _terms(f, lam)
    return value, derivative


def _brackets(f: SecularFunction) -> Tuple[np.ndarray, np.ndarray]:
    """Lower/upper ends of the root intervals, shape ``(T, n)`` for flat ``θ``.

    The finite ends adjacent to poles are the poles themselves; they are
    never evaluated.  The last upper end is found by doubling.
    """
    f = _flat(f)
    theta = f.theta
    poles = f.poles
    lo = np.concatenate([[0.0], poles])
    start = poles[-1] if poles.size else 0.0
    upper = np.full(theta.shape, start + 1.0)
    step = 1.0
    for _ in range(MAX_DOUBLINGS):
        value, _, _ = _terms(f, upper)
        pending = value >= 0
        if not pending.any():
            break
        step *= 2.0
        upper = np.where(pending, start + step, upper)
    else:
        raise SecularSolveError(
            f"No upper bracket for the secular roots after {MAX_DOUBLINGS} doublings"
        )
    lower = np.broadcast_to(lo, theta.shape + lo.shape).copy()
    higher = np.concatenate(
        [np.broadcast_to(poles, theta.shape + poles.shape), upper[:, None]],
        axis=-1,
    )
    return lower, higher


def _safeguarded_newton(
    f: SecularFunction, origin: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Finds ``τ`` in each ``(lo, hi)`` with ``ψ(origin + τ) = 0``.

    Requires ``ψ(origin + lo+) > 0 > ψ(origin + hi-)``.  All arrays have the
    shape of ``f.theta``.  Newton steps that leave the bracket (or stall) are
    replaced by bisection.  Returns the offsets and a boolean mask of the
    entries that converged.
    """
    lo = lo.copy()
    hi = hi.copy()
    x = 0.5 * (lo + hi)
    done = np.zeros(x.shape, dtype=bool)
    width_old = hi - lo
    eps = np.finfo(float).eps
    for _ in range(MAX_ITERATIONS):
        with np.errstate(divide="ignore", invalid="ignore"):
            value, derivative, _ = _terms(f, x, origin)
        lo = np.where(value > 0, x, lo)
        hi = np.where(value < 0, x, hi)
        done |= value == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - value / derivative
        width = hi - lo
        use_newton = (
            np.isfinite(newton)
            & (newton > lo)
            & (newton < hi)
            & (np.abs(newton - x) < 0.5 * width_old)
        )
        x_new = np.where(use_newton, newton, 0.5 * (lo + hi))
        width_old = width
        converged = np.abs(x_new - x) <= 2.0 * eps * np.abs(x_new)
        converged |= width <= 2.0 * eps * np.abs(x_new)
        x = np.where(done, x, x_new)
        done |= converged
        if done.all():
            break
    return x, done


def _residual_ok(f: SecularFunction, tau: np.ndarray, origin=None) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        value, derivative, scale = _terms(f, tau, origin)
    tol = RESIDUAL_RTOL * (scale + np.abs(tau * derivative))
    return np.abs(value) <= tol


def _solve_branches(
    f: SecularFunction, start: int = 0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bracketed solve of branches ``start..`` for a flat ``θ``.

    Each root is anchored at the end of its interval on the side where
    ``ψ`` changes sign, judged at the midpoint; the last interval is
    anchored at its lower end.  Returns ``(origin, τ, ok)`` of shape
    ``(T, n)``; columns before ``start`` are left as zeros.
    """
    lower, higher = _brackets(f)
    origin = np.zeros(lower.shape)
    tau = np.zeros(lower.shape)
    ok = np.ones(lower.shape, dtype=bool)
    last = lower.shape[1] - 1
    for branch in range(start, last + 1):
        lo = lower[:, branch]
        hi = higher[:, branch]
        if branch < last:
            mid = 0.5 * (lo + hi)
            value, _, _ = _terms(f, mid)
            up = value > 0
            anchor = np.where(up, hi, lo)
            t_lo = np.where(up, mid - hi, 0.0)
            t_hi = np.where(up, 0.0, mid - lo)
        else:
            anchor = lo
            t_lo = np.zeros(lo.shape)
            t_hi = hi - lo
        x, done = _safeguarded_newton(f, anchor, t_lo, t_hi)
        inside = (x > t_lo) & (x < t_hi)
        ok[:, branch] = done & inside & _residual_ok(f, x, anchor)
        origin[:, branch] = anchor
        tau[:, branch] = x
    return origin, tau, ok


def _companion_roots(f: SecularFunction) -> np.ndarray:
    """All positive real roots of ``ψ(λ)·Π_l(λ - λ₀^(l))`` for a scalar ``θ``."""
    e = f.eigen
    p = f.pencil
    theta = float(f.theta)
    weights = np.broadcast_to(f.weights, e.values.shape)
    Polynomial = numpy.polynomial.Polynomial
    factors = [Polynomial([-v, 1.0]) for v in e.values]

    def prod_except(skip: Optional[int]) -> numpy.polynomial.Polynomial:
        out = Polynomial([1.0])
        for i, fac in enumerate(factors):
            if i != skip:
                out = out * fac
        return out

    lin0 = (p.a0 + p.an) - float(f.theta_minus) * p.an
    total = Polynomial([lin0, -(p.c0 + theta * p.cn)]) * prod_except(None)
    for i in range(e.size):
        u = Polynomial([e.a_coef[i], -e.c_coef[i]])
        total = total + weights[i] * u * u * prod_except(i)
    roots = total.roots()
    real = roots[np.abs(roots.imag) <= 1e-8 * np.maximum(np.abs(roots), 1.0)].real
    return np.sort(real[real > 0])


def _polish_companion(f: SecularFunction, guess: np.ndarray) -> np.ndarray:
    """Newton polish of companion roots, keeping each inside its pole interval."""
    lo_all, hi_all = _brackets(f)
    lo = lo_all[0]
    hi = hi_all[0]
    out = guess.copy()
    for i, x in enumerate(guess):
        idx = int(np.searchsorted(hi, x))
        if idx >= len(hi):
            continue
        for _ in range(8):
            value, derivative, _ = _terms(f, np.asarray(x))
            if derivative == 0:
                break
            x_new = x - float(value / derivative)
            if not lo[idx] < x_new < hi[idx]:
                break
            if x_new == x:
                break
            x = x_new
        out[i] = x
    return out


    """``(origin, τ)`` of absolute roots, anchored at the nearest of 0 and the poles."""
    """``(origin, τ)`` of absolute roots, anchored at the nearest of ``0`` and the poles."""
    anchors = np.concatenate([[0.0], poles])
    nearest = np.abs(roots[..., None] - anchors).argmin(axis=-1)
    origin = anchors[nearest]
    return origin, roots - origin


def _restrict(eig: element_core.InteriorEigen, keep: np.ndarray):
    return dataclasses.replace(
        eig,
        values=eig.values[keep],
        vectors=eig.vectors[:, keep],
        parity=eig.parity[keep],
        a_coef=eig.a_coef[keep],
        c_coef=eig.c_coef[keep],
        a_rev_coef=eig.a_rev_coef[keep],
        c_rev_coef=eig.c_rev_coef[keep],
    )


def _solve_endpoint(f: SecularFunction) -> Tuple[np.ndarray, np.ndarray]:
    """Roots for ``θ = ±1``, given as a flat ``θ`` of one entry.

    Poles whose weight ``1 + σθ`` vanishes decouple and are roots
    themselves; the others are the roots of ``ψ`` over the remaining poles.
    At ``θ = 1`` the smallest root is the constant mode ``λ = 0``.
    """
    weights = f.weights[0]
    active = weights > 0
    reduced = dataclasses.replace(f, eigen=_restrict(f.eigen, active))
    zero_mode = bool(f.theta_minus[0] == 0)
    origin, tau, ok = _solve_branches(reduced, start=1 if zero_mode else 0)
    if not ok.all():
        raise SecularSolveError(
            f"Secular solve failed for n={f.order}, theta={f.theta[0]!r}: "
            f"roots {origin[0] + tau[0]!r}"
        )
    decoupled = f.eigen.values[~active]
    origin = np.concatenate([origin[0], decoupled])
    tau = np.concatenate([tau[0], np.zeros(decoupled.shape)])
    order = np.argsort(origin + tau, kind="stable")
    return origin[order], tau[order]


def solve_shifted(f: SecularFunction) -> Tuple[np.ndarray, np.ndarray]:
    """Roots of ``ψ(·;θ)`` as ``λ = origin + τ``, both of shape ``θ.shape + (n,)``.

    ``origin`` is ``0`` or an interior eigenvalue.  Entries whose bracketed
    solve does not reach the residual tolerance are recomputed from the
    companion matrix of the polynomial multiple of ``ψ``.  For ``|θ| = 1``
    see `_solve_endpoint`.

    :raises ValueError: if some ``|θ| > 1``.
    :raises SecularSolveError: if some ``θ`` yields no consistent root set.
    """
    theta = np.asarray(f.theta, dtype=float)
    flat = _flat(f)
    if np.any(flat.theta_plus < 0) or np.any(flat.theta_minus < 0):
        raise ValueError(f"Secular solve needs |theta| <= 1, got {theta!r}")
    n = f.order
    origin = np.empty((flat.theta.size, n))
    tau = np.empty((flat.theta.size, n))
    endpoint = (flat.theta_plus == 0) | (flat.theta_minus == 0)
    inner = np.flatnonzero(~endpoint)
    if inner.size:
        sub = _select(flat, inner)
        sub_origin, sub_tau, ok = _solve_branches(sub)
        for i in np.flatnonzero(~ok.all(axis=1)):
            single = _select(sub, i)
            logger.warning(
                "Bracketed secular solve failed for n=%d, theta=%r; "
                "using companion-matrix roots",
                n,
                float(single.theta),
            )
            candidate = _polish_companion(single, _companion_roots(single))
            if candidate.size != n or not _residual_ok(single, candidate).all():
                raise SecularSolveError(
                    f"Secular solve failed for n={n}, theta={float(single.theta)!r}: "
                    f"bracketed roots {sub_origin[i] + sub_tau[i]!r}, "
                    f"companion roots {candidate!r}"
                )
            sub_origin[i], sub_tau[i] = _split_roots(candidate, f.poles)
        origin[inner] = sub_origin
        tau[inner] = sub_tau
    for i in np.flatnonzero(endpoint):
        origin[i], tau[i] = _solve_endpoint(_select(flat, [i]))
    shape = theta.shape + (n,)
    return origin.reshape(shape), tau.reshape(shape)


def solve_family(f: SecularFunction) -> np.ndarray:
    """The ``n`` ascending roots of ``ψ(·;θ)`` for every ``θ`` in ``f.theta``.

    Returns shape ``θ.shape + (n,)``; accepts ``-1 ≤ θ ≤ 1``.
    """
    origin, tau = solve_shifted(f)
    return origin + tau


@dataclasses.dataclass(frozen=True)
class SpectralBasis1D:
    """Eigenvalues and eigenvector data of the ``(K, n)`` pencil ``(𝒜, 𝒞)``.

    Eigenvectors are never stored explicitly; they are described by the
    interior eigenvectors ``e^(l)`` (for ``k = 0``) and by the interior
    vectors ``p_k^(l)`` (for ``k ≥ 1``), kept as their even and odd parts.
    """

    size: int
    """Number of elements ``K``."""
    order: int
    """Element order ``n``."""
    theta: np.ndarray
    """``θ_k = cos(πk/K)``, ``k = 1..K-1``."""
    eigenvalues: np.ndarray
    """``λ_k^(l)``, shape ``(K-1, n)``, ascending in ``l``."""
    interior: element_core.InteriorEigen
    p_even: np.ndarray
    """Even part of ``p_k^(l)``, shape ``(K-1, n, n-1)``."""
    p_odd: np.ndarray
    """Odd part of ``p_k^(l)``, shape ``(K-1, n, n-1)``."""
    norms: np.ndarray
    """``‖s_k^(l)‖²_𝒞``, shape ``(K-1, n)``."""
    b0: np.ndarray
    bn: np.ndarray

    @property
    def vectors(self) -> np.ndarray:
        """``p_k^(l)``, shape ``(K-1, n, n-1)``."""
        return self.p_even + self.p_odd

    @property
    def dof_count(self) -> int:
        return self.order * self.size - 1

    @property
    def flat_eigenvalues(self) -> np.ndarray:
        """Eigenvalues in the coefficient layout ``[λ₀^(l), λ_1^(l), …]``."""
        return np.concatenate([self.interior.values, self.eigenvalues.ravel()])

    @property
    def flat_norms(self) -> np.ndarray:
        """``‖s‖²_𝒞`` in the coefficient layout; ``K`` for the ``k = 0`` modes."""
        return np.concatenate(
            [np.full(self.order - 1, float(self.size)), self.norms.ravel()]
        )

    def physical_eigenvalues(self, step: float) -> np.ndarray:
        """``4h⁻²λ`` in the coefficient layout."""
        return 4.0 / step**2 * self.flat_eigenvalues


def norm_factors(
    pencil: element_core.LocalPencil, p: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """``b0 = c₀ + (C̃p + 2c)·p`` and ``bn = cₙ + (C̃p + 2c)·p̌``."""
    if p.shape[-1] == 0:
        shape = p.shape[:-1]
        return np.full(shape, pencil.c0), np.full(shape, pencil.cn)
    q = p @ pencil.c_interior + 2.0 * pencil.c
    b0 = pencil.c0 + (q * p).sum(axis=-1)
    bn = pencil.cn + (q * p[..., ::-1]).sum(axis=-1)
    return b0, bn


def _check_table(eigenvalues: np.ndarray, poles: np.ndarray, norms: np.ndarray):
    if not np.all(eigenvalues > 0):
        raise SecularSolveError("Non-positive eigenvalue in the spectral table")
    if eigenvalues.shape[1] > 1:
        gaps = np.diff(eigenvalues, axis=1)
        if np.any(gaps <= SEPARATION_RTOL * eigenvalues[:, 1:]):
            raise NonSimpleSpectrumError(
                "Eigenvalues of one spectral family are not separated"
            )
    if poles.size:
        dist = np.abs(eigenvalues[..., None] - poles)
        if np.any(dist <= element_core.POLE_RTOL * np.maximum(poles, 1.0)):
            raise NonSimpleSpectrumError(
                "An eigenvalue of the spectral table coincides with an "
                "interior eigenvalue"
            )
    if not np.all(norms > 0):
        raise SecularSolveError("Non-positive eigenvector norm in the spectral table")


def build_basis(
    size: int,
    order: int,
    eig: element_core.InteriorEigen,
    pencil: element_core.LocalPencil,
) -> SpectralBasis1D:
    """Solves all secular families of a ``(K, n)`` mesh.

    With ``p = Σ_l π_l e^(l)`` the norms are evaluated as
    ``K[c₀ + θcₙ + Σ_l (1 + σ_l θ)(π_l² + 2c^(l)π_l)]``, equal to
    ``K(b0 + bnθ)`` but without cancelling the large ``π_l`` of near-pole
    roots against each other.

    :raises NonSimpleSpectrumError: if a family is not simple.
    :raises SecularSolveError: if some family cannot be solved.
    """
    if size < 2:
        raise ValueError(f"At least two elements are required, got K={size}")
    if pencil.order != order:
        raise ValueError(f"Pencil has order {pencil.order}, expected {order}")
    start = time.perf_counter()
    theta = family_theta(size)
    half_angle = 0.5 * np.pi * np.arange(1, size) / size
    f = make_secular(eig, pencil, theta, half_angle=half_angle)
    origin, tau = solve_shifted(f)
    eigenvalues = origin + tau
    coef = element_core.resolvent_coefficients(eig, tau, anchor=origin)
    even = eig.parity > 0
    p_even = coef[..., even] @ eig.vectors[:, even].T
    p_odd = coef[..., ~even] @ eig.vectors[:, ~even].T
    w = coef * (coef + 2.0 * eig.c_coef)
    b0 = pencil.c0 + w.sum(axis=-1)
    bn = pencil.cn + (eig.parity * w).sum(axis=-1)
    norms = size * (
        (pencil.c0 + theta * pencil.cn)[:, None]
        + (f.weights[:, None, :] * w).sum(axis=-1)
    )
    _check_table(eigenvalues, eig.values, norms)
    logger.debug(
        "Spectral basis K=%d n=%d built in %.3fs",
        size,
        order,
        time.perf_counter() - start,
    )
    return SpectralBasis1D(
        size=size,
        order=order,
        theta=theta,
        eigenvalues=eigenvalues,
        interior=eig,
        p_even=p_even,
        p_odd=p_odd,
        norms=norms,
        b0=b0,
        bn=bn,
    )


def linear_element_eigenvalue(theta) -> np.ndarray:
    """Closed-form root ``(3/2)(1-θ)/(2+θ)`` of the ``n = 1`` family."""
    theta = np.asarray(theta, dtype=float)
    return 1.5 * (1.0 - theta) / (2.0 + theta)


def continuous_eigenvalue(length: float) -> float:
    """Smallest eigenvalue ``(π/X)²`` of ``-u''`` on ``(0, X)``."""
    return (math.pi / length) ** 2
