"""Order-n Lagrange reference element on ``[-1, 1]``.

Builds the Lagrange basis on the equispaced nodes ``ξ_k = -1 + 2k/n``, the
local stiffness and mass matrices, their split into corner, edge and interior
blocks, and the eigen-decomposition of the interior (bubble) pencil
``Ã e = λ C̃ e``.

The interior pencil commutes with the index reversal ``P``, so it is solved
separately on the even and odd subspaces.  Every interior eigenvector is thus
exactly even or exactly odd.
"""

import dataclasses
import functools
import logging
import math
from typing import Literal, Optional

import numpy as np
import scipy.linalg

from .config import MAX_ORDER
from .errors import InvalidOrderError, NonSimpleSpectrumError, PoleProximityError

logger = logging.getLogger(__name__)

SIMPLE_SPECTRUM_RTOL = 1e-10
POLE_RTOL = 1e-12


@dataclasses.dataclass(frozen=True)
class BasisTable:
    """Lagrange basis of order ``n`` and its values at a Gauss rule."""

    order: int
    nodes: np.ndarray
    """Element nodes ``ξ_k``, shape ``(n+1,)``."""
    weights: np.ndarray
    """Barycentric weights of the nodes."""
    differentiation: np.ndarray
    """``D[i, l] = e_l'(ξ_i)``."""
    quad_points: np.ndarray
    quad_weights: np.ndarray
    values: np.ndarray
    """``values[q, l] = e_l(x_q)`` at the Gauss points."""
    derivatives: np.ndarray
    """``derivatives[q, l] = e_l'(x_q)`` at the Gauss points."""

    def evaluate(self, x) -> np.ndarray:
        """Values of all basis functions, shape ``(len(x), n+1)``."""
        return _barycentric_values(self.nodes, self.weights, x)

    def evaluate_derivative(self, x) -> np.ndarray:
        return self.evaluate(x) @ self.differentiation


def _barycentric_values(nodes: np.ndarray, weights: np.ndarray, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = weights[None, :] / diff
        values = terms / terms.sum(axis=1, keepdims=True)
    on_node = exact.any(axis=1)
    values[on_node] = exact[on_node].astype(float)
    return values


def _check_order(n: int) -> None:
    if not 1 <= n <= MAX_ORDER:
        raise InvalidOrderError(f"Element order must lie in [1, {MAX_ORDER}], got {n}")


@functools.lru_cache(maxsize=None)
def build_basis(n: int, quadrature_points: Optional[int] = None) -> BasisTable:
    """Lagrange basis of order ``n`` evaluated at a Gauss–Legendre rule.

    :param n: Element order, ``1 <= n <= 16``.
    :param quadrature_points: Number of Gauss points; defaults to ``n + 1``,
        which integrates both ``e_k' e_l'`` and ``e_k e_l`` exactly.
    """
    _check_order(n)
    m = n + 1 if quadrature_points is None else quadrature_points
    if m < n:
        raise ValueError(f"At least {n} quadrature points are needed, got {m}")
    nodes = -1.0 + 2.0 * np.arange(n + 1) / n
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    weights = 1.0 / diff.prod(axis=1)

    d = (weights[None, :] / weights[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))

    points, quad_weights = np.polynomial.legendre.leggauss(m)
    values = _barycentric_values(nodes, weights, points)
    return BasisTable(
        order=n,
        nodes=nodes,
        weights=weights,
        differentiation=d,
        quad_points=points,
        quad_weights=quad_weights,
        values=values,
        derivatives=values @ d,
    )


@dataclasses.dataclass(frozen=True)
class LocalPencil:
    """Reference stiffness ``A`` and mass ``C`` with their block split.

    Blocks follow the layout ``[[a0, aᵀ, an], [a, Ã, ǎ], [an, ǎᵀ, a0]]``,
    where ``ǎ`` is ``a`` with reversed entries.
    """

    order: int
    stiffness: np.ndarray
    mass: np.ndarray

    @property
    def a0(self) -> float:
        return float(self.stiffness[0, 0])

    @property
    def an(self) -> float:
        return float(self.stiffness[0, -1])

    @property
    def a(self) -> np.ndarray:
        return self.stiffness[1:-1, 0]

    @property
    def a_rev(self) -> np.ndarray:
        return self.stiffness[1:-1, -1]

    @property
    def a_interior(self) -> np.ndarray:
        return self.stiffness[1:-1, 1:-1]

    @property
    def c0(self) -> float:
        return float(self.mass[0, 0])

    @property
    def cn(self) -> float:
        return float(self.mass[0, -1])

    @property
    def c(self) -> np.ndarray:
        return self.mass[1:-1, 0]

    @property
    def c_rev(self) -> np.ndarray:
        return self.mass[1:-1, -1]

    @property
    def c_interior(self) -> np.ndarray:
        return self.mass[1:-1, 1:-1]


def _gram(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``G[k, l] = Σ_q w_q f[q, k] f[q, l]`` with compensated summation."""
    size = f.shape[1]
    terms = w[:, None, None] * f[:, :, None] * f[:, None, :]
    g = np.empty((size, size))
    for k in range(size):
        for j in range(k, size):
            g[k, j] = g[j, k] = math.fsum(terms[:, k, j])
    return g


def _reflect_symmetric(m: np.ndarray) -> np.ndarray:
    """``(M + JMJ)/2``, exactly invariant under reversing the nodes."""
    return 0.5 * (m + m[::-1, ::-1])


def local_matrices(basis: BasisTable) -> LocalPencil:
    return LocalPencil(
        order=basis.order,
        stiffness=_reflect_symmetric(_gram(basis.derivatives, basis.quad_weights)),
        mass=_reflect_symmetric(_gram(basis.values, basis.quad_weights)),
    )


@dataclasses.dataclass(frozen=True)
class InteriorEigen:
    """Eigenpairs of the interior pencil, sorted by ascending eigenvalue.

    Vectors are ``C̃``-normalized, each one exactly even (``parity = +1``) or
    odd (``parity = -1``), with the first non-negligible entry positive.
    """

    values: np.ndarray
    """``λ₀^(l)``, shape ``(n-1,)``."""
    vectors: np.ndarray
    """Column ``l`` holds ``e^(l)``, shape ``(n-1, n-1)``."""
    parity: np.ndarray
    """``+1`` for even and ``-1`` for odd eigenvectors."""
    a_coef: np.ndarray
    """``a^(l) = a · e^(l)``."""
    c_coef: np.ndarray
    """``c^(l) = c · e^(l)``."""
    a_rev_coef: np.ndarray
    """``ǎ^(l) = ǎ · e^(l)``, equal to ``parity * a^(l)``."""
    c_rev_coef: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


def parity_bases(n: int):
    """Orthonormal bases of the even and odd subspaces of ``R^(n-1)``.

    Returns ``(Q_e, Q_o)`` of shapes ``(n-1, ceil((n-1)/2))`` and
    ``(n-1, floor((n-1)/2))``.
    """
    dim = n - 1
    even = []
    odd = []
    s = math.sqrt(0.5)
    for i in range(dim):
        j = dim - 1 - i
        if i > j:
            break
        if i == j:
            v = np.zeros(dim)
            v[i] = 1.0
            even.append(v)
            continue
        v = np.zeros(dim)
        v[i] = v[j] = s
        even.append(v)
        v = np.zeros(dim)
        v[i] = s
        v[j] = -s
        odd.append(v)
    q_e = np.array(even).T if even else np.zeros((dim, 0))
    q_o = np.array(odd).T if odd else np.zeros((dim, 0))
    return q_e, q_o


def check_simple_spectrum(values: np.ndarray, what: str) -> None:
    """Raises `NonSimpleSpectrumError` if sorted ``values`` are not separated."""
    for lo, hi in zip(values[:-1], values[1:]):
        scale = max(abs(lo), abs(hi), 1.0)
        if hi - lo <= SIMPLE_SPECTRUM_RTOL * scale:
            raise NonSimpleSpectrumError(
                f"{what} has a multiple eigenvalue near {lo!r} (next: {hi!r})"
            )


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        tol = 1e-12 * np.abs(col).max()
        first = col[np.abs(col) > tol][0]
        if first < 0:
            vectors[:, j] = -col
    return vectors


def interior_eigen(pencil: LocalPencil) -> InteriorEigen:
    """Eigen-decomposition of ``Ã e = λ C̃ e`` split by parity."""
    n = pencil.order
    if n < 2:
        empty = np.zeros(0)
        return InteriorEigen(
            values=empty,
            vectors=np.zeros((0, 0)),
            parity=np.zeros(0, dtype=int),
            a_coef=empty,
            c_coef=empty,
            a_rev_coef=empty,
            c_rev_coef=empty,
        )
    a_int = pencil.a_interior
    c_int = pencil.c_interior
    values = []
    vectors = []
    parity = []
    for q, sign in zip(parity_bases(n), (1, -1)):
        if q.shape[1] == 0:
            continue
        w, v = scipy.linalg.eigh(q.T @ a_int @ q, q.T @ c_int @ q)
        values.append(w)
        vectors.append(q @ v)
        parity.append(np.full(w.shape, sign))
    all_values = np.concatenate(values)
    order = np.argsort(all_values, kind="stable")
    all_values = all_values[order]
    all_vectors = _fix_signs(np.concatenate(vectors, axis=1)[:, order])
    all_parity = np.concatenate(parity)[order]
    check_simple_spectrum(all_values, f"Interior spectrum of order {n}")
    logger.debug("Interior spectrum of order %d: %r", n, all_values)
    return InteriorEigen(
        values=all_values,
        vectors=all_vectors,
        parity=all_parity,
        a_coef=pencil.a @ all_vectors,
        c_coef=pencil.c @ all_vectors,
        a_rev_coef=pencil.a_rev @ all_vectors,
        c_rev_coef=pencil.c_rev @ all_vectors,
    )


def full_element_spectrum(pencil: LocalPencil, check: bool = True) -> np.ndarray:
    """Sorted generalized eigenvalues of ``(A, C)``; the smallest is zero.

    :raises NonSimpleSpectrumError: if ``check`` and the spectrum is not simple.
    """
    values = np.sort(
        scipy.linalg.eigh(pencil.stiffness, pencil.mass, eigvals_only=True)
    )
    if check:
        check_simple_spectrum(values, f"Element spectrum of order {pencil.order}")
    return values


def _pole_distance(eig: InteriorEigen, lam: np.ndarray, anchor) -> np.ndarray:
    """``λ - λ₀^(l)`` for ``λ = anchor + lam``, formed as ``lam + (anchor - λ₀)``."""
    anchor = np.zeros_like(lam) if anchor is None else np.asarray(anchor, dtype=float)
    dist = lam[..., None] + (anchor[..., None] - eig.values)
    close = np.abs(dist) <= POLE_RTOL * np.maximum(np.abs(eig.values), 1.0)
    if close.any():
        bad = np.broadcast_to((anchor + lam)[..., None], dist.shape)[close]
        raise PoleProximityError(
            f"lambda={bad[0]!r} lies on the interior spectrum {eig.values!r}"
        )
    return dist


def resolvent_coefficients(eig: InteriorEigen, lam, anchor=None) -> np.ndarray:
    """Coefficients ``π_l = (a^(l) - λc^(l))/(λ - λ₀^(l))`` of ``p = Σ_l π_l e^(l)``.

    With ``anchor`` given, ``λ = anchor + lam`` and both differences are
    formed relative to ``anchor``, which keeps ``λ - λ₀`` accurate when
    ``anchor`` is the pole ``λ₀`` itself.
    """
    lam = np.asarray(lam, dtype=float)
    if eig.size == 0:
        return np.zeros(lam.shape + (0,))
    dist = _pole_distance(eig, lam, anchor)
    if anchor is None:
        base = eig.a_coef
    else:
        anchor = np.asarray(anchor, dtype=float)
        base = eig.a_coef - anchor[..., None] * eig.c_coef
    return (base - lam[..., None] * eig.c_coef) / dist


def resolvent_interior(
    eig: InteriorEigen,
    pencil: LocalPencil,
    lam,
    form: Literal["poles", "shifted"] = "poles",
) -> np.ndarray:
    """Solves ``G̃(λ) p = -g(λ)`` through the interior eigen-expansion.

    ``lam`` may be a scalar or an array; the result has shape
    ``lam.shape + (n-1,)``.  ``form="shifted"`` uses the equivalent expansion
    with residues ``a^(l) - λ₀^(l) c^(l)`` and the correction ``-C̃⁻¹c``.
    """
    lam = np.asarray(lam, dtype=float)
    if eig.size == 0:
        return np.zeros(lam.shape + (0,))
    if form == "poles":
        return resolvent_coefficients(eig, lam) @ eig.vectors.T
    coef = (eig.a_coef - eig.values * eig.c_coef) / _pole_distance(eig, lam, None)
    correction = scipy.linalg.solve(pencil.c_interior, pencil.c, assume_a="pos")
    return coef @ eig.vectors.T - correction


@dataclasses.dataclass(frozen=True)
class ReferenceElement:
    """All reference-element data of one order."""

    basis: BasisTable
    pencil: LocalPencil
    eigen: InteriorEigen

    @property
    def order(self) -> int:
        return self.basis.order


@functools.lru_cache(maxsize=None)
def reference_element(n: int) -> ReferenceElement:
    """Cached reference element of order ``n``.

    :raises NonSimpleSpectrumError: if the interior or the full element
        spectrum of order ``n`` is not simple.
    """
    basis = build_basis(n)
    pencil = local_matrices(basis)
    full_element_spectrum(pencil)
    return ReferenceElement(basis=basis, pencil=pencil, eigen=interior_eigen(pencil))
