"""Direct solvers of the scaled tensor-product system.

The discrete problem on ``N`` axes reads

.. code-block:: text

   (4h₁⁻²𝒜₁𝒞₂…𝒞_N + … + 𝒞₁…𝒞_{N-1}4h_N⁻²𝒜_N + α𝒞₁…𝒞_N) v = f^h

Algorithm ``"a"`` diagonalizes every axis with the ``F_n`` transforms and
divides by the spectral denominators.  Algorithm ``"b"`` diagonalizes axes
``2..N`` and solves a banded shifted system along axis 1 for every spectral
index of the remaining axes.
"""

import concurrent.futures
import contextlib
import dataclasses
import functools
import logging
import threading
import time
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import scipy.linalg

from . import fn_transform, grid_field, spectral_cache
from .config import ProblemSpec
from .errors import IndefiniteOperatorError
from .spectral_basis import SpectralBasis1D

logger = logging.getLogger(__name__)

FACTOR_CACHE_BYTES = 256 * 1024 * 1024

PHASES = ("mass", "transforms", "spectral", "banded")


@dataclasses.dataclass
class SolveStats:
    """Wall time per solver phase, accumulated over solves."""

    seconds: Dict[str, float] = dataclasses.field(
        default_factory=lambda: {p: 0.0 for p in PHASES}
    )
    counter: fn_transform.TransformCounter = dataclasses.field(
        default_factory=fn_transform.TransformCounter
    )
    solves: int = 0

    @contextlib.contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + (
                time.perf_counter() - start
            )

    @property
    def total(self) -> float:
        return sum(self.seconds.values())


@dataclasses.dataclass
class SolverPlan:
    """Everything a solve needs that depends only on the problem.

    A plan can be reused for any number of right-hand sides.
    """

    problem: ProblemSpec
    bases: Tuple[SpectralBasis1D, ...]
    threads: Optional[int] = None
    mass_shortcut: bool = True
    """Feed ``f^h`` straight into `fn_transform.fn_direct_from_mass` instead of
    solving with ``𝒞_i`` and applying it again.  Both paths give the same
    coefficients."""
    factor_cache_bytes: int = FACTOR_CACHE_BYTES
    setup_seconds: float = 0.0
    mass_factors: Tuple[grid_field.BandedFactor, ...] = ()
    _factors: Dict[float, grid_field.BandedFactor] = dataclasses.field(
        default_factory=dict, repr=False
    )
    _factor_bytes: int = 0
    _lock: threading.Lock = dataclasses.field(
        default_factory=threading.Lock, repr=False
    )

    @property
    def dims(self) -> int:
        return self.problem.dims

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.problem.shape

    def physical_eigenvalues(self, axis: int) -> np.ndarray:
        return self.bases[axis].physical_eigenvalues(self.problem.meshes[axis].step)

    def shifts(self) -> np.ndarray:
        """``μ = Σ_{i≥2} 4h_i⁻²λ_i + α`` over the spectral axes ``2..N``."""
        mu = np.full((), self.problem.alpha)
        for axis in range(1, self.dims):
            mu = np.add.outer(mu, self.physical_eigenvalues(axis))
        return np.asarray(mu)

    def shifted_factor(
        self, mu: float, index: Optional[Tuple[int, ...]] = None
    ) -> grid_field.BandedFactor:
        """Factor of ``4h₁⁻²𝒜₁ + μ𝒞₁``, cached while within the memory budget."""
        with self._lock:
            factor = self._factors.get(mu)
        if factor is not None:
            return factor
        factor = grid_field.factor_1d(
            self.problem.meshes[0], mu, "shifted", axis=0, index=index
        )
        with self._lock:
            if self._factor_bytes + factor.nbytes <= self.factor_cache_bytes:
                self._factors[mu] = factor
                self._factor_bytes += factor.nbytes
        return factor

    @property
    def cached_factors(self) -> int:
        return len(self._factors)


def _check_denominators(plan: SolverPlan) -> None:
    """Raises `IndefiniteOperatorError` if some ``D = Σ 4h_i⁻²λ_i + α <= 0``."""
    index = []
    smallest = plan.problem.alpha
    for axis in range(plan.dims):
        eig = plan.physical_eigenvalues(axis)
        i = int(np.argmin(eig))
        index.append(i)
        smallest += float(eig[i])
    if not smallest > 0:
        raise IndefiniteOperatorError(smallest, tuple(index))


def build_plan(
    problem: ProblemSpec,
    threads: Optional[int] = None,
    cache_dir: Optional[str] = None,
    mass_shortcut: bool = True,
    factor_cache_bytes: int = FACTOR_CACHE_BYTES,
) -> SolverPlan:
    """Builds the spectral bases (and mass factors) of ``problem``.

    :param cache_dir: Spectral-basis cache directory; `None` disables it.
    :raises IndefiniteOperatorError: if a spectral denominator is not positive.
    """
    start = time.perf_counter()
    built: Dict[Tuple[int, int], SpectralBasis1D] = {}
    bases: List[SpectralBasis1D] = []
    for mesh in problem.meshes:
        key = (mesh.elements, mesh.order)
        if key not in built:
            built[key] = spectral_cache.load_basis(
                mesh.elements, mesh.order, cache_dir
            )
        bases.append(built[key])
    mass_factors: Tuple[grid_field.BandedFactor, ...] = ()
    if not mass_shortcut:
        mass_factors = tuple(
            grid_field.factor_1d(mesh, which="mass", axis=axis)
            for axis, mesh in enumerate(problem.meshes)
        )
    plan = SolverPlan(
        problem=problem,
        bases=tuple(bases),
        threads=threads,
        mass_shortcut=mass_shortcut,
        factor_cache_bytes=factor_cache_bytes,
        mass_factors=mass_factors,
    )
    _check_denominators(plan)
    plan.setup_seconds = time.perf_counter() - start
    logger.info(
        "Solver plan for shape %s (algorithm %s) built in %.3fs",
        problem.shape,
        problem.algorithm,
        plan.setup_seconds,
    )
    return plan


def _to_coefficients(
    plan: SolverPlan, f: np.ndarray, axes: range, stats: SolveStats
) -> np.ndarray:
    x = f
    if not plan.mass_shortcut:
        with stats.phase("mass"):
            for axis in axes:
                x = grid_field.solve_1d(
                    plan.mass_factors[axis], x, axis, threads=plan.threads
                )
    with stats.phase("transforms"):
        for axis in axes:
            if plan.mass_shortcut:
                x = fn_transform.fn_direct_from_mass(
                    x, plan.bases[axis], axis, plan.threads, stats.counter
                )
            else:
                x = fn_transform.fn_direct(
                    x, plan.bases[axis], axis, plan.threads, stats.counter
                )
    return x


def _to_field(
    plan: SolverPlan, coeffs: np.ndarray, axes: range, stats: SolveStats
) -> np.ndarray:
    x = coeffs
    with stats.phase("transforms"):
        for axis in axes:
            x = fn_transform.fn_inverse(
                x, plan.bases[axis], axis, plan.threads, stats.counter
            )
    return x


def _divide_by_denominators(plan: SolverPlan, x: np.ndarray) -> None:
    rest = np.asarray(plan.shifts())
    first = plan.physical_eigenvalues(0)
    step = max(1, grid_field.CHUNK_BYTES // (8 * max(rest.size, 1)))
    for i0 in range(0, first.size, step):
        block = first[i0 : i0 + step].reshape((-1,) + (1,) * rest.ndim)
        x[i0 : i0 + step] /= block + rest


def solve_full_diag(
    plan: SolverPlan, f_h: np.ndarray, stats: Optional[SolveStats] = None
) -> np.ndarray:
    """Algorithm (a): transforms along every axis and spectral division."""
    stats = stats or SolveStats()
    f_h = grid_field.check_field(f_h, plan.problem.meshes)
    axes = range(plan.dims)
    x = _to_coefficients(plan, f_h, axes, stats)
    with stats.phase("spectral"):
        if not x.flags.writeable or x is f_h:
            x = x.copy()
        _divide_by_denominators(plan, x)
    v = _to_field(plan, x, axes, stats)
    stats.solves += 1
    return np.ascontiguousarray(v)


def _solve_group(
    plan: SolverPlan,
    mat: np.ndarray,
    mu: float,
    cols: np.ndarray,
    rest_shape: Tuple[int, ...],
) -> None:
    index: Tuple[int, ...] = (0,)
    if rest_shape:
        index += tuple(int(i) for i in np.unravel_index(cols[0], rest_shape))
    factor = plan.shifted_factor(mu, index)
    mat[:, cols] = scipy.linalg.cho_solve_banded(
        (factor.cholesky, False), mat[:, cols], check_finite=False
    )


def solve_partial_diag(
    plan: SolverPlan, f_h: np.ndarray, stats: Optional[SolveStats] = None
) -> np.ndarray:
    """Algorithm (b): transforms along axes ``2..N`` and banded solves along
    axis 1, one per distinct spectral shift."""
    stats = stats or SolveStats()
    f_h = grid_field.check_field(f_h, plan.problem.meshes)
    spectral_axes = range(1, plan.dims)
    x = _to_coefficients(plan, f_h, spectral_axes, stats)
    with stats.phase("banded"):
        mu = plan.shifts()
        rest_shape = mu.shape
        mat = np.array(x, dtype=float, order="C").reshape(x.shape[0], -1)
        values, inverse = np.unique(mu.ravel(), return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        bounds = np.cumsum(np.bincount(inverse, minlength=values.size))[:-1]
        groups = list(zip(values, np.split(order, bounds)))
        logger.debug(
            "Banded phase: %d spectral indices, %d distinct shifts",
            mu.size,
            values.size,
        )
        threads = plan.threads or 1
        if threads > 1 and len(groups) > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
                futures = [
                    ex.submit(_solve_group, plan, mat, float(m), c, rest_shape)
                    for m, c in groups
                ]
                for future in futures:
                    future.result()
        else:
            for m, c in groups:
                _solve_group(plan, mat, float(m), c, rest_shape)
        x = mat.reshape(x.shape)
    v = _to_field(plan, x, spectral_axes, stats)
    stats.solves += 1
    return np.ascontiguousarray(v)


def solve(
    plan: SolverPlan, f_h: np.ndarray, stats: Optional[SolveStats] = None
) -> np.ndarray:
    """Solves with the algorithm selected by ``plan.problem.algorithm``."""
    if plan.problem.algorithm == "a":
        return solve_full_diag(plan, f_h, stats)
    return solve_partial_diag(plan, f_h, stats)


def _mass_product(
    problem: ProblemSpec, v: np.ndarray, start: int, threads: Optional[int]
) -> np.ndarray:
    for axis in range(start, problem.dims):
        v = grid_field.apply_operator_1d(
            v, axis, problem.meshes[axis].order, "mass", threads
        )
    return v


def apply_system(
    problem: ProblemSpec,
    v: np.ndarray,
    threads: Optional[int] = None,
    start: int = 0,
) -> np.ndarray:
    """Left-hand side of the scaled system restricted to axes ``start..N``."""
    if start == problem.dims:
        return problem.alpha * v
    mesh = problem.meshes[start]
    stiff = grid_field.apply_operator_1d(
        _mass_product(problem, v, start + 1, threads),
        start,
        mesh.order,
        "stiffness",
        threads,
    )
    rest = grid_field.apply_operator_1d(
        apply_system(problem, v, threads, start + 1),
        start,
        mesh.order,
        "mass",
        threads,
    )
    return (4.0 / mesh.step**2) * stiff + rest


def residual_norm(
    plan: SolverPlan, v: np.ndarray, f_h: np.ndarray
) -> float:
    """``‖LHS(v) - f^h‖₂ / ‖f^h‖₂``; the absolute norm when ``f^h = 0``."""
    v = grid_field.check_field(v, plan.problem.meshes)
    f_h = grid_field.check_field(f_h, plan.problem.meshes)
    r = np.linalg.norm(apply_system(plan.problem, v, plan.threads) - f_h)
    scale = np.linalg.norm(f_h)
    if scale == 0:
        return float(r)
    return float(r / scale)


def assemble_dense_system(problem: ProblemSpec) -> np.ndarray:
    """Dense Kronecker matrix of the scaled system; for small reference cases."""
    mass = [
        grid_field.dense_matrix(m.elements, m.order, "mass") for m in problem.meshes
    ]
    total = problem.alpha * functools.reduce(np.kron, mass)
    for axis, mesh in enumerate(problem.meshes):
        factors = list(mass)
        factors[axis] = (4.0 / mesh.step**2) * grid_field.dense_matrix(
            mesh.elements, mesh.order, "stiffness"
        )
        total = total + functools.reduce(np.kron, factors)
    return total
