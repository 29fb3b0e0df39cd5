"""Desk-scale oracle and invariant checks run by ``fftfem --cmd selftest``."""

import dataclasses
import logging
import math
import os
import tempfile
import time
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg

from . import (
    assembly,
    element_core,
    fn_transform,
    grid_field,
    poisson_solver,
    spectral_basis,
    spectral_cache,
    trig_kernels,
)
from .config import Mesh1D, ProblemSpec

logger = logging.getLogger(__name__)

CheckFunc = Callable[["SelftestContext"], None]


@dataclasses.dataclass
class SelftestContext:
    cache_dir: Optional[str] = None
    threads: Optional[int] = None
    rng: np.random.Generator = dataclasses.field(
        default_factory=lambda: np.random.default_rng(0)
    )


@dataclasses.dataclass(frozen=True)
class Check:
    module: str
    invariant: str
    func: CheckFunc


@dataclasses.dataclass(frozen=True)
class CheckResult:
    module: str
    invariant: str
    passed: bool
    seconds: float
    detail: str = ""


CHECKS: List[Check] = []


def register(module: str, invariant: str) -> Callable[[CheckFunc], CheckFunc]:
    def decorator(func: CheckFunc) -> CheckFunc:
        CHECKS.append(Check(module, invariant, func))
        return func

    return decorator


def dense_spectrum(size: int, order: int) -> np.ndarray:
    """Generalized eigenvalues of the assembled ``(𝒜, 𝒞)`` pencil."""
    return scipy.linalg.eigh(
        grid_field.dense_matrix(size, order, "stiffness"),
        grid_field.dense_matrix(size, order, "mass"),
        eigvals_only=True,
    )


def all_eigenvalues(basis: spectral_basis.SpectralBasis1D) -> np.ndarray:
    return np.sort(basis.flat_eigenvalues)


INTERIOR_SPECTRA = {
    2: [2.5],
    3: [2.5, 10.5],
    4: [14 - math.sqrt(133), 10.5, 14 + math.sqrt(133)],
    5: [
        30 - 9 * math.sqrt(5),
        14 - math.sqrt(133),
        14 + math.sqrt(133),
        30 + 9 * math.sqrt(5),
    ],
}


@register("element_core", "interior spectra closed forms")
def _interior_spectra(ctx: SelftestContext) -> None:
    for n, expected in INTERIOR_SPECTRA.items():
        got = element_core.reference_element(n).eigen.values
        np.testing.assert_allclose(got, np.sort(expected), rtol=0, atol=1e-12)


@register("element_core", "parity alternates with even first mode")
def _parity(ctx: SelftestContext) -> None:
    for n in range(2, 10):
        parity = element_core.reference_element(n).eigen.parity
        expected = [(-1) ** j for j in range(n - 1)]
        np.testing.assert_array_equal(parity, expected)


@register("trig_kernels", "fast transforms match reference sums")
def _transforms(ctx: SelftestContext) -> None:
    for size in (2, 4, 8, 16, 64, 256):
        for kind in trig_kernels.TRANSFORM_KINDS:
            plan = trig_kernels.plan_transform(kind, size)
            x = ctx.rng.standard_normal((3, plan.input_length))
            ref = x @ trig_kernels.naive_matrix(kind, size).T
            np.testing.assert_allclose(
                plan(x), ref, rtol=0, atol=1e-12 * np.abs(ref).max()
            )


@register("trig_kernels", "reference fallback for forced and unsupported lengths")
def _fallback(ctx: SelftestContext) -> None:
    cases: Tuple[Tuple[int, trig_kernels.Method], ...] = ((6, "naive"), (7, "auto"))
    for size, method in cases:
        for kind in trig_kernels.TRANSFORM_KINDS:
            plan = trig_kernels.plan_transform(kind, size, method)
            assert plan.method == "naive"
            x = ctx.rng.standard_normal(plan.input_length)
            ref = trig_kernels.naive_matrix(kind, size) @ x
            np.testing.assert_allclose(plan(x), ref, rtol=1e-13, atol=1e-13)
    basis = spectral_cache.load_basis(6, 2, None)
    c = ctx.rng.standard_normal(basis.dof_count)
    back = fn_transform.fn_direct(fn_transform.fn_inverse(c, basis), basis)
    np.testing.assert_allclose(back, c, rtol=0, atol=1e-11 * np.abs(c).max())


@register("spectral_basis", "dense pencil eigenvalues")
def _dense_oracle(ctx: SelftestContext) -> None:
    for size, order in ((4, 2), (4, 3), (8, 2)):
        basis = spectral_cache.load_basis(size, order, ctx.cache_dir)
        np.testing.assert_allclose(
            all_eigenvalues(basis), dense_spectrum(size, order), rtol=1e-9
        )


@register("spectral_basis", "C-orthogonality of eigenvectors")
def _orthogonality(ctx: SelftestContext) -> None:
    for size, order in ((4, 3), (8, 2)):
        basis = spectral_cache.load_basis(size, order, ctx.cache_dir)
        modes = [(0, m) for m in range(1, order)] + [
            (k, m) for k in range(1, size) for m in range(1, order + 1)
        ]
        s = np.array([fn_transform.eigenvector(basis, k, m) for k, m in modes])
        gram = s @ grid_field.dense_matrix(size, order, "mass") @ s.T
        np.testing.assert_allclose(gram, np.diag(basis.flat_norms), atol=1e-10)


@register("fn_transform", "direct transform inverts the inverse transform")
def _round_trip(ctx: SelftestContext) -> None:
    for size in (8, 64):
        for order in (1, 2, 5):
            basis = spectral_cache.load_basis(size, order, ctx.cache_dir)
            c = ctx.rng.standard_normal((4, basis.dof_count))
            back = fn_transform.fn_direct(fn_transform.fn_inverse(c, basis), basis)
            np.testing.assert_allclose(back, c, rtol=0, atol=1e-11 * np.abs(c).max())


@register("grid_field", "operators match assembled matrices")
def _operators(ctx: SelftestContext) -> None:
    for size, order in ((4, 1), (4, 3), (8, 4)):
        length = size * order - 1
        v = ctx.rng.standard_normal((2, length))
        for which in grid_field.OPERATORS:
            dense = grid_field.dense_matrix(size, order, which)
            got = grid_field.apply_operator_1d(v, -1, order, which)
            np.testing.assert_allclose(got, v @ dense.T, rtol=0, atol=1e-12)


@register("poisson_solver", "algorithms agree with the dense system")
def _solvers(ctx: SelftestContext) -> None:
    for elements, order in ((4, 2), (8, 3)):
        meshes = (Mesh1D(elements=elements, order=order),) * 2
        f = ctx.rng.standard_normal((elements * order - 1,) * 2)
        results = []
        for algorithm in ("a", "b"):
            problem = ProblemSpec(meshes=meshes, alpha=1.0, algorithm=algorithm)
            plan = poisson_solver.build_plan(problem, ctx.threads, ctx.cache_dir)
            v = poisson_solver.solve(plan, f)
            assert poisson_solver.residual_norm(plan, v, f) <= 1e-9
            results.append(v)
        np.testing.assert_allclose(
            results[0], results[1], rtol=0, atol=1e-9 * np.abs(results[0]).max()
        )
        if elements == 4:
            dense = poisson_solver.assemble_dense_system(problem)
            ref = np.linalg.solve(dense, f.ravel()).reshape(f.shape)
            np.testing.assert_allclose(
                results[0], ref, rtol=0, atol=1e-9 * np.abs(ref).max()
            )


@register("assembly", "1D nodal exactness for polynomial loads")
def _nodal_exactness(ctx: SelftestContext) -> None:
    for order in (2, 3, 4):
        source = assembly.PolynomialSource([[1.0, -2.0, 3.0][: order - 1]])
        exact = source.dirichlet_solution(1.0)
        for elements in (4, 16):
            mesh = Mesh1D(elements=elements, order=order)
            problem = ProblemSpec(meshes=(mesh,), alpha=0.0)
            plan = poisson_solver.build_plan(problem, ctx.threads, ctx.cache_dir)
            v = poisson_solver.solve(plan, assembly.assemble_rhs(source, [mesh]))
            nodes, _ = grid_field.split_field(v, order)
            x = np.arange(1, elements) * mesh.step
            np.testing.assert_allclose(nodes, exact(x), rtol=0, atol=1e-11)


@register("assembly", "manufactured right-hand side")
def _manufactured(ctx: SelftestContext) -> None:
    case = assembly.manufactured_case_2d()
    points = ctx.rng.uniform(0.1, 0.9, size=(8, 2))
    assert assembly.laplacian_defect(case, points) <= 1e-5


@register("spectral_cache", "corrupted files are detected and rebuilt")
def _cache_corruption(ctx: SelftestContext) -> None:
    with tempfile.TemporaryDirectory() as cache_dir:
        first = spectral_cache.load_basis(8, 3, cache_dir)
        path = spectral_cache.cache_path(cache_dir, 8, 3)
        with open(path, "r+b") as f:
            f.seek(-1, os.SEEK_END)
            last = f.read(1)
            f.seek(-1, os.SEEK_END)
            f.write(bytes([last[0] ^ 0xFF]))
        rebuilt = spectral_cache.load_basis(8, 3, cache_dir)
        cached = spectral_cache.load_basis(8, 3, cache_dir)
        for basis in (rebuilt, cached):
            np.testing.assert_array_equal(basis.eigenvalues, first.eigenvalues)
            np.testing.assert_array_equal(basis.vectors, first.vectors)


def run_checks(
    cache_dir: Optional[str] = None,
    threads: Optional[int] = None,
    checks: Optional[List[Check]] = None,
) -> List[CheckResult]:
    """Runs every registered check, never stopping at the first failure."""
    ctx = SelftestContext(cache_dir=cache_dir, threads=threads)
    results = []
    for check in CHECKS if checks is None else checks:
        start = time.perf_counter()
        try:
            check.func(ctx)
        except Exception as e:
            detail = f"{type(e).__name__}: {e}".strip()
            logger.error("FAIL %s: %s\n%s", check.module, check.invariant, detail)
            results.append(
                CheckResult(
                    check.module,
                    check.invariant,
                    False,
                    time.perf_counter() - start,
                    detail.splitlines()[0] if detail else "",
                )
            )
            continue
        seconds = time.perf_counter() - start
        logger.info("ok   %s: %s (%.2fs)", check.module, check.invariant, seconds)
        results.append(CheckResult(check.module, check.invariant, True, seconds))
    return results
