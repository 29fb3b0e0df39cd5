"""Load vectors, manufactured solutions and error measurement.

The scaled load vector of the tensor-product system is

.. code-block:: text

   f^h_φ = Π_i (2/h_i) ∫_Ω f φ dx = Σ_q Π_i w_{q_i} e_{l_i}(ξ_{q_i}) f(x_q)

so the element Jacobians cancel and ``f^h`` is obtained by contracting the
values of ``f`` at the tensor Gauss grid with one sparse matrix per axis.
"""

import dataclasses
import functools
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.polynomial
import scipy.sparse

from . import element_core, grid_field
from .config import Mesh1D

logger = logging.getLogger(__name__)

FD_STEP = 1e-4


@dataclasses.dataclass(frozen=True)
class ScalarFunctionND:
    """A real function on a box, evaluated on broadcastable coordinate arrays.

    ``func(x1, ..., xN)`` receives one array per axis (shaped for
    broadcasting, as produced by `numpy.ix_`) and returns the values.
    """

    func: Callable[..., np.ndarray]
    dims: int
    description: str = ""
    exact_solution: bool = False
    """Whether the function is the exact solution of a test problem."""

    def __call__(self, *coords) -> np.ndarray:
        if len(coords) != self.dims:
            raise ValueError(
                f"{self.description or 'function'} takes {self.dims} coordinates, "
                f"got {len(coords)}"
            )
        return np.asarray(self.func(*coords), dtype=float)


def _broadcast_eval(f: ScalarFunctionND, coords: Sequence[np.ndarray]) -> np.ndarray:
    grids = np.ix_(*coords)
    shape = tuple(c.size for c in coords)
    return np.broadcast_to(f(*grids), shape)


@dataclasses.dataclass(frozen=True)
class QuadratureRule:
    """Gauss–Legendre rule mapped to every element of one axis."""

    mesh: Mesh1D
    basis: element_core.BasisTable

    @property
    def points_per_element(self) -> int:
        return self.basis.quad_points.size

    @property
    def points(self) -> np.ndarray:
        """Physical quadrature points, element by element, shape ``(K*q,)``."""
        left = np.arange(self.mesh.elements) * self.mesh.step
        ref = 0.5 * (self.basis.quad_points + 1.0) * self.mesh.step
        return (left[:, None] + ref[None, :]).ravel()

    def load_operator(self) -> scipy.sparse.csr_matrix:
        """``B[m, (j, q)] = w_q e_l(ξ_q)`` where local node ``l`` of element
        ``j`` is flat entry ``m``."""
        return _load_operator(
            self.mesh.elements, self.mesh.order, self.points_per_element
        )


def quadrature_rule(mesh: Mesh1D, points: Optional[int] = None) -> QuadratureRule:
    """Rule with ``points`` Gauss points per element (default ``n + 1``)."""
    return QuadratureRule(
        mesh=mesh, basis=element_core.build_basis(mesh.order, points)
    )


@functools.lru_cache(maxsize=32)
def _load_operator(size: int, order: int, points: int) -> scipy.sparse.csr_matrix:
    basis = element_core.build_basis(order, points)
    local = basis.quad_weights[:, None] * basis.values  # (q, n+1)
    idx = grid_field.local_to_global(size, order)  # (K, n+1)
    rows = np.broadcast_to(idx[:, None, :], (size, points, order + 1))
    cols = np.broadcast_to(
        (np.arange(size)[:, None] * points + np.arange(points))[:, :, None],
        rows.shape,
    )
    vals = np.broadcast_to(local[None], rows.shape)
    keep = rows >= 0
    return scipy.sparse.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])),
        shape=(size * order - 1, size * points),
    ).tocsr()


def _contract(values: np.ndarray, op: scipy.sparse.csr_matrix, axis: int):
    moved = np.moveaxis(values, axis, 0)
    out = np.asarray(op @ moved.reshape(moved.shape[0], -1))
    return np.moveaxis(out.reshape((op.shape[0],) + moved.shape[1:]), 0, axis)


def _row_blocks(first: int, rest: int) -> List[Tuple[int, int]]:
    step = max(1, grid_field.CHUNK_BYTES // (8 * max(rest, 1)))
    return [(i, min(i + step, first)) for i in range(0, first, step)]


def assemble_rhs(
    f: ScalarFunctionND,
    meshes: Sequence[Mesh1D],
    quadrature_points: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Scaled load vector ``f^h`` by per-element Gauss quadrature.

    :param quadrature_points: Gauss points per element and axis; defaults to
        ``n_i + 1``.
    """
    if quadrature_points is None:
        quadrature_points = [None] * len(meshes)  # type: ignore[list-item]
    rules = [quadrature_rule(m, q) for m, q in zip(meshes, quadrature_points)]
    ops = [r.load_operator() for r in rules]
    coords = [r.points for r in rules]
    first = ops[0].tocsc()
    out = np.zeros(grid_field.field_shape(meshes))
    rest = math.prod(c.size for c in coords[1:])
    for i0, i1 in _row_blocks(coords[0].size, rest):
        values = np.array(_broadcast_eval(f, [coords[0][i0:i1]] + coords[1:]))
        for axis in range(1, len(meshes)):
            values = _contract(values, ops[axis], axis)
        out += _contract(values, first[:, i0:i1], 0)
    return out


def interpolate(u: ScalarFunctionND, meshes: Sequence[Mesh1D]) -> np.ndarray:
    """Values of ``u`` at every degree of freedom (the nodal interpolant)."""
    coords = [grid_field.dof_coordinates(m) for m in meshes]
    out = np.empty(grid_field.field_shape(meshes))
    rest = math.prod(c.size for c in coords[1:])
    for i0, i1 in _row_blocks(coords[0].size, rest):
        out[i0:i1] = _broadcast_eval(u, [coords[0][i0:i1]] + coords[1:])
    return out


def error_uniform(
    v: np.ndarray, u_exact: ScalarFunctionND, meshes: Sequence[Mesh1D]
) -> float:
    """``max |v - u_exact|`` over all degrees of freedom."""
    v = grid_field.check_field(v, meshes)
    coords = [grid_field.dof_coordinates(m) for m in meshes]
    rest = math.prod(c.size for c in coords[1:])
    err = 0.0
    for i0, i1 in _row_blocks(coords[0].size, rest):
        exact = _broadcast_eval(u_exact, [coords[0][i0:i1]] + coords[1:])
        err = max(err, float(np.max(np.abs(v[i0:i1] - exact))))
    return err


@dataclasses.dataclass(frozen=True)
class ManufacturedCase:
    """Right-hand side ``f = -Δu + αu`` of a known solution ``u``."""

    name: str
    rhs: ScalarFunctionND
    solution: ScalarFunctionND
    alpha: float
    lengths: Tuple[float, ...]


def manufactured_case_2d(alpha: float = 1.0) -> ManufacturedCase:
    """``u = sin(πx₁)sin(πx₂)(x₁ + x₂ - 1)`` on the unit square."""
    pi = math.pi

    def u(x1, x2):
        return np.sin(pi * x1) * np.sin(pi * x2) * (x1 + x2 - 1.0)

    def f(x1, x2):
        s1, s2 = np.sin(pi * x1), np.sin(pi * x2)
        c1, c2 = np.cos(pi * x1), np.cos(pi * x2)
        return (2 * pi**2 + alpha) * s1 * s2 * (x1 + x2 - 1.0) - 2 * pi * (
            c1 * s2 + s1 * c2
        )

    return ManufacturedCase(
        name="skew",
        rhs=ScalarFunctionND(f, 2, "f = -Δu + αu"),
        solution=ScalarFunctionND(u, 2, "u", exact_solution=True),
        alpha=alpha,
        lengths=(1.0, 1.0),
    )


def manufactured_case_sines(
    lengths: Sequence[float], alpha: float = 1.0
) -> ManufacturedCase:
    """``u = Π_i sin(πx_i/X_i)`` with ``f = (Σ_i π²/X_i² + α)u``."""
    lengths = tuple(float(x) for x in lengths)
    factor = sum((math.pi / x) ** 2 for x in lengths) + alpha

    def u(*coords):
        out = np.ones(())
        for x, length in zip(coords, lengths):
            out = out * np.sin(math.pi * x / length)
        return out

    def f(*coords):
        return factor * u(*coords)

    return ManufacturedCase(
        name="sines",
        rhs=ScalarFunctionND(f, len(lengths), "f = -Δu + αu"),
        solution=ScalarFunctionND(u, len(lengths), "u", exact_solution=True),
        alpha=alpha,
        lengths=lengths,
    )


def laplacian_defect(
    case: ManufacturedCase, points: np.ndarray, step: float = FD_STEP
) -> float:
    """``max |-Δu + αu - f|`` at ``points`` (shape ``(P, N)``), with ``Δu`` from
    central differences."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    u = case.solution
    center = u(*points.T)
    lap = np.zeros_like(center)
    for axis in range(points.shape[1]):
        shift = np.zeros(points.shape[1])
        shift[axis] = step
        lap += (u(*(points + shift).T) - 2 * center + u(*(points - shift).T)) / step**2
    residual = -lap + case.alpha * center - case.rhs(*points.T)
    return float(np.max(np.abs(residual)))


class PolynomialSource(ScalarFunctionND):
    """Separable polynomial ``f(x) = Π_i P_i(x_i)``.

    ``coefficients[i]`` lists the coefficients of ``P_i`` by increasing
    degree.
    """

    polynomials: Tuple[numpy.polynomial.Polynomial, ...]

    def __init__(self, coefficients: Sequence[Sequence[float]]):
        polys = tuple(numpy.polynomial.Polynomial(c) for c in coefficients)

        def evaluate(*coords):
            out = np.ones(())
            for p, x in zip(polys, coords):
                out = out * p(x)
            return out

        super().__init__(evaluate, len(polys), "polynomial source")
        object.__setattr__(self, "polynomials", polys)

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(p.degree() for p in self.polynomials)

    def dirichlet_solution(self, length: float) -> ScalarFunctionND:
        """Exact solution of ``-u'' = f`` on ``(0, X)`` with ``u(0) = u(X) = 0``.

        Only defined for one axis.
        """
        if self.dims != 1:
            raise ValueError("The exact Dirichlet solution is only available in 1D")
        (p,) = self.polynomials
        u = -p.integ(2)
        # u(0) = 0 after integ(2); subtract the linear part through u(X).
        u = u - numpy.polynomial.Polynomial([0.0, u(length) / length])
        return ScalarFunctionND(u, 1, "exact solution", exact_solution=True)
