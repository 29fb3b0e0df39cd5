"""Flat layout of ``S_K^(n)`` fields and 1D operators along tensor axes.

A 1D field of ``K`` order-``n`` elements is stored as a flat vector of length
``nK - 1``: element ``j`` contributes its ``n - 1`` interior values followed
by its right node, except for the last element whose right node is the
boundary.  Boundary values are never stored.  With this ordering both the
scaled stiffness ``𝒜`` and mass ``𝒞`` are banded with bandwidth ``n``.

N-dimensional fields are dense arrays with one such axis per dimension; 1D
operators act on every pencil along the chosen axis.
"""

import concurrent.futures
import dataclasses
import functools
import logging
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from . import element_core
from .config import Mesh1D
from .errors import IndefiniteShiftError, ShapeMismatchError

logger = logging.getLogger(__name__)

Operator = Literal["mass", "stiffness"]
FactorKind = Literal["mass", "shifted"]
OPERATORS: Tuple[Operator, ...] = ("mass", "stiffness")

CHUNK_BYTES = 8 * 1024 * 1024
"""Approximate size of the pencil blocks handed to one worker."""


def elements_from_length(length: int, order: int) -> int:
    """Element count ``K`` of a flat axis of ``nK - 1`` entries."""
    if (length + 1) % order or length + 1 < 2 * order:
        raise ShapeMismatchError(
            f"Axis of length {length} is not a field of order-{order} elements"
        )
    return (length + 1) // order


def field_shape(meshes: Sequence[Mesh1D]) -> Tuple[int, ...]:
    return tuple(m.dof_count for m in meshes)


def check_field(x: np.ndarray, meshes: Sequence[Mesh1D]) -> np.ndarray:
    """Returns ``x`` as a float array, verifying it matches ``meshes``."""
    x = np.asarray(x, dtype=float)
    expected = field_shape(meshes)
    if x.shape != expected:
        raise ShapeMismatchError(f"Field has shape {x.shape}, expected {expected}")
    return x


def dof_coordinates(mesh: Mesh1D) -> np.ndarray:
    """Coordinate ``(m + 1)h/n`` of every flat entry ``m``."""
    return (np.arange(mesh.dof_count) + 1) * (mesh.step / mesh.order)


def split_field(v: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Splits pencils ``(..., nK-1)`` into nodes ``(..., K-1)`` and interiors
    ``(..., K, n-1)``."""
    size = elements_from_length(v.shape[-1], order)
    padded = np.zeros(v.shape[:-1] + (size * order,))
    padded[..., :-1] = v
    blocks = padded.reshape(v.shape[:-1] + (size, order))
    return blocks[..., :-1, order - 1], blocks[..., : order - 1]


def join_field(nodes: np.ndarray, interior: np.ndarray) -> np.ndarray:
    """Inverse of `split_field`."""
    size, dim = interior.shape[-2:]
    order = dim + 1
    if nodes.shape[-1] != size - 1:
        raise ShapeMismatchError(
            f"{nodes.shape[-1]} nodes do not match {size} elements"
        )
    blocks = np.zeros(interior.shape[:-1] + (order,))
    blocks[..., : order - 1] = interior
    blocks[..., :-1, order - 1] = nodes
    return blocks.reshape(interior.shape[:-2] + (size * order,))[..., :-1]


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeMismatchError(f"Axis {axis} is out of range for {ndim} dimensions")
    return axis % ndim


PencilFunc = Callable[[np.ndarray, Optional[int]], np.ndarray]


def map_pencils(
    func: PencilFunc,
    x: np.ndarray,
    axis: int,
    threads: Optional[int] = None,
    out_length: Optional[int] = None,
) -> np.ndarray:
    """Applies ``func`` to every pencil of ``x`` along ``axis``.

    ``func(block, workers)`` receives a ``(B, length)`` block of pencils and
    returns a ``(B, out_length)`` block.  Blocks are formed along the leading
    remaining axis and, with ``threads > 1``, processed by a thread pool;
    ``workers`` is the thread count left for ``func`` itself (only set when a
    single block is processed).  Each pencil goes through exactly one call,
    so results do not depend on ``threads``.
    """
    x = np.asarray(x, dtype=float)
    axis = _normalize_axis(axis, x.ndim)
    moved = np.moveaxis(x, axis, -1)
    length = moved.shape[-1]
    if out_length is None:
        out_length = length
    out = np.empty(moved.shape[:-1] + (out_length,))
    if moved.ndim == 1:
        out[:] = func(moved[None, :], threads)[0]
        return out
    lead = moved.shape[0]
    row_bytes = 8 * max(moved[0].size, 1)
    step = max(1, CHUNK_BYTES // row_bytes)
    chunks = [(i, min(i + step, lead)) for i in range(0, lead, step)]

    def work(bounds: Tuple[int, int], workers: Optional[int]) -> None:
        i0, i1 = bounds
        block = moved[i0:i1]
        result = func(block.reshape(-1, length), workers)
        out[i0:i1] = result.reshape(block.shape[:-1] + (out_length,))

    if len(chunks) == 1:
        work(chunks[0], threads)
    elif threads is not None and threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            for future in [executor.submit(work, c, 1) for c in chunks]:
                future.result()
    else:
        for c in chunks:
            work(c, 1)
    return np.moveaxis(out, -1, axis)


def _local_matrix(order: int, which: Operator) -> np.ndarray:
    pencil = element_core.reference_element(order).pencil
    if which == "mass":
        return pencil.mass
    if which == "stiffness":
        return pencil.stiffness
    raise ValueError(f"Unknown operator {which!r}")


def _apply_local(block: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    rows, length = block.shape
    order = matrix.shape[0] - 1
    size = (length + 1) // order
    padded = np.zeros((rows, size * order))
    padded[:, :-1] = block
    el = padded.reshape(rows, size, order)
    local = np.zeros((rows, size, order + 1))
    local[:, 1:, 0] = el[:, :-1, order - 1]
    local[:, :, 1:] = el
    r = local @ matrix
    out = np.empty((rows, size, order))
    out[:, :, : order - 1] = r[:, :, 1:order]
    out[:, :-1, order - 1] = r[:, :-1, order] + r[:, 1:, 0]
    out[:, -1, order - 1] = 0.0
    return out.reshape(rows, size * order)[:, :-1]


def apply_operator_1d(
    x: np.ndarray,
    axis: int,
    order: int,
    which: Operator,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Applies the scaled global ``𝒜`` (``"stiffness"``) or ``𝒞`` (``"mass"``)
    along ``axis``.

    Node rows compute ``m_n v_{j-1} + m̌·v_{j-1/2} + 2m₀v_j + m·v_{j+1/2} +
    m_n v_{j+1}`` and interior rows ``m v_{j-1} + M̃v_{j-1/2} + m̌ v_j``.
    """
    x = np.asarray(x, dtype=float)
    elements_from_length(x.shape[_normalize_axis(axis, x.ndim)], order)
    matrix = _local_matrix(order, which)
    return map_pencils(lambda b, _: _apply_local(b, matrix), x, axis, threads)


def local_to_global(size: int, order: int) -> np.ndarray:
    """Flat index of each local node ``(K, n+1)``; ``-1`` marks the boundary."""
    j = np.arange(size)
    idx = np.empty((size, order + 1), dtype=np.intp)
    idx[:, 0] = j * order - 1
    idx[:, 1:order] = j[:, None] * order + np.arange(order - 1)
    idx[:, order] = (j + 1) * order - 1
    idx[-1, order] = -1
    return idx


@functools.lru_cache(maxsize=64)
def assemble_matrix(size: int, order: int, which: Operator) -> scipy.sparse.csr_matrix:
    """Assembled ``(nK-1) × (nK-1)`` scaled operator."""
    matrix = _local_matrix(order, which)
    idx = local_to_global(size, order)
    rows = np.broadcast_to(idx[:, :, None], (size, order + 1, order + 1))
    cols = np.broadcast_to(idx[:, None, :], (size, order + 1, order + 1))
    vals = np.broadcast_to(matrix, (size, order + 1, order + 1))
    keep = (rows >= 0) & (cols >= 0)
    n_dof = size * order - 1
    return scipy.sparse.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(n_dof, n_dof)
    ).tocsr()


def dense_matrix(size: int, order: int, which: Operator) -> np.ndarray:
    return assemble_matrix(size, order, which).toarray()


@functools.lru_cache(maxsize=64)
def band_storage(size: int, order: int, which: Operator) -> np.ndarray:
    """Upper band storage ``ab[n + i - j, j] = M[i, j]`` of an operator."""
    matrix = assemble_matrix(size, order, which)
    n_dof = size * order - 1
    ab = np.zeros((order + 1, n_dof))
    for d in range(order + 1):
        ab[order - d, d:] = matrix.diagonal(d)
    ab.setflags(write=False)
    return ab


@dataclasses.dataclass(frozen=True)
class BandedFactor:
    """Banded Cholesky factor of ``𝒞`` or of ``4h⁻²𝒜 + μ𝒞`` along one axis."""

    size: int
    order: int
    kind: FactorKind
    mu: float
    cholesky: np.ndarray
    """Upper band storage of ``U`` with ``Uᵀ U = M``."""
    axis: int = 0

    @property
    def bandwidth(self) -> int:
        return self.order

    @property
    def dof_count(self) -> int:
        return self.size * self.order - 1

    @property
    def nbytes(self) -> int:
        return self.cholesky.nbytes


def shifted_band(mesh: Mesh1D, mu: float) -> np.ndarray:
    return (4.0 / mesh.step**2) * band_storage(
        mesh.elements, mesh.order, "stiffness"
    ) + mu * band_storage(mesh.elements, mesh.order, "mass")


def factor_1d(
    mesh: Mesh1D,
    mu: float = 0.0,
    which: FactorKind = "mass",
    axis: int = 0,
    index: Optional[Tuple[int, ...]] = None,
) -> BandedFactor:
    """Factors ``𝒞`` (``"mass"``) or ``4h⁻²𝒜 + μ𝒞`` (``"shifted"``).

    :raises IndefiniteShiftError: if the matrix is not positive definite.
    """
    if which == "mass":
        ab = band_storage(mesh.elements, mesh.order, "mass")
        mu = 0.0
    elif which == "shifted":
        ab = shifted_band(mesh, mu)
    else:
        raise ValueError(f"Unknown factor kind {which!r}")
    try:
        cholesky = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise IndefiniteShiftError(mu, index, str(e)) from e
    return BandedFactor(
        size=mesh.elements,
        order=mesh.order,
        kind=which,
        mu=mu,
        cholesky=cholesky,
        axis=axis,
    )


def solve_1d(
    factor: BandedFactor,
    x: np.ndarray,
    axis: Optional[int] = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Solves with ``factor`` for every pencil along ``axis``."""
    x = np.asarray(x, dtype=float)
    if axis is None:
        axis = factor.axis
    length = x.shape[_normalize_axis(axis, x.ndim)]
    if length != factor.dof_count:
        raise ShapeMismatchError(
            f"Factor of {factor.dof_count} unknowns applied to an axis of {length}"
        )

    def solve(block: np.ndarray, _) -> np.ndarray:
        return scipy.linalg.cho_solve_banded(
            (factor.cholesky, False), block.T, check_finite=False
        ).T

    return map_pencils(solve, x, axis, threads)


def inner_product(y: np.ndarray, v: np.ndarray) -> float:
    """Unweighted dot product ``(y, v)`` over all stored entries."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if y.shape != v.shape:
        raise ShapeMismatchError(f"Shapes {y.shape} and {v.shape} differ")
    return float(np.dot(y.ravel(), v.ravel()))
