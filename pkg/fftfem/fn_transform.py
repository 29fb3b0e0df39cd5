"""Direct and inverse ``F_n`` transforms.

The coefficient layout of an axis of ``K`` order-``n`` elements is

.. code-block:: text

   [w_{0,1..n-1}, w_{1,1..n}, w_{2,1..n}, ..., w_{K-1,1..n}]

with ``nK - 1`` entries in total, where ``w_{0l}`` multiplies the interior
mode ``s₀^(l)`` and ``w_{kl}`` (``k ≥ 1``) the mode ``s_k^(l)``.

The inverse transform costs one DST-I for the nodes plus ``n - 1``
half-sample transforms for the element interiors; the direct transform costs
``n`` DST-I.  Interior components are split by parity, so only ``⌊n/2⌋`` even
and ``⌊(n-1)/2⌋`` odd component channels are transformed.
"""

import collections
import dataclasses
import functools
from typing import Counter, Dict, List, Optional, Tuple

import numpy as np

from . import grid_field, trig_kernels
from .errors import ShapeMismatchError
from .spectral_basis import SpectralBasis1D


@dataclasses.dataclass
class TransformCounter:
    """Counts fast transforms by kind; one count per transformed channel."""

    counts: Dict[str, int] = dataclasses.field(
        default_factory=collections.Counter
    )

    def add(self, kind: str, channels: int = 1) -> None:
        if channels:
            self.counts[kind] += channels

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        self.counts.clear()


@functools.lru_cache(maxsize=None)
def parity_channels(order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interior component indices carried by the even and odd channels.

    Returns ``(even, even_weights, odd)``: an even channel ``i`` stands for
    components ``i`` and ``n-2-i`` (weight 2) or only the middle component
    (weight 1); odd channels always have weight 2.
    """
    dim = order - 1
    even = np.arange((dim + 1) // 2)
    weights = np.where(even == dim - 1 - even, 1.0, 2.0)
    odd = np.arange(dim // 2)
    return even, weights, odd


def _check_axis(x: np.ndarray, basis: SpectralBasis1D, axis: int) -> None:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatchError(f"Axis {axis} is out of range for {x.ndim} dims")
    if x.shape[axis] != basis.dof_count:
        raise ShapeMismatchError(
            f"Axis {axis} has {x.shape[axis]} entries; the basis of K={basis.size}, "
            f"n={basis.order} needs {basis.dof_count}"
        )


def _alternating(e0: np.ndarray, size: int) -> np.ndarray:
    """``(-P)^{j-1} e0`` for ``j = 1..K``, shape ``(B, K, n-1)``."""
    out = np.empty(e0.shape[:1] + (size,) + e0.shape[1:])
    out[:, 0::2] = e0[:, None, :]
    out[:, 1::2] = -e0[:, None, ::-1]
    return out


def _transform(
    kind: trig_kernels.TransformKind,
    size: int,
    data: np.ndarray,
    workers: Optional[int],
    tally: Counter,
) -> np.ndarray:
    """Runs the size-``K`` plan of ``kind`` along axis 1 and tallies its channels."""
    out = trig_kernels.plan_transform(kind, size)(data, axis=1, workers=workers)
    tally[kind] += data.shape[2] if data.ndim == 3 else 1
    return out


def _inverse_block(
    block: np.ndarray, basis: SpectralBasis1D, workers: Optional[int], tally: Counter
) -> np.ndarray:
    n = basis.order
    size = basis.size
    rows = block.shape[0]
    w0 = block[:, : n - 1]
    w = block[:, n - 1 :].reshape(rows, size - 1, n)
    nodes = _transform("dst1", size, w.sum(axis=-1), workers, tally)
    if n == 1:
        return grid_field.join_field(nodes, np.zeros((rows, size, 0)))

    interior = _alternating(w0 @ basis.interior.vectors.T, size)
    even, _, odd = parity_channels(n)
    k = np.arange(1, size)
    dim = n - 1

    d_e = np.einsum("bkl,kli->bki", w, basis.p_even[..., even])
    channels = np.zeros((rows, size, even.size))
    channels[:, : size - 1] = d_e * np.cos(0.5 * np.pi * k / size)[:, None]
    values = 2.0 * _transform("dst3_half", size, channels, workers, tally)
    interior[..., even] += values
    mirror = dim - 1 - even
    paired = mirror != even
    interior[..., mirror[paired]] += values[..., paired]

    if odd.size:
        d_o = np.einsum("bkl,kli->bki", w, basis.p_odd[..., odd])
        channels = np.zeros((rows, size, odd.size))
        channels[:, 1:] = d_o * np.sin(0.5 * np.pi * k / size)[:, None]
        values = 2.0 * _transform("dct3_half", size, channels, workers, tally)
        interior[..., odd] -= values
        interior[..., dim - 1 - odd] += values
    return grid_field.join_field(nodes, interior)


def _direct_block(
    block: np.ndarray, basis: SpectralBasis1D, workers: Optional[int], tally: Counter
) -> np.ndarray:
    n = basis.order
    size = basis.size
    rows = block.shape[0]
    y_nodes, y_int = grid_field.split_field(block, n)
    coef = np.repeat(
        _transform("dst1", size, y_nodes, workers, tally)[..., None], n, axis=-1
    )
    if n == 1:
        return (coef / basis.norms).reshape(rows, size - 1)

    alt = np.empty_like(y_int)
    alt[:, 0::2] = y_int[:, 0::2]
    alt[:, 1::2] = -y_int[:, 1::2, ::-1]
    coef0 = alt.sum(axis=1) @ basis.interior.vectors / size

    even, weights, odd = parity_channels(n)
    z = y_int[:, 1:] + y_int[:, :-1]
    z_e = 0.5 * (z + z[..., ::-1])[..., even] * weights
    t_e = _transform("dst1", size, z_e, workers, tally)
    coef += np.einsum("bki,kli->bkl", t_e, basis.p_even[..., even])
    if odd.size:
        zp = y_int[:, 1:] - y_int[:, :-1]
        z_o = (zp - zp[..., ::-1])[..., odd]
        t_o = _transform("dst1", size, z_o, workers, tally)
        coef += np.einsum("bki,kli->bkl", t_o, basis.p_odd[..., odd])
    coef /= basis.norms
    return np.concatenate([coef0, coef.reshape(rows, -1)], axis=1)


def _map_counted(
    block_func,
    x: np.ndarray,
    basis: SpectralBasis1D,
    axis: int,
    threads: Optional[int],
    counter: Optional[TransformCounter],
) -> np.ndarray:
    """`grid_field.map_pencils` of ``block_func`` with transform counting.

    Every block of one call runs the same transforms, each on its own rows,
    so the tally of a single block is added to ``counter``.
    """
    tallies: List[Counter] = []

    def run(block: np.ndarray, workers: Optional[int]) -> np.ndarray:
        tally: Counter = collections.Counter()
        out = block_func(block, basis, workers, tally)
        tallies.append(tally)
        return out

    out = grid_field.map_pencils(run, x, axis, threads)
    if counter is not None and tallies:
        for kind, channels in tallies[0].items():
            counter.add(kind, channels)
    return out


def fn_inverse(
    coeffs: np.ndarray,
    basis: SpectralBasis1D,
    axis: int = -1,
    threads: Optional[int] = None,
    counter: Optional[TransformCounter] = None,
) -> np.ndarray:
    """Field values from eigenvector coefficients along ``axis``.

    Node values are ``Σ_k (Σ_l w_{kl}) sin(πkj/K)``; element values combine
    the interior modes ``(-P)^{j-1} Σ_l w_{0l} e^(l)`` with half-sample
    synthesis of the even and odd parts of ``d_k = Σ_l w_{kl} p_k^(l)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    _check_axis(coeffs, basis, axis)
    return _map_counted(_inverse_block, coeffs, basis, axis, threads, counter)


def fn_direct_from_mass(
    y: np.ndarray,
    basis: SpectralBasis1D,
    axis: int = -1,
    threads: Optional[int] = None,
    counter: Optional[TransformCounter] = None,
) -> np.ndarray:
    """Coefficients of ``w`` given ``y = 𝒞w`` along ``axis``.

    ``w_{kl} = (y, s_k^(l)) / ‖s_k^(l)‖²_𝒞``.
    """
    y = np.asarray(y, dtype=float)
    _check_axis(y, basis, axis)
    return _map_counted(_direct_block, y, basis, axis, threads, counter)


def fn_direct(
    field: np.ndarray,
    basis: SpectralBasis1D,
    axis: int = -1,
    threads: Optional[int] = None,
    counter: Optional[TransformCounter] = None,
) -> np.ndarray:
    """Eigenvector coefficients of ``field`` along ``axis``."""
    field = np.asarray(field, dtype=float)
    _check_axis(field, basis, axis)
    y = grid_field.apply_operator_1d(field, axis, basis.order, "mass", threads)
    return fn_direct_from_mass(y, basis, axis, threads, counter)


def eigenvector(basis: SpectralBasis1D, k: int, mode: int) -> np.ndarray:
    """Materializes ``s_k^(l)`` (``l = mode``) from its defining formulas.

    ``mode`` counts from 1; ``k = 0`` selects the interior modes.  Element
    ``j`` holds ``s_{j-1}p + s_j p̌``, evaluated from the parity parts of
    ``p`` with the half-angle forms of ``s_{j-1} ± s_j``.
    """
    n = basis.order
    size = basis.size
    interior = np.empty((size, n - 1))
    if k == 0:
        e = basis.interior.vectors[:, mode - 1]
        interior[0::2] = e
        interior[1::2] = -e[::-1]
        nodes = np.zeros(size - 1)
    else:
        half = 0.5 * np.pi * k / size
        mid = np.pi * k * (np.arange(1, size + 1) - 0.5) / size
        p_even = basis.p_even[k - 1, mode - 1]
        p_odd = basis.p_odd[k - 1, mode - 1]
        interior[:] = (2.0 * np.cos(half) * np.sin(mid))[:, None] * p_even - (
            2.0 * np.sin(half) * np.cos(mid)
        )[:, None] * p_odd
        nodes = np.sin(np.pi * k * np.arange(1, size) / size)
    return grid_field.join_field(nodes, interior)
