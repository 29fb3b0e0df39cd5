"""Real trigonometric transforms on interior nodes and element centers.

All transforms are unnormalized sums:

- ``dst1``: ``X_k = Σ_{j=1}^{K-1} x_j sin(πjk/K)``, ``k = 1..K-1``.
- ``dst3_half``: ``w_{j-1/2} = Σ_{k=1}^{K} d_k sin(πk(j-1/2)/K)``, ``j = 1..K``.
- ``dct3_half``: ``w_{j-1/2} = Σ_{k=0}^{K-1} d_k cos(πk(j-1/2)/K)``, ``j = 1..K``.
- ``dst3_half_adjoint`` / ``dct3_half_adjoint``: the transposed sums.

Fast paths embed the data into a complex FFT of length ``2K``.  Lengths that
are not 5-smooth fall back to the ``O(K²)`` reference sums.
"""

import dataclasses
import functools
import logging
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.fft

from .errors import ShapeMismatchError, UnsupportedLengthError

logger = logging.getLogger(__name__)

TransformKind = Literal[
    "dst1", "dst3_half", "dct3_half", "dst3_half_adjoint", "dct3_half_adjoint"
]
Method = Literal["auto", "fft", "naive"]

TRANSFORM_KINDS: Tuple[TransformKind, ...] = (
    "dst1",
    "dst3_half",
    "dct3_half",
    "dst3_half_adjoint",
    "dct3_half_adjoint",
)

_SMOOTH_FACTORS = (2, 3, 5)


def is_supported_length(m: int) -> bool:
    """Whether ``m`` only has the prime factors 2, 3 and 5."""
    if m < 1:
        return False
    for p in _SMOOTH_FACTORS:
        while m % p == 0:
            m //= p
    return m == 1


def complex_fft(x: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    """Unnormalized DFT ``X_k = Σ_m x_m exp(-2πimk/M)`` along ``axis``."""
    m = x.shape[axis]
    if not is_supported_length(m):
        raise UnsupportedLengthError(f"FFT length {m} is not 5-smooth")
    return scipy.fft.fft(x, axis=axis, workers=workers)


def complex_ifft(x: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    """Inverse of `complex_fft` (includes the ``1/M`` factor)."""
    m = x.shape[axis]
    if not is_supported_length(m):
        raise UnsupportedLengthError(f"FFT length {m} is not 5-smooth")
    return scipy.fft.ifft(x, axis=axis, workers=workers)


def _lengths(kind: str, size: int):
    if kind == "dst1":
        return size - 1, size - 1
    return size, size


def naive_matrix(kind: TransformKind, size: int) -> np.ndarray:
    """Dense matrix ``T`` of a transform, so that ``out = T @ x``."""
    if kind == "dst1":
        j = np.arange(1, size)
        return np.sin(np.pi * np.outer(j, j) / size)
    centers = np.arange(1, size + 1) - 0.5
    if kind in ("dst3_half", "dst3_half_adjoint"):
        m = np.sin(np.pi * np.outer(centers, np.arange(1, size + 1)) / size)
    elif kind in ("dct3_half", "dct3_half_adjoint"):
        m = np.cos(np.pi * np.outer(centers, np.arange(size)) / size)
    else:
        raise ValueError(f"Unknown transform kind {kind!r}")
    if kind.endswith("_adjoint"):
        return m.T.copy()
    return m


@dataclasses.dataclass(frozen=True)
class TransformPlan:
    """Reusable, input-independent plan of one transform kind and size ``K``."""

    kind: TransformKind
    size: int
    method: Literal["fft", "naive"]
    twiddle: np.ndarray
    """``exp(iπk/(2K))`` for ``k = 0..K``."""
    matrix: Optional[np.ndarray]
    """Dense reference matrix; only kept by naive plans."""

    @property
    def input_length(self) -> int:
        return _lengths(self.kind, self.size)[0]

    @property
    def output_length(self) -> int:
        return _lengths(self.kind, self.size)[1]

    @property
    def scratch_length(self) -> int:
        """Length of the complex FFT buffer used per pencil."""
        return 2 * self.size

    def __call__(
        self, x: np.ndarray, axis: int = -1, workers: Optional[int] = None
    ) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[axis] != self.input_length:
            raise ShapeMismatchError(
                f"{self.kind} of size K={self.size} expects {self.input_length} "
                f"samples along axis {axis}, got {x.shape[axis]}"
            )
        x = np.moveaxis(x, axis, -1)
        if self.method == "naive":
            assert self.matrix is not None
            out = x @ self.matrix.T
        else:
            out = _FAST_PATHS[self.kind](self, x, workers)
        return np.moveaxis(out, -1, axis)


def _dst1_fft(plan: TransformPlan, x: np.ndarray, workers) -> np.ndarray:
    k = plan.size
    y = np.zeros(x.shape[:-1] + (2 * k,))
    y[..., 1:k] = x
    y[..., k + 1 :] = -x[..., ::-1]
    return -0.5 * complex_fft(y, workers=workers).imag[..., 1:k]


def _dst3_half_fft(plan: TransformPlan, d: np.ndarray, workers) -> np.ndarray:
    k = plan.size
    z = np.zeros(d.shape[:-1] + (2 * k,), dtype=complex)
    z[..., 1 : k + 1] = d * plan.twiddle[1:].conj()
    return -complex_fft(z, workers=workers).imag[..., :k]


def _dct3_half_fft(plan: TransformPlan, d: np.ndarray, workers) -> np.ndarray:
    k = plan.size
    z = np.zeros(d.shape[:-1] + (2 * k,), dtype=complex)
    z[..., :k] = d * plan.twiddle[:k].conj()
    return complex_fft(z, workers=workers).real[..., :k]


def _padded_spectrum(plan: TransformPlan, y: np.ndarray, workers) -> np.ndarray:
    k = plan.size
    pad = np.zeros(y.shape[:-1] + (2 * k,))
    pad[..., :k] = y
    return complex_fft(pad, workers=workers).conj()


def _dst3_half_adjoint_fft(plan: TransformPlan, y: np.ndarray, workers):
    k = plan.size
    spec = _padded_spectrum(plan, y, workers)
    return (plan.twiddle[1:] * spec[..., 1 : k + 1]).imag


def _dct3_half_adjoint_fft(plan: TransformPlan, y: np.ndarray, workers):
    k = plan.size
    spec = _padded_spectrum(plan, y, workers)
    return (plan.twiddle[:k] * spec[..., :k]).real


_FAST_PATHS = {
    "dst1": _dst1_fft,
    "dst3_half": _dst3_half_fft,
    "dct3_half": _dct3_half_fft,
    "dst3_half_adjoint": _dst3_half_adjoint_fft,
    "dct3_half_adjoint": _dct3_half_adjoint_fft,
}


@functools.lru_cache(maxsize=None)
def plan_transform(
    kind: TransformKind, size: int, method: Method = "auto"
) -> TransformPlan:
    """Creates (and caches) the plan of a transform of size ``K``.

    :param method: ``"fft"`` forces the fast path, ``"naive"`` the reference
        sums; ``"auto"`` uses the fast path whenever ``K`` is 5-smooth.
    """
    if kind not in _FAST_PATHS:
        raise ValueError(f"Unknown transform kind {kind!r}")
    min_size = 2 if kind == "dst1" else 1
    if size < min_size:
        raise ShapeMismatchError(f"{kind} needs K >= {min_size}, got {size}")
    if method == "auto":
        if is_supported_length(size):
            method = "fft"
        else:
            logger.warning(
                "No fast %s for K=%d; falling back to O(K^2) reference sums",
                kind,
                size,
            )
            method = "naive"
    elif method == "fft" and not is_supported_length(size):
        raise UnsupportedLengthError(f"No fast {kind} for K={size}")
    twiddle = np.exp(0.5j * np.pi * np.arange(size + 1) / size)
    matrix = naive_matrix(kind, size) if method == "naive" else None
    return TransformPlan(
        kind=kind, size=size, method=method, twiddle=twiddle, matrix=matrix
    )


def dst1(x: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    return plan_transform("dst1", x.shape[axis] + 1)(x, axis, workers)


def dst3_half(d: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    return plan_transform("dst3_half", d.shape[axis])(d, axis, workers)


def dct3_half(d: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    return plan_transform("dct3_half", d.shape[axis])(d, axis, workers)


def dst3_half_adjoint(y: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    return plan_transform("dst3_half_adjoint", y.shape[axis])(y, axis, workers)


def dct3_half_adjoint(y: np.ndarray, axis: int = -1, workers: Optional[int] = None):
    return plan_transform("dct3_half_adjoint", y.shape[axis])(y, axis, workers)
