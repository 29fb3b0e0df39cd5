"""On-disk cache of `SpectralBasis1D` tables.

Files are keyed by the SHA-256 of ``{"K", "n", "version"}``.  Each file has
a fixed little-endian header followed by the ``float64`` tables:

.. code-block:: text

   magic     8 bytes   b"FFTFEMSB"
   version   uint32
   K         uint32
   n         uint32
   reserved  uint32    (0)
   checksum  32 bytes  SHA-256 of the payload
   payload   eigenvalues (K-1, n), p_even (K-1, n, n-1), p_odd (K-1, n, n-1),
             norms (K-1, n), b0 (K-1, n), bn (K-1, n)

Unreadable files are discarded and rebuilt; the cache never changes results.
"""

import hashlib
import json
import logging
import os
import struct
import tempfile
from typing import Callable, Optional

import appdirs
import numpy as np

from . import element_core
from .spectral_basis import SpectralBasis1D, build_basis, family_theta

logger = logging.getLogger(__name__)

MAGIC = b"FFTFEMSB"
FORMAT_VERSION = 2
CACHE_ENV_VAR = "FFTFEM_CACHE_DIR"
DISABLED = "none"

_HEADER = struct.Struct("<8sIIII32s")


class CacheFormatError(ValueError):
    """A cache file does not hold a valid table of the requested mesh."""


def get_default_cache_dir() -> str:
    cache_dir = os.environ.get(CACHE_ENV_VAR)
    if cache_dir is not None:
        return cache_dir
    return os.path.join(appdirs.user_cache_dir("fftfem", "fftfem"), "spectral_basis")


def resolve_cache_dir(value: Optional[str]) -> Optional[str]:
    """Cache directory from ``--cache-dir``, or `None` if caching is disabled."""
    if value is None:
        value = get_default_cache_dir()
    if value.lower() == DISABLED:
        return None
    return value


def cache_key(size: int, order: int) -> str:
    req_json = {"K": size, "n": order, "version": FORMAT_VERSION}
    req_json_encoded = json.dumps(req_json, sort_keys=True).encode("utf-8")
    return hashlib.sha256(req_json_encoded).hexdigest()


def cache_path(cache_dir: str, size: int, order: int) -> str:
    return os.path.join(cache_dir, f"{cache_key(size, order)}.basis")


def encode(basis: SpectralBasis1D) -> bytes:
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (
            basis.eigenvalues,
            basis.p_even,
            basis.p_odd,
            basis.norms,
            basis.b0,
            basis.bn,
        )
    )
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        basis.size,
        basis.order,
        0,
        hashlib.sha256(payload).digest(),
    )
    return header + payload


def decode(
    data: bytes,
    size: int,
    order: int,
    interior: element_core.InteriorEigen,
) -> SpectralBasis1D:
    """Parses a cache file.

    :raises CacheFormatError: on a bad header, size or checksum.
    """
    if len(data) < _HEADER.size:
        raise CacheFormatError("File is shorter than its header")
    magic, version, k, n, _, checksum = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CacheFormatError(f"Invalid magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CacheFormatError(f"Unsupported format version {version}")
    if (k, n) != (size, order):
        raise CacheFormatError(f"File holds K={k}, n={n}, expected K={size}, n={order}")
    payload = data[_HEADER.size :]
    if hashlib.sha256(payload).digest() != checksum:
        raise CacheFormatError("Checksum mismatch")
    rows = size - 1
    table = (rows, order)
    vectors = (rows, order, order - 1)
    shapes = [table, vectors, vectors, table, table, table]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != expected:
        raise CacheFormatError(
            f"Payload has {len(payload)} bytes, expected {expected}"
        )
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .astype(float)
            .reshape(shape)
        )
        offset += count * 8
    eigenvalues, p_even, p_odd, norms, b0, bn = arrays
    return SpectralBasis1D(
        size=size,
        order=order,
        theta=family_theta(size),
        eigenvalues=eigenvalues,
        interior=interior,
        p_even=p_even,
        p_odd=p_odd,
        norms=norms,
        b0=b0,
        bn=bn,
    )


def _write(path: str, content: bytes, prefix: str) -> None:
    cache_dir = os.path.dirname(path)
    os.makedirs(cache_dir, exist_ok=True)
    temp_name = None
    try:
        with tempfile.NamedTemporaryFile(
            dir=cache_dir, suffix=".tmp", prefix=prefix + ".", delete=False
        ) as f:
            temp_name = f.name
            f.write(content)
        os.replace(temp_name, path)
        temp_name = None
    finally:
        if temp_name is not None:
            try:
                os.remove(temp_name)
            except (OSError, FileNotFoundError):
                pass


def load_or_build(
    cache_dir: str,
    size: int,
    order: int,
    builder: Callable[[], SpectralBasis1D],
    interior: element_core.InteriorEigen,
) -> SpectralBasis1D:
    """Returns the cached table of ``(K, n)``, building and storing it if needed."""
    path = cache_path(cache_dir, size, order)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        pass
    except OSError as e:
        logger.warning("Failed to read cache file %s: %s", path, e)
    else:
        try:
            basis = decode(data, size, order, interior)
            logger.debug("Spectral basis cache hit: %s", path)
            return basis
        except CacheFormatError as e:
            logger.warning("Discarding corrupted cache file %s: %s", path, e)
            try:
                os.remove(path)
            except OSError:
                pass

    basis = builder()
    try:
        _write(path, encode(basis), cache_key(size, order))
        logger.info("Stored spectral basis K=%d n=%d in %s", size, order, path)
    except OSError as e:
        logger.warning("Failed to write cache file %s: %s", path, e)
    return basis


def load_basis(
    size: int, order: int, cache_dir: Optional[str] = None
) -> SpectralBasis1D:
    """Spectral basis of ``(K, n)``; ``cache_dir=None`` bypasses the cache."""
    ref = element_core.reference_element(order)

    def builder() -> SpectralBasis1D:
        return build_basis(size, order, ref.eigen, ref.pencil)

    if cache_dir is None:
        return builder()
    return load_or_build(cache_dir, size, order, builder, interior=ref.eigen)
