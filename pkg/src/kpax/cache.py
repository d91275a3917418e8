"""Binary permutation cache with a frozen little-endian layout.

Layout (version 1): magic ``KPAX``, uint32 version, uint64 cell count q,
float64 tau, then q uint64 image indices.  Loading validates the header and
bijectivity before handing anything back, so a cache file is either usable
or rejected with a specific error.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .approx import Permutation
from .partition import Partition

__all__ = [
    "PermCache",
    "CorruptCacheError",
    "CacheIntegrityError",
    "save_perm",
    "load_perm",
]

MAGIC = b"KPAX"
VERSION = 1
_HEADER = struct.Struct("<4sIQd")


class CorruptCacheError(IOError):
    """Bad magic, bad version, or truncated/oversized payload."""


class CacheIntegrityError(ValueError):
    """Structurally valid file whose image array is not a bijection."""


@dataclass(frozen=True, eq=False)
class PermCache:
    """Decoded cache record (header fields + image array)."""

    q: int
    tau: float
    image: np.ndarray

    def to_permutation(self, partition: Partition, method: str = "cached") -> Permutation:
        if partition.q != self.q:
            raise CacheIntegrityError(
                f"cache holds {self.q} cells but partition has {partition.q}"
            )
        return Permutation(partition, self.image, self.tau, method)


def save_perm(perm: Permutation, path) -> Path:
    path = Path(path)
    payload = np.ascontiguousarray(perm.image, dtype="<u8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, perm.q, perm.tau))
        fh.write(payload)
    return path


def load_perm(path, partition: Optional[Partition] = None):
    """Load and validate a cache file.

    Returns a Permutation when a partition is supplied, else the raw
    PermCache record.  Raises CorruptCacheError for malformed files and
    CacheIntegrityError for non-bijective content.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CorruptCacheError(f"{path}: truncated header")
    magic, version, q, tau = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCacheError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptCacheError(f"{path}: unsupported version {version}")
    expect = _HEADER.size + 8 * q
    if len(blob) != expect:
        raise CorruptCacheError(
            f"{path}: payload is {len(blob) - _HEADER.size} bytes, expected {8 * q}"
        )
    image = np.frombuffer(blob, dtype="<u8", offset=_HEADER.size).astype(np.int64)
    if image.size and int(image.max()) >= q:
        raise CacheIntegrityError(f"{path}: image index out of range")
    counts = np.bincount(image, minlength=q)
    if np.any(counts != 1):
        dup = int(np.argmax(counts > 1))
        raise CacheIntegrityError(f"{path}: image target {dup} duplicated")
    record = PermCache(int(q), float(tau), image)
    if partition is not None:
        return record.to_permutation(partition)
    return record
