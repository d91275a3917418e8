"""Equal-measure box partitions of compact rectangular domains.

Cells are axis-aligned half-open boxes on a regular grid, indexed row-major
(last axis fastest).  All cells of a partition share one extent vector, so
the equal-measure property holds exactly by construction.  Types are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Domain",
    "Partition",
    "CellMask",
    "OutOfDomainError",
    "build_partition",
    "locate",
    "locate_many",
    "cell_center",
    "cell_centers",
    "refine",
    "mask_sublevel",
    "pad_axis",
    "pairwise_distance",
]

# Relative slack when locating points on non-periodic axes: the closed top
# face and integrator round-off land exactly on (or a hair past) the bounds.
_EDGE_TOL = 1e-9


class OutOfDomainError(ValueError):
    """Point lies outside a non-periodic axis range."""


@dataclass(frozen=True)
class Domain:
    """Compact box X in R^m with per-axis periodicity flags."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        m = len(self.lo)
        if not (1 <= m <= 3):
            raise ValueError(f"dimension must be 1..3, got {m}")
        if len(self.hi) != m or len(self.periodic) != m:
            raise ValueError("lo, hi, periodic must have equal length")
        for a, b in zip(self.lo, self.hi):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValueError(f"need lo < hi on every axis, got [{a}, {b}]")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float) - np.asarray(self.lo, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map points into the box on periodic axes; other axes untouched."""
        x = np.array(x, dtype=float, copy=True)
        lo = np.asarray(self.lo)
        w = self.widths
        for k in range(self.dim):
            if self.periodic[k]:
                x[..., k] = lo[k] + np.mod(x[..., k] - lo[k], w[k])
        return x


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Partition:
    """Regular grid of q = prod(dims) congruent half-open box cells.

    ``level`` tags the position in a refinement chain; ``padded`` marks axes
    that were closed periodically by :func:`pad_axis` (seam rules differ from
    genuinely periodic axes when building lattice shears).
    """

    domain: Domain
    dims: tuple[int, ...]
    level: int = 0
    padded: tuple[bool, ...] = None  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.dims) != self.domain.dim:
            raise ValueError("dims length must match domain dimension")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"cell counts must be >= 1, got {self.dims}")
        if self.padded is None:
            object.__setattr__(self, "padded", (False,) * self.domain.dim)
        elif len(self.padded) != self.domain.dim:
            raise ValueError("padded flags must match domain dimension")

    @property
    def q(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_extent(self) -> np.ndarray:
        return self.domain.widths / np.asarray(self.dims, dtype=float)

    @property
    def diam_bound(self) -> float:
        return float(np.sqrt(np.sum(self.cell_extent**2)))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_extent))

    def multi_index(self, j) -> tuple[np.ndarray, ...]:
        return np.unravel_index(j, self.dims)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(multi, self.dims)

    def axis_corners(self, k: int) -> np.ndarray:
        """The d_k + 1 grid planes of axis k, lo + width * (i / d_k)."""
        d = self.dims[k]
        return self.domain.lo[k] + self.domain.widths[k] * (np.arange(d + 1) / d)


def build_partition(domain: Domain, dims: Sequence[int], level: int = 0) -> Partition:
    return Partition(domain, tuple(int(d) for d in dims), level=level)


def cell_centers(p: Partition, js=None) -> np.ndarray:
    """Centers of cells ``js`` (all cells when None), shape (n, m)."""
    if js is None:
        js = np.arange(p.q)
    js = np.atleast_1d(np.asarray(js))
    if js.size and (js.min() < 0 or js.max() >= p.q):
        raise IndexError(f"cell index out of range 0..{p.q - 1}")
    multi = np.stack(p.multi_index(js), axis=-1).astype(float)
    lo = np.asarray(p.domain.lo)
    w = p.domain.widths
    d = np.asarray(p.dims, dtype=float)
    return lo + w * ((multi + 0.5) / d)


def cell_center(p: Partition, j: int) -> np.ndarray:
    return cell_centers(p, [j])[0]


def locate_many(p: Partition, x: np.ndarray) -> np.ndarray:
    """Cell indices containing the points x, shape (n, m) -> (n,).

    Cells are half-open [lo, hi) per axis; on non-periodic axes the top face
    is accepted into the last cell (closed box), with a small relative slack
    for integrator round-off.  Anything further out raises OutOfDomainError.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lo = np.asarray(p.domain.lo)
    w = p.domain.widths
    d = np.asarray(p.dims)
    rel = (x - lo) / w
    idx = np.empty(rel.shape, dtype=np.int64)
    for k in range(p.domain.dim):
        r = rel[:, k]
        if p.domain.periodic[k]:
            r = np.mod(r, 1.0)
        else:
            bad = (r < -_EDGE_TOL) | (r > 1.0 + _EDGE_TOL)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise OutOfDomainError(
                    f"point {x[i]} outside axis {k} range "
                    f"[{p.domain.lo[k]}, {p.domain.hi[k]}]"
                )
            r = np.clip(r, 0.0, None)
        i = np.floor(r * d[k]).astype(np.int64)
        idx[:, k] = np.minimum(i, d[k] - 1)
    return p.flat_index(tuple(idx[:, k] for k in range(p.domain.dim)))


def locate(p: Partition, x) -> int:
    return int(locate_many(p, np.asarray(x, dtype=float).reshape(1, -1))[0])


def refine(p: Partition, factor: Sequence[int]) -> Partition:
    """Refinement: multiply per-axis counts; parents are exact child unions."""
    factor = tuple(int(f) for f in factor)
    if len(factor) != p.domain.dim:
        raise ValueError("factor length must match dimension")
    if any(f < 1 for f in factor):
        raise ValueError(f"refinement factors must be >= 1, got {factor}")
    dims = tuple(d * f for d, f in zip(p.dims, factor))
    return Partition(p.domain, dims, level=p.level + 1, padded=p.padded)


@dataclass(frozen=True, eq=False)
class CellMask:
    """Per-cell active flags on a partition (energy-restricted domains)."""

    partition: Partition
    active: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool)
        if a.shape != (self.partition.q,):
            raise ValueError("mask length must equal cell count")
        object.__setattr__(self, "active", _readonly(a))

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def active_volume(self) -> float:
        return self.active_count * self.partition.cell_volume

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def mask_sublevel(p: Partition, H: Callable, level: float) -> CellMask:
    """Cell active iff H(cell center) <= level.

    H may be vectorized over an (q, m) array of points or accept single
    points; the boundary error of the center test vanishes under refinement.
    """
    centers = cell_centers(p)
    try:
        vals = np.asarray(H(centers), dtype=float)
        if vals.shape != (p.q,):
            raise TypeError
    except TypeError:
        vals = np.array([float(H(c)) for c in centers])
    return CellMask(p, vals <= level)


def pad_axis(p: Partition, axis: int, cells: int, mask_active: np.ndarray = None) -> Partition:
    """Extend a non-periodic axis by ``cells`` cells per side and close it
    periodically.  Cell extents are unchanged; the returned partition has the
    axis marked both periodic and padded, so lattice shears enforce that no
    in-mask cell ever crosses the artificial seam."""
    if cells < 0:
        raise ValueError("pad cell count must be >= 0")
    if p.domain.periodic[axis]:
        raise ValueError(f"axis {axis} is already periodic")
    if cells == 0:
        return p
    dx = float(p.cell_extent[axis])
    lo = list(p.domain.lo)
    hi = list(p.domain.hi)
    per = list(p.domain.periodic)
    lo[axis] -= cells * dx
    hi[axis] += cells * dx
    per[axis] = True
    dims = list(p.dims)
    dims[axis] += 2 * cells
    padded = list(p.padded)
    padded[axis] = True
    return Partition(
        Domain(tuple(lo), tuple(hi), tuple(per)),
        tuple(dims),
        level=p.level,
        padded=tuple(padded),
    )


def pairwise_distance(domain: Domain, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs Euclidean distance (n_a, n_b) in the box metric, wrapping
    coordinate differences on periodic axes."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    w = domain.widths
    acc = np.zeros((a.shape[0], b.shape[0]))
    for k in range(domain.dim):
        diff = np.abs(a[:, k, None] - b[None, :, k])
        if domain.periodic[k]:
            diff = np.minimum(diff, w[k] - diff)
        acc += diff**2
    return np.sqrt(acc)
