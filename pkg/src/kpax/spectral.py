"""Discrete Koopman spectral engine on permutation approximations.

The permutation operator acts on per-cell coefficient vectors by composition;
restricted to one cycle of length L it is a cyclic shift, so its
eigendecomposition is the length-L discrete Fourier transform and every
eigenvalue is a root of unity.  Atom frequencies are folded into the spectral
band [-pi/tau, pi/tau) at the integer-harmonic level, which keeps Nyquist
placement exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .approx import CycleSet, Permutation, cycles, perm_power_indices
from .partition import CellMask, Partition, cell_centers

__all__ = [
    "DiscreteObservable",
    "Spectrum",
    "Band",
    "Mollifier",
    "BandRangeError",
    "ObservableValueError",
    "average_observable",
    "evolve",
    "xi",
    "bandwidth",
    "alias_fold",
    "compute_spectrum",
    "band_project",
    "smoothed_indicator",
    "density",
    "cumulative",
]


class BandRangeError(ValueError):
    """Band lies (partly) outside the spectral bandwidth."""


class ObservableValueError(ArithmeticError):
    """Observable produced a non-finite value."""


@dataclass(eq=False)
class DiscreteObservable:
    """Per-cell complex coefficients; masked-out cells carry coefficient 0."""

    partition: Partition
    coeffs: np.ndarray = field(repr=False)
    mask: Optional[CellMask] = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=complex)
        if c.shape != (self.partition.q,):
            raise ValueError("coefficient length must equal cell count")
        self.coeffs = c

    @property
    def norm_sq(self) -> float:
        # cell measure mu(X)/q; equals active-volume / active-count for masks
        return self.partition.cell_volume * float(np.sum(np.abs(self.coeffs) ** 2))

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)


@dataclass(frozen=True)
class Band:
    """Half-open frequency interval [a, b)."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b})")


@dataclass(eq=False)
class Spectrum:
    """Atomic spectral measure: one (frequency, weight) atom per
    (cycle, harmonic), kept separate per cycle; merge on demand."""

    tau: float
    omega_hat: float
    omegas: np.ndarray
    weights: np.ndarray
    cycle_ids: np.ndarray
    cycle_lens: np.ndarray
    harmonics: np.ndarray
    norm_sq: float

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def merged(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct frequencies with exactly-coinciding atoms summed."""
        om, inv = np.unique(self.omegas, return_inverse=True)
        w = np.zeros_like(om)
        np.add.at(w, inv, self.weights)
        return om, w


def xi(t: float, tau: float) -> float:
    """Snap a time onto the tau-grid, away from zero."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return math.copysign(math.ceil(abs(t) / tau) * tau, t) if t else 0.0


def bandwidth(tau: float) -> float:
    """Spectral bandwidth pi/tau of the time-discretized operator."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return math.pi / tau


def alias_fold(omega, omega_hat: float):
    """The unique representative of omega in [-omega_hat, omega_hat) modulo
    2*omega_hat shifts."""
    if omega_hat <= 0:
        raise ValueError("omega_hat must be positive")
    return ((omega + omega_hat) % (2.0 * omega_hat)) - omega_hat


def average_observable(
    g: Callable[[np.ndarray], np.ndarray],
    p: Partition,
    mask: Optional[CellMask] = None,
    quad_points: int = 1,
) -> DiscreteObservable:
    """Project a pointwise observable onto the cell-indicator subspace by
    cellwise averaging (midpoint rule; stratified midpoints when
    quad_points > 1).  Only in-mask cells are evaluated."""
    if quad_points < 1:
        raise ValueError("quad_points must be >= 1")
    m = p.domain.dim
    s = max(1, math.ceil(quad_points ** (1.0 / m) - 1e-9))
    active = mask.indices() if mask is not None else np.arange(p.q)

    axes = [(np.arange(s) + 0.5) / s for _ in range(m)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    centers = cell_centers(p, active)
    lows = centers - 0.5 * p.cell_extent
    nodes = lows[:, None, :] + mesh[None, :, :] * p.cell_extent

    vals = np.asarray(g(nodes.reshape(-1, m)), dtype=complex).reshape(len(active), -1)
    if not np.all(np.isfinite(vals)):
        bad = int(active[np.argmax(~np.all(np.isfinite(vals), axis=1))])
        raise ObservableValueError(f"observable non-finite in cell {bad}")
    coeffs = np.zeros(p.q, dtype=complex)
    coeffs[active] = vals.mean(axis=1)
    return DiscreteObservable(p, coeffs, mask)


def evolve(perm: Permutation, g: DiscreteObservable, k: int) -> DiscreteObservable:
    """Apply the permutation operator k times: result_j = g at sigma^k(j).

    Norm is preserved exactly (coefficients are permuted), and k = zeta
    returns g unchanged."""
    if perm.partition != g.partition:
        raise ValueError("permutation and observable partitions differ")
    idx = perm_power_indices(perm, k)
    return DiscreteObservable(g.partition, g.coeffs[idx], g.mask)


def _cycle_groups(cycs: CycleSet) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Group cycles by length: length -> (cycle ids, stacked index rows)."""
    by_len: dict[int, list[int]] = {}
    for cid, c in enumerate(cycs.cycles):
        by_len.setdefault(len(c), []).append(cid)
    out = {}
    for L, ids in by_len.items():
        rows = np.stack([cycs.cycles[cid] for cid in ids])
        out[L] = (np.asarray(ids), rows)
    return out


def _folded_harmonics(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Harmonics 0..L-1 and their aliased fractions m*/L in [-1/2, 1/2)."""
    m = np.arange(L)
    m_star = np.where(m < (L + 1) // 2, m, m - L)
    return m, m_star / L


def compute_spectrum(
    perm: Permutation,
    g: DiscreteObservable,
    tau: Optional[float] = None,
    cycs: Optional[CycleSet] = None,
) -> Spectrum:
    """Full atomic spectrum of the observable under the permutation operator.

    Per cycle of length L, the unitary DFT of the coefficients along the
    cycle gives harmonic m an atom at omega = fold(2 pi m / (L tau)) with
    weight (mu(X)/q) |g_hat(m)|^2; Parseval then holds by construction.
    """
    if perm.partition != g.partition:
        raise ValueError("permutation and observable partitions differ")
    tau = perm.tau if tau is None else tau
    if tau <= 0:
        raise ValueError("tau must be positive")
    w_hat = bandwidth(tau)
    cv = perm.partition.cell_volume
    if cycs is None:
        cycs = cycles(perm)

    om_parts, w_parts, cid_parts, len_parts, harm_parts = [], [], [], [], []
    for L, (ids, rows) in _cycle_groups(cycs).items():
        h = g.coeffs[rows]                      # (n_cycles, L)
        F = np.fft.fft(h, axis=1) / math.sqrt(L)
        weights = cv * np.abs(F) ** 2
        m, frac = _folded_harmonics(L)
        omegas = (2.0 * math.pi * frac) / tau
        n = len(ids)
        om_parts.append(np.tile(omegas, n))
        w_parts.append(weights.reshape(-1))
        cid_parts.append(np.repeat(ids, L))
        len_parts.append(np.full(n * L, L, dtype=np.int64))
        harm_parts.append(np.tile(m, n))

    omegas = np.concatenate(om_parts)
    weights = np.concatenate(w_parts)
    cids = np.concatenate(cid_parts)
    lens = np.concatenate(len_parts)
    harms = np.concatenate(harm_parts)
    order = np.lexsort((harms, cids))           # deterministic atom order
    return Spectrum(
        tau,
        w_hat,
        omegas[order],
        weights[order],
        cids[order],
        lens[order],
        harms[order],
        g.norm_sq,
    )


def band_project(
    perm: Permutation,
    g: DiscreteObservable,
    tau: Optional[float] = None,
    band: Band = None,
    cycs: Optional[CycleSet] = None,
) -> DiscreteObservable:
    """Orthogonal projection onto the spectral band: per cycle, the inverse
    DFT keeping only harmonics whose folded frequency lies in [a, b)."""
    if band is None:
        raise ValueError("band is required")
    if perm.partition != g.partition:
        raise ValueError("permutation and observable partitions differ")
    tau = perm.tau if tau is None else tau
    w_hat = bandwidth(tau)
    if band.a < -w_hat or band.b > w_hat:
        raise BandRangeError(
            f"band [{band.a}, {band.b}) outside [-{w_hat}, {w_hat})"
        )
    if cycs is None:
        cycs = cycles(perm)
    out = np.zeros(perm.q, dtype=complex)
    for L, (_ids, rows) in _cycle_groups(cycs).items():
        F = np.fft.fft(g.coeffs[rows], axis=1)
        _m, frac = _folded_harmonics(L)
        omegas = (2.0 * math.pi * frac) / tau
        keep = (omegas >= band.a) & (omegas < band.b)
        F[:, ~keep] = 0.0
        out[rows.reshape(-1)] = np.fft.ifft(F, axis=1).reshape(-1)
    return DiscreteObservable(g.partition, out, g.mask)


# ---------------------------------------------------------------------------
# Mollifier machinery


@lru_cache(maxsize=1)
def bump_normalization() -> float:
    """K = 1 / integral_{-1}^{1} exp(-1/(1-u^2)) du, by adaptive quadrature."""
    from scipy.integrate import quad

    val, _err = quad(
        lambda u: math.exp(-1.0 / (1.0 - u * u)), -1.0, 1.0,
        epsabs=1e-13, epsrel=1e-13,
    )
    return 1.0 / val


@dataclass(frozen=True)
class Mollifier:
    """Compactly supported bump kernel of half-width alpha, unit mass."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def normalization(self) -> float:
        return bump_normalization()

    def kernel(self, x, y) -> np.ndarray:
        """phi_alpha(x, y); vanishes for |x - y| >= alpha."""
        u = (np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) / self.alpha
        au = np.abs(u)
        inside = au < 1.0
        safe = np.where(inside, au, 0.0)
        vals = (self.normalization / self.alpha) * np.exp(
            -1.0 / np.where(inside, 1.0 - safe * safe, 1.0)
        )
        return np.where(inside, vals, 0.0)


def smoothed_indicator(band: Band, mol: Mollifier, omega: float) -> float:
    """Indicator of the band convolved with the bump, evaluated at omega:
    1 deep inside, 0 far outside, 1/2 exactly at an endpoint."""
    from scipy.integrate import quad

    lo = max(band.a, omega - mol.alpha)
    hi = min(band.b, omega + mol.alpha)
    if hi <= lo:
        return 0.0
    val, _err = quad(
        lambda s: float(mol.kernel(omega, s)), lo, hi, epsabs=1e-11, epsrel=1e-11
    )
    return float(min(max(val, 0.0), 1.0))


def density(spec: Spectrum, mol: Mollifier, grid: np.ndarray) -> np.ndarray:
    """Mollified spectral density on a frequency grid.

    The measure is atomic, so the convolution is an exact finite sum
    sum_atoms weight * phi_alpha(omega, omega_atom); atoms farther than alpha
    from a grid point contribute nothing there."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1:
        raise ValueError("grid must be a 1-d array")
    if len(grid) > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    om, w = spec.merged()
    out = np.zeros_like(grid)
    lo_idx = np.searchsorted(grid, om - mol.alpha, side="left")
    hi_idx = np.searchsorted(grid, om + mol.alpha, side="right")
    for o, wt, lo, hi in zip(om, w, lo_idx, hi_idx):
        if hi > lo and wt != 0.0:
            out[lo:hi] += wt * mol.kernel(grid[lo:hi], o)
    return out


def cumulative(spec: Spectrum, omega: float) -> float:
    """Spectral cumulative function: total weight strictly below omega
    (left-continuous at atoms)."""
    return float(spec.weights[spec.omegas < omega].sum())
