"""First-order upwind / Ulam circulant discretization of the circle
translation flow, with explicit eigenvalues, a DFT oracle, and the optimal
shift-permutation approximation with its recovered drift.

Continuous-time rates are only defined modulo 2i*pi/tau (one aliasing band);
``numeric_eigs`` therefore reports imaginary parts folded into
[-pi/tau, pi/tau), and ``eig_deviation`` folds the analytic branch the same
way before differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approx import Permutation
from .partition import Domain, Partition
from .spectral import alias_fold, bandwidth

__all__ = [
    "UpwindSpec",
    "UlamCirculant",
    "EigenSet",
    "upwind_matrix",
    "analytic_eigs",
    "numeric_eigs",
    "eig_deviation",
    "optimal_translation_perm",
]

_DENSE_LIMIT = 256   # dense materialization is an oracle-only path
_MAX_GRID = 2**16
# below this magnitude a step eigenvalue is the degenerate exact cancellation
# (e.g. gamma = 1/2 at the Nyquist mode) up to round-off in exp(i pi)
_ZERO_EIG = 1e-13


@dataclass(frozen=True)
class UpwindSpec:
    """Level-n discretization: grid r^n cells, time step gamma/(omega w^n)."""

    gamma: float
    r: int
    w: int
    n: int
    omega: float = 1.0

    def __post_init__(self):
        # gamma = 0 is permitted as the degenerate identity-operator case
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.r <= 1 or self.w <= 1:
            raise ValueError("spatial/temporal bases must be integers > 1")
        if self.n < 1:
            raise ValueError("level n must be >= 1")
        if self.omega == 0:
            raise ValueError("drift omega must be nonzero")
        if self.gamma > 0 and self.tau <= 0:
            raise ValueError("tau = gamma/(omega w^n) must be positive")

    @property
    def size(self) -> int:
        return self.r**self.n

    @property
    def rho(self) -> float:
        return (self.r / self.w) ** self.n

    @property
    def tau(self) -> float:
        return self.gamma / (self.omega * self.w**self.n)


@dataclass(frozen=True)
class UlamCirculant:
    """Circulant step matrix stored by its two nonzero first-column values:
    1 - gamma*rho on the diagonal, gamma*rho on the cyclic subdiagonal."""

    size: int
    diag: float
    sub: float

    def first_column(self) -> np.ndarray:
        col = np.zeros(self.size)
        col[0] = self.diag
        if self.size > 1:
            col[1] = self.sub
        else:
            col[0] += self.sub
        return col

    def dense(self) -> np.ndarray:
        if self.size > _DENSE_LIMIT:
            raise ValueError(
                f"dense form is reserved for sizes <= {_DENSE_LIMIT}"
            )
        col = self.first_column()
        idx = (np.arange(self.size)[:, None] - np.arange(self.size)[None, :]) % self.size
        return col[idx]

    @property
    def doubly_stochastic(self) -> bool:
        return 0.0 <= self.sub <= 1.0 and self.diag >= 0.0


def upwind_matrix(spec: UpwindSpec) -> UlamCirculant:
    jump = spec.gamma * spec.rho
    return UlamCirculant(spec.size, 1.0 - jump, jump)


@dataclass(eq=False)
class EigenSet:
    """Eigenvalue list labeled by 1-based index j and wavenumber kappa.

    Infinite-decay modes (zero step eigenvalue) carry re = -inf, im = 0.
    """

    j: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    gamma: float
    n: int


def _kappas(N: int) -> np.ndarray:
    j = np.arange(1, N + 1, dtype=float)
    return np.rint(np.mod(j - 1.0 - N / 2.0, N) - N / 2.0).astype(np.int64)


def analytic_eigs(spec: UpwindSpec) -> EigenSet:
    """Closed-form eigenvalues for the r = w case, principal-branch log with
    the 2*pi*kappa*omega*i band term added separately."""
    if spec.r != spec.w:
        raise ValueError("closed-form eigenvalues require r = w")
    N = spec.size
    g = spec.gamma
    kap = _kappas(N)
    if g == 0.0:
        return EigenSet(np.arange(1, N + 1), kap, np.zeros(N, dtype=complex), g, spec.n)
    phi = 2.0 * math.pi * kap / N
    num = 1.0 - g + g * np.exp(1j * phi)
    quot = num * np.exp(-1j * g * phi)
    lam = np.empty(N, dtype=complex)
    zero = np.abs(num) < _ZERO_EIG
    scale = spec.omega * spec.r**spec.n / g  # equals 1/tau for r = w
    lam[~zero] = 2j * math.pi * kap[~zero] * spec.omega + scale * np.log(quot[~zero])
    lam[zero] = complex(-math.inf, 0.0)
    return EigenSet(np.arange(1, N + 1), kap, lam, g, spec.n)


def numeric_eigs(spec: UpwindSpec) -> EigenSet:
    """DFT oracle: step-matrix eigenvalues from the first column, then
    lam = log(step eigenvalue)/tau with the imaginary part alias-folded."""
    N = spec.size
    if N > _MAX_GRID:
        raise ValueError(f"grid size {N} exceeds {_MAX_GRID}")
    kap = _kappas(N)
    if spec.gamma == 0.0:  # identity step matrix, no time elapses
        return EigenSet(np.arange(1, N + 1), kap, np.zeros(N, dtype=complex), 0.0, spec.n)
    F = np.fft.fft(upwind_matrix(spec).first_column())
    vals = F[(-kap) % N]  # DFT index j0 with e^{-2 pi i j0/N} = e^{2 pi i kappa/N}
    w_hat = bandwidth(spec.tau)
    lam = np.empty(N, dtype=complex)
    zero = np.abs(vals) < _ZERO_EIG
    logs = np.log(vals[~zero])
    lam[~zero] = logs.real / spec.tau + 1j * alias_fold(logs.imag / spec.tau, w_hat)
    lam[zero] = complex(-math.inf, 0.0)
    return EigenSet(np.arange(1, N + 1), kap, lam, spec.gamma, spec.n)


def eig_deviation(a: EigenSet, b: EigenSet, tau: float) -> float:
    """Max absolute eigenvalue difference after folding imaginary parts into
    the spectral band; infinite-decay entries must pair up."""
    if len(a.lam) != len(b.lam) or not np.array_equal(a.kappa, b.kappa):
        raise ValueError("eigen sets are not label-aligned")
    w_hat = bandwidth(tau)
    inf_a = np.isneginf(a.lam.real)
    inf_b = np.isneginf(b.lam.real)
    if not np.array_equal(inf_a, inf_b):
        return math.inf
    keep = ~inf_a
    re = np.abs(a.lam.real[keep] - b.lam.real[keep])
    im = np.abs(
        alias_fold(a.lam.imag[keep], w_hat) - alias_fold(b.lam.imag[keep], w_hat)
    )
    if not np.any(keep):
        return 0.0
    return float(max(re.max(), im.max()))


def optimal_translation_perm(spec: UpwindSpec) -> tuple[Permutation, float]:
    """Cost-optimal periodic approximation of the circle translation: a
    cyclic shift by nearest-integer(gamma (r/w)^n), half-integers rounded up,
    along with the drift of the shift map's exact discretization."""
    N = spec.size
    steps = math.floor(spec.gamma * spec.rho + 0.5)
    p = Partition(Domain((0.0,), (1.0,), (True,)), (N,), level=spec.n)
    image = (np.arange(N, dtype=np.int64) + steps) % N
    if steps == 0:
        omega_rec = 0.0
    else:
        omega_rec = steps * (spec.omega / spec.gamma) * (spec.w / spec.r) ** spec.n
    return Permutation(p, image, spec.tau, "lattice"), omega_rec
