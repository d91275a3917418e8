"""Benchmark measure-preserving flows, their shear splittings, and observables.

Each flow is a small immutable spec.  ``vector_field`` evaluates the ODE
right-hand side, ``shear_splitting`` produces the volume-preserving shear
decomposition of the time-tau map where one exists, and ``integrate_tau``
advances points either by composed shears or by a classical 4-stage
Runge-Kutta step (quadruple gyre, whose x1-rate depends on x1 itself).

All functions broadcast over leading axes: ``x`` has shape (..., m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .partition import Domain

__all__ = [
    "Translation",
    "Pendulum",
    "Duffing",
    "QuadrupleGyre",
    "ABCFlow",
    "FlowSpec",
    "ShearStep",
    "SplittingScheme",
    "UnsupportedSplittingError",
    "NumericalBlowupError",
    "vector_field",
    "shear_splitting",
    "integrate_tau",
    "integrate_reference",
    "default_domain",
    "energy_function",
    "energy_level",
    "OBSERVABLES",
    "FLOW_NAMES",
]

TWO_PI = 2.0 * math.pi


class UnsupportedSplittingError(ValueError):
    """The flow admits no shear decomposition of its tau-map."""


class NumericalBlowupError(ArithmeticError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class Translation:
    """Rigid rotation of the circle [0,1) with drift omega."""

    omega: float


@dataclass(frozen=True)
class Pendulum:
    """Simple pendulum on the cylinder, restricted to an energy sub-level set."""


@dataclass(frozen=True)
class Duffing:
    """Duffing oscillator x2' = -b x1 - a x1^3 on an energy sub-level set."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("parameters must be finite")


@dataclass(frozen=True)
class QuadrupleGyre:
    """Four-cell gyre with time-periodic perturbation; third state is time."""

    amplitude: float
    eps: float

    def __post_init__(self):
        if not (np.isfinite(self.amplitude) and np.isfinite(self.eps)):
            raise ValueError("parameters must be finite")
        # eps < 1/4 keeps the coordinate stretchings f1, f2 monotone on [0,1]
        if not (0.0 <= self.eps < 0.25):
            raise ValueError(f"eps must lie in [0, 0.25), got {self.eps}")


@dataclass(frozen=True)
class ABCFlow:
    """Arnold-Beltrami-Childress flow on the unit 3-torus.

    The trigonometric arguments are taken as 2*pi*coordinate so the field is
    1-periodic on [0,1)^3, matching the 1/(2*pi)-scaled coefficients used in
    the benchmark runs.
    """

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError("parameters must be finite")


FlowSpec = Union[Translation, Pendulum, Duffing, QuadrupleGyre, ABCFlow]

FLOW_NAMES = {
    "translation": Translation,
    "pendulum": Pendulum,
    "duffing": Duffing,
    "quadruple_gyre": QuadrupleGyre,
    "abc": ABCFlow,
}


def _gyre_f(u: np.ndarray, x3: np.ndarray, eps: float):
    """Coordinate stretching f(u, x3) and its u-derivative."""
    s = 4.0 * eps * np.sin(TWO_PI * x3)
    return s * u**2 + (2.0 - s) * u, 2.0 * s * u + (2.0 - s)


def vector_field(spec: FlowSpec, x: np.ndarray) -> np.ndarray:
    """Right-hand side of the flow's ODE at x, shape-preserving."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    if isinstance(spec, Translation):
        out[..., 0] = spec.omega
    elif isinstance(spec, Pendulum):
        out[..., 0] = x[..., 1]
        out[..., 1] = -np.sin(x[..., 0])
    elif isinstance(spec, Duffing):
        out[..., 0] = x[..., 1]
        out[..., 1] = -spec.b * x[..., 0] - spec.a * x[..., 0] ** 3
    elif isinstance(spec, QuadrupleGyre):
        A, eps = spec.amplitude, spec.eps
        f1, df1 = _gyre_f(x[..., 0], x[..., 2], eps)
        f2, df2 = _gyre_f(x[..., 1], x[..., 2], eps)
        out[..., 0] = math.pi * A * np.sin(math.pi * f1) * np.cos(math.pi * f2) * df1
        out[..., 1] = -math.pi * A * np.cos(math.pi * f1) * np.sin(math.pi * f2) * df2
        out[..., 2] = 1.0
    elif isinstance(spec, ABCFlow):
        A, B, C = spec.a, spec.b, spec.c
        s = np.sin(TWO_PI * x)
        c = np.cos(TWO_PI * x)
        out[..., 0] = A * s[..., 2] + C * c[..., 1]
        out[..., 1] = B * s[..., 0] + A * c[..., 2]
        out[..., 2] = C * s[..., 1] + B * c[..., 0]
    else:
        raise TypeError(f"unknown flow spec {spec!r}")
    return out


@dataclass(frozen=True)
class ShearStep:
    """Displacement of one coordinate by a function of the others.

    ``displacement`` maps points (..., m) to displacements (...,) and must not
    depend on coordinate ``axis`` -- that is what makes the step an exact
    volume-preserving shear (unit-triangular Jacobian).
    """

    axis: int
    displacement: Callable[[np.ndarray], np.ndarray]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        x[..., self.axis] += self.displacement(x)
        return x


@dataclass(frozen=True)
class SplittingScheme:
    """Ordered shear steps composing one tau-map; applied in list order."""

    steps: tuple[ShearStep, ...]
    tau: float
    order: int = 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        for step in self.steps:
            x = step.apply(x)
        return x


def shear_splitting(spec: FlowSpec, tau: float) -> SplittingScheme:
    """Shear decomposition of the tau-map.

    Translation is a single constant shear.  Pendulum and Duffing use the
    position-then-momentum Lie pair (each half a pure shear, so the induced
    lattice permutation is exact per step).  The ABC tau-map is the classical
    three-shear composition updating axes 1, 2, 3 sequentially.  The gyre has
    no shear form (its x1-rate depends on x1); use integrate_tau + matching.
    """
    if isinstance(spec, Translation):
        om = spec.omega
        return SplittingScheme(
            (ShearStep(0, lambda x, d=om * tau: np.full(x.shape[:-1], d)),), tau
        )
    if isinstance(spec, Pendulum):
        return SplittingScheme(
            (
                ShearStep(0, lambda x: tau * x[..., 1]),
                ShearStep(1, lambda x: -tau * np.sin(x[..., 0])),
            ),
            tau,
        )
    if isinstance(spec, Duffing):
        a, b = spec.a, spec.b
        return SplittingScheme(
            (
                ShearStep(0, lambda x: tau * x[..., 1]),
                ShearStep(1, lambda x: tau * (-b * x[..., 0] - a * x[..., 0] ** 3)),
            ),
            tau,
        )
    if isinstance(spec, ABCFlow):
        A, B, C = spec.a, spec.b, spec.c
        return SplittingScheme(
            (
                ShearStep(
                    0,
                    lambda x: tau
                    * (A * np.sin(TWO_PI * x[..., 2]) + C * np.cos(TWO_PI * x[..., 1])),
                ),
                ShearStep(
                    1,
                    lambda x: tau
                    * (B * np.sin(TWO_PI * x[..., 0]) + A * np.cos(TWO_PI * x[..., 2])),
                ),
                ShearStep(
                    2,
                    lambda x: tau
                    * (C * np.sin(TWO_PI * x[..., 1]) + B * np.cos(TWO_PI * x[..., 0])),
                ),
            ),
            tau,
        )
    raise UnsupportedSplittingError(
        f"{type(spec).__name__} admits no shear splitting"
    )


def _rk4(spec: FlowSpec, x: np.ndarray, h: float, steps: int) -> np.ndarray:
    for _ in range(steps):
        k1 = vector_field(spec, x)
        k2 = vector_field(spec, x + 0.5 * h * k1)
        k3 = vector_field(spec, x + 0.5 * h * k2)
        k4 = vector_field(spec, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def integrate_tau(
    spec: FlowSpec, tau: float, x: np.ndarray, substeps: int = 1
) -> np.ndarray:
    """Approximate the time-tau flow map at x.

    Exact for Translation; composed shear sub-steps where a splitting exists
    (each applied ``substeps`` times with step tau/substeps); classical 4-stage
    Runge-Kutta for the quadruple gyre.  Periodic axes are wrapped on output.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x, dtype=float)
    if tau == 0.0:
        return x.copy()
    dom = default_domain(spec)
    if isinstance(spec, Translation):
        y = x.copy()
        y[..., 0] += spec.omega * tau
    elif isinstance(spec, QuadrupleGyre):
        y = _rk4(spec, x, tau / substeps, substeps)
    else:
        scheme = shear_splitting(spec, tau / substeps)
        y = x
        for _ in range(substeps):
            y = scheme.apply(y)
    if not np.all(np.isfinite(y)):
        raise NumericalBlowupError("integration produced non-finite state")
    return dom.wrap(y)


def integrate_reference(
    spec: FlowSpec, tau: float, x: np.ndarray, substeps: int = 256
) -> np.ndarray:
    """High-accuracy RK4 reference path for any flow (wrapped like
    integrate_tau); independent of the shear-splitting route."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x, dtype=float)
    if tau == 0.0:
        return x.copy()
    y = _rk4(spec, x, tau / substeps, substeps)
    if not np.all(np.isfinite(y)):
        raise NumericalBlowupError("integration produced non-finite state")
    return default_domain(spec).wrap(y)


# ---------------------------------------------------------------------------
# Domains and energy sub-level sets


def energy_function(spec: FlowSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Conserved energy H(x) for the Hamiltonian benchmark flows."""
    if isinstance(spec, Pendulum):
        return lambda x: 0.5 * np.asarray(x)[..., 1] ** 2 - np.cos(np.asarray(x)[..., 0])
    if isinstance(spec, Duffing):
        a, b = spec.a, spec.b
        return lambda x: (
            0.5 * np.asarray(x)[..., 1] ** 2
            + 0.5 * b * np.asarray(x)[..., 0] ** 2
            + 0.25 * a * np.asarray(x)[..., 0] ** 4
        )
    raise ValueError(f"{type(spec).__name__} has no energy restriction")


def energy_level(spec: FlowSpec) -> float:
    """Sub-level threshold bounding the benchmark domain."""
    if isinstance(spec, Pendulum):
        return 0.5 * math.pi**2 + 1.0
    if isinstance(spec, Duffing):
        a, b = spec.a, spec.b
        return 0.5 * math.pi**2 + 0.5 * b * math.pi**2 + 0.25 * a * math.pi**4
    raise ValueError(f"{type(spec).__name__} has no energy restriction")


def default_domain(spec: FlowSpec) -> Domain:
    """Tight ambient box for each flow (periodic flags per variant)."""
    if isinstance(spec, Translation):
        return Domain((0.0,), (1.0,), (True,))
    if isinstance(spec, Pendulum):
        c = math.sqrt(math.pi**2 + 4.0)
        return Domain((0.0, -c), (TWO_PI, c), (True, False))
    if isinstance(spec, Duffing):
        a, b = spec.a, spec.b
        if a <= 0:
            raise ValueError("Duffing energy sub-level set is compact only for a > 0")
        lev = energy_level(spec)
        vmin = -(b * b) / (4.0 * a) if b < 0 else 0.0
        x2max = math.sqrt(2.0 * (lev - vmin))
        x1max = math.sqrt((-b + math.sqrt(b * b + 4.0 * a * lev)) / a)
        return Domain((-x1max, -x2max), (x1max, x2max), (False, False))
    if isinstance(spec, QuadrupleGyre):
        return Domain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (False, False, True))
    if isinstance(spec, ABCFlow):
        return Domain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (True, True, True))
    raise TypeError(f"unknown flow spec {spec!r}")


# ---------------------------------------------------------------------------
# Built-in observables (complex-valued, vectorized over (..., m))


def obs_pendulum(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return (0.5 * x[..., 1] ** 2 - np.cos(x[..., 0])).astype(complex)


def obs_duffing_energy(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return (0.5 * x[..., 1] ** 2 - 0.5 * x[..., 0] ** 2 + 0.25 * x[..., 0] ** 4).astype(
        complex
    )


def obs_duffing_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return 0.5 * x[..., 1] ** 2 + 0.5j * x[..., 0] ** 2


def gyre_bump(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Bump factor supported on the radius-1/2 disk about (1/2, 1/2)."""
    r2 = (np.asarray(x1, dtype=float) - 0.5) ** 2 + (np.asarray(x2, dtype=float) - 0.5) ** 2
    inside = r2 <= 0.25
    r = np.sqrt(r2)
    # inside the disk r <= 1/2, so the clip only guards masked-out entries
    val = np.exp(-1.0 / (1.0 - 0.5 * np.minimum(r, 1.0)))
    return np.where(inside, val, 0.0)


def obs_gyre(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return 1j * np.sin(4.0 * math.pi * x[..., 0]) * np.sin(
        4.0 * math.pi * x[..., 1]
    ) + 4.0 * gyre_bump(x[..., 0], x[..., 1])


def obs_abc(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return (
        np.exp(4j * math.pi * x[..., 1])
        + 2.0 * np.exp(6j * math.pi * x[..., 0])
        + np.exp(2j * math.pi * x[..., 2])
    )


OBSERVABLES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "obs_pendulum": obs_pendulum,
    "obs_duffing_energy": obs_duffing_energy,
    "obs_duffing_complex": obs_duffing_complex,
    "obs_gyre": obs_gyre,
    "obs_abc": obs_abc,
}
