"""Flat key=value run configuration with sectioned keys.

Sections: flow.*, partition.*, spectral.*, sweep.*, sampling.*, run.*,
output.*, convergence.*, upwind.*.  Lines are ``key = value``; ``#`` starts
a comment.  Unknown keys are rejected so typos fail fast (exit code 2 at the
CLI).  The full schema is listed in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .flows import (
    ABCFlow,
    Duffing,
    FlowSpec,
    OBSERVABLES,
    Pendulum,
    QuadrupleGyre,
    Translation,
)
from .spectral import Band, bandwidth

__all__ = ["ConfigError", "RunConfig", "parse_config_file", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


_KNOWN_KEYS = {
    "flow.variant",
    "flow.omega",
    "flow.a",
    "flow.b",
    "flow.c",
    "flow.amplitude",
    "flow.eps",
    "partition.dims",
    "partition.lo",
    "partition.hi",
    "partition.periodic",
    "spectral.tau",
    "spectral.alpha",
    "spectral.bands",
    "spectral.observable",
    "spectral.observable_file",
    "spectral.quad_points",
    "sweep.b",
    "sampling.seed",
    "sampling.samples_per_cell",
    "run.workers",
    "run.perm_cache",
    "output.dir",
    "convergence.levels",
    "convergence.r",
    "convergence.w",
    "convergence.gamma",
    "convergence.space_factor",
    "convergence.time_factor",
    "convergence.time",
    "convergence.sample_density",
    "convergence.set",
    "upwind.gammas",
    "upwind.ns",
    "upwind.r",
    "upwind.w",
    "upwind.omega",
}

_OBSERVABLE_IDS = set(OBSERVABLES) | {"user_grid"}


def parse_config_file(path) -> dict[str, str]:
    """Read a key=value file into a flat dict (values as raw strings)."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip() != ""]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip() != ""]


def _bools(s: str) -> list[bool]:
    out = []
    for v in s.split(","):
        v = v.strip().lower()
        if v in ("true", "1", "yes"):
            out.append(True)
        elif v in ("false", "0", "no"):
            out.append(False)
        else:
            raise ConfigError(f"expected boolean, got {v!r}")
    return out


def _bands(s: str) -> list[Band]:
    bands = []
    for part in s.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = _floats(part)
        if len(vals) != 2:
            raise ConfigError(f"band needs two values 'a,b', got {part!r}")
        try:
            bands.append(Band(vals[0], vals[1]))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return bands


@dataclass
class RunConfig:
    """Validated run configuration shared by all CLI subcommands."""

    flow_name: str
    flow: Optional[FlowSpec]
    dims: tuple[int, ...]
    tau: float
    alpha: float
    bands: list[Band]
    observable: str
    observable_file: Optional[Path]
    quad_points: int
    b_sweep: list[float]
    seed: int
    samples_per_cell: int
    workers: int
    out_dir: Path
    perm_cache: Optional[Path]
    domain_lo: Optional[tuple[float, ...]]
    domain_hi: Optional[tuple[float, ...]]
    domain_periodic: Optional[tuple[bool, ...]]
    conv_levels: list[int]
    conv_r: int
    conv_w: int
    conv_gamma: float
    conv_space_factor: int
    conv_time_factor: float
    conv_time: float
    conv_sample_density: int
    conv_set: list[tuple[float, float]]
    up_gammas: list[float]
    up_ns: list[int]
    up_r: int
    up_w: int
    up_omega: float


def _build_flow(name: str, kv: dict[str, str]) -> FlowSpec:
    try:
        if name == "translation":
            return Translation(float(kv.get("flow.omega", 1.0)))
        if name == "pendulum":
            return Pendulum()
        if name == "duffing":
            return Duffing(float(kv.get("flow.a", 1.0)), float(kv.get("flow.b", -1.0)))
        if name == "quadruple_gyre":
            return QuadrupleGyre(
                float(kv.get("flow.amplitude", 1.0 / (2.0 * math.pi))),
                float(kv.get("flow.eps", 0.05)),
            )
        if name == "abc":
            return ABCFlow(
                float(kv.get("flow.a", math.sqrt(3.0) / (2.0 * math.pi))),
                float(kv.get("flow.b", math.sqrt(2.0) / (2.0 * math.pi))),
                float(kv.get("flow.c", 1.0 / (2.0 * math.pi))),
            )
    except ValueError as e:
        raise ConfigError(f"bad flow parameters: {e}") from None
    raise ConfigError(
        f"unknown flow variant {name!r}; expected one of "
        "translation, pendulum, duffing, quadruple_gyre, abc"
    )


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse + validate a config file; ``overrides`` wins over file values
    (used for CLI --out/--seed/--workers)."""
    kv = parse_config_file(path)
    try:
        return _validate(kv, overrides or {}, base=Path(path).parent)
    except ConfigError:
        raise
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e)) from None


def _validate(kv: dict[str, str], overrides: dict, base: Path) -> RunConfig:
    flow_name = kv.get("flow.variant", "")
    flow = _build_flow(flow_name, kv) if flow_name else None

    dims = tuple(_ints(kv.get("partition.dims", ""))) if "partition.dims" in kv else ()
    if any(d < 1 for d in dims):
        raise ConfigError(f"partition dims must be >= 1, got {dims}")

    tau = float(kv.get("spectral.tau", 0.0))
    alpha = float(kv.get("spectral.alpha", 0.1))
    if "spectral.tau" in kv and tau <= 0:
        raise ConfigError(f"spectral.tau must be positive, got {tau}")
    if alpha <= 0:
        raise ConfigError(f"spectral.alpha must be positive, got {alpha}")

    bands = _bands(kv.get("spectral.bands", ""))
    if tau > 0:
        w_hat = bandwidth(tau)
        for b in bands:
            if b.a < -w_hat or b.b > w_hat:
                raise ConfigError(
                    f"band [{b.a}, {b.b}) outside bandwidth [-{w_hat}, {w_hat})"
                )

    observable = kv.get("spectral.observable", "")
    if observable and observable not in _OBSERVABLE_IDS:
        raise ConfigError(
            f"unknown observable {observable!r}; expected one of "
            f"{sorted(_OBSERVABLE_IDS)}"
        )
    obs_file = kv.get("spectral.observable_file")
    if observable == "user_grid" and not obs_file:
        raise ConfigError("user_grid observable needs spectral.observable_file")

    if flow is not None and isinstance(flow, QuadrupleGyre) and dims and tau > 0:
        steps = tau * dims[-1]
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ConfigError(
                f"quadruple_gyre needs tau * d3 to be a positive integer, "
                f"got {tau} * {dims[-1]} = {steps}"
            )

    def opt_tuple(key, conv):
        return tuple(conv(kv[key])) if key in kv else None

    lo = opt_tuple("partition.lo", _floats)
    hi = opt_tuple("partition.hi", _floats)
    per = opt_tuple("partition.periodic", _bools)

    conv_set = []
    for part in kv.get("convergence.set", "").split(";"):
        part = part.strip()
        if not part:
            continue
        vals = part.split(":")
        if len(vals) != 2:
            raise ConfigError(f"convergence.set wants 'lo:hi' fractions, got {part!r}")
        a, b = float(vals[0]), float(vals[1])
        if not (0.0 <= a < b <= 1.0):
            raise ConfigError(f"convergence.set fractions must satisfy 0<=lo<hi<=1")
        conv_set.append((a, b))

    def override(name, key, default):
        v = overrides.get(name)
        return v if v is not None else kv.get(key, default)

    out_dir = Path(override("out_dir", "output.dir", "out"))
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    perm_cache = kv.get("run.perm_cache")

    cfg = RunConfig(
        flow_name=flow_name,
        flow=flow,
        dims=dims,
        tau=tau,
        alpha=alpha,
        bands=bands,
        observable=observable,
        observable_file=(base / obs_file) if obs_file else None,
        quad_points=int(kv.get("spectral.quad_points", 1)),
        b_sweep=_floats(kv.get("sweep.b", "")),
        seed=int(override("seed", "sampling.seed", 0)),
        samples_per_cell=int(kv.get("sampling.samples_per_cell", 0)),
        workers=int(override("workers", "run.workers", 1)),
        out_dir=out_dir,
        perm_cache=(base / perm_cache) if perm_cache else None,
        domain_lo=lo,
        domain_hi=hi,
        domain_periodic=per,
        conv_levels=_ints(kv.get("convergence.levels", "")),
        conv_r=int(kv.get("convergence.r", 0)),
        conv_w=int(kv.get("convergence.w", 0)),
        conv_gamma=float(kv.get("convergence.gamma", 1.0)),
        conv_space_factor=int(kv.get("convergence.space_factor", 2)),
        conv_time_factor=float(kv.get("convergence.time_factor", 1.0)),
        conv_time=float(kv.get("convergence.time", 1.0)),
        conv_sample_density=int(kv.get("convergence.sample_density", 3)),
        conv_set=conv_set or [(0.0, 0.25)],
        up_gammas=_floats(kv.get("upwind.gammas", "0.25,0.75,1.0,1.25")),
        up_ns=_ints(kv.get("upwind.ns", "2,3,4,5,6")),
        up_r=int(kv.get("upwind.r", 2)),
        up_w=int(kv.get("upwind.w", 2)),
        up_omega=float(kv.get("upwind.omega", 1.0)),
    )
    if cfg.quad_points < 1:
        raise ConfigError("spectral.quad_points must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("run.workers must be >= 1")
    if cfg.samples_per_cell < 0:
        raise ConfigError("sampling.samples_per_cell must not be negative (0 = default)")
    if cfg.conv_sample_density < 1:
        raise ConfigError("convergence.sample_density must be >= 1")
    lengths = {len(t) for t in (lo, hi, per) if t is not None}
    if len(lengths) > 1 or (lengths and dims and lengths != {len(dims)}):
        raise ConfigError("partition.lo/hi/periodic/dims lengths disagree")
    return cfg
