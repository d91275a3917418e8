"""Run orchestration: build partition + permutation + observable from a
RunConfig, compute spectra / projections / convergence tables / upwind
eigenvalues, and emit deterministic CSV outputs (figures are rendered by
:mod:`kpax.plots` alongside them).

Atom ordering in spectrum files is fixed by (cycle id, harmonic) and all
values are written with 17 significant digits, so identical config + seed
reproduces byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import cache as permcache
from .approx import (
    NoPerfectMatchingError,
    Permutation,
    cycles,
    match_perm,
    scheme_perm,
    set_evolution_error,
    validate,
)
from .config import ConfigError, RunConfig
from .flows import (
    Duffing,
    FlowSpec,
    OBSERVABLES,
    Pendulum,
    QuadrupleGyre,
    Translation,
    ABCFlow,
    default_domain,
    energy_function,
    energy_level,
    integrate_tau,
    shear_splitting,
)
from .partition import (
    CellMask,
    Domain,
    Partition,
    build_partition,
    cell_centers,
    mask_sublevel,
    pad_axis,
)
from .spectral import (
    DiscreteObservable,
    Mollifier,
    Spectrum,
    average_observable,
    band_project,
    bandwidth,
    compute_spectrum,
    density,
)
from .upwind import UpwindSpec, analytic_eigs, eig_deviation, numeric_eigs, optimal_translation_perm

__all__ = [
    "RunResult",
    "build_system",
    "build_observable",
    "run_density",
    "run_projection",
    "run_convergence",
    "run_upwind",
    "run_cache",
]

log = logging.getLogger("kpax.runs")

_PROJECTION_SLICES = (0.0, 0.25, 0.5, 0.75)


def _g17(x) -> str:
    return format(float(x), ".17g")


@dataclass
class RunResult:
    out_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    parseval_residual: Optional[float] = None
    partition: Optional[Partition] = None
    mask: Optional[CellMask] = None
    permutation: Optional[Permutation] = None
    observable: Optional[DiscreteObservable] = None
    spectrum: Optional[Spectrum] = None
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# System construction


def _resolve_domain(cfg: RunConfig) -> Domain:
    if cfg.domain_lo is not None or cfg.domain_hi is not None or cfg.domain_periodic is not None:
        if None in (cfg.domain_lo, cfg.domain_hi, cfg.domain_periodic):
            raise ConfigError("partition.lo/hi/periodic must be given together")
        return Domain(cfg.domain_lo, cfg.domain_hi, cfg.domain_periodic)
    if cfg.flow is None:
        raise ConfigError("flow.variant is required")
    return default_domain(cfg.flow)


def _require(cfg: RunConfig, *fields: str):
    missing = []
    if "dims" in fields and not cfg.dims:
        missing.append("partition.dims")
    if "tau" in fields and cfg.tau <= 0:
        missing.append("spectral.tau")
    if "flow" in fields and cfg.flow is None:
        missing.append("flow.variant")
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")


def _padded_masked_system(
    cfg: RunConfig, spec: FlowSpec
) -> tuple[Partition, CellMask, Permutation]:
    """Pendulum / Duffing route: pad every sheared non-periodic axis so the
    box closes periodically, flag cells by the energy sub-level center test,
    and compose the exact lattice shears of the leapfrog pair."""
    dom = _resolve_domain(cfg)
    p = build_partition(dom, cfg.dims)
    scheme = shear_splitting(spec, cfg.tau)
    for step in scheme.steps:
        k = step.axis
        if p.domain.periodic[k]:
            continue
        dmax = float(np.max(np.abs(step.displacement(cell_centers(p)))))
        # +1 cell margin: the displacement extreme can sit between centers
        pad = int(math.ceil(dmax / p.cell_extent[k])) + 1
        p = pad_axis(p, k, pad)
    mask = mask_sublevel(p, energy_function(spec), energy_level(spec))
    perm = scheme_perm(p, scheme, seam_mask=mask)
    return p, mask, perm


def _gyre_system(cfg: RunConfig) -> tuple[Partition, None, Permutation]:
    """Quadruple-gyre route: tau * d3 is an integer number of x3 layers, so
    the tau-map sends layer k to layer k + m and the q x q matching problem
    splits into d3 independent (d1 d2) x (d1 d2) slice matchings."""
    spec = cfg.flow
    dom = _resolve_domain(cfg)
    p = build_partition(dom, cfg.dims)
    d1, d2, d3 = p.dims
    m_adv = int(round(cfg.tau * d3))
    if abs(cfg.tau * d3 - m_adv) > 1e-9 or m_adv < 1:
        raise ConfigError(f"tau * d3 = {cfg.tau * d3} is not a positive integer")
    pxy = build_partition(
        Domain(dom.lo[:2], dom.hi[:2], dom.periodic[:2]), (d1, d2)
    )
    samples = cfg.samples_per_cell or 9  # 3^m on the 2-d slice problem
    z_centers = dom.lo[2] + dom.widths[2] * ((np.arange(d3) + 0.5) / d3)
    substeps = max(1, int(math.ceil(cfg.tau / 0.05)))

    def slice_perm(k: int):
        def map2d(pts: np.ndarray) -> np.ndarray:
            pts3 = np.concatenate(
                [pts, np.full((len(pts), 1), z_centers[k])], axis=1
            )
            return integrate_tau(spec, cfg.tau, pts3, substeps)[:, :2]

        # escalate the sampling density a bounded number of times before
        # giving up; the ladder is seeded, so retries stay deterministic
        last: NoPerfectMatchingError = None
        for attempt in range(3):
            try:
                pk = match_perm(
                    pxy, map2d, samples * 4**attempt, [cfg.seed, k, attempt],
                    tau=cfg.tau,
                )
                return k, pk
            except NoPerfectMatchingError as e:
                last = e
                log.warning(
                    "slice %d: %d unmatched at %d samples/cell; retrying denser",
                    k, e.unmatched, samples * 4**attempt,
                )
        raise last

    image = np.empty(p.q, dtype=np.int64)
    xy = np.arange(d1 * d2, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for k, pk in pool.map(slice_perm, range(d3)):
            image[xy * d3 + k] = pk.image[xy] * d3 + (k + m_adv) % d3
    return p, None, Permutation(p, image, cfg.tau, "matching")


def build_system(cfg: RunConfig) -> tuple[Partition, Optional[CellMask], Permutation]:
    """Partition, optional energy mask, and tau-map permutation per config:
    lattice shears where the flow splits into shears, slice-wise bipartite
    matching for the quadruple gyre."""
    _require(cfg, "flow", "dims", "tau")
    spec = cfg.flow
    if isinstance(spec, (Translation, ABCFlow)):
        p = build_partition(_resolve_domain(cfg), cfg.dims)
        mask = None
        perm = scheme_perm(p, shear_splitting(spec, cfg.tau))
    elif isinstance(spec, (Pendulum, Duffing)):
        p, mask, perm = _padded_masked_system(cfg, spec)
    elif isinstance(spec, QuadrupleGyre):
        p, mask, perm = _gyre_system(cfg)
    else:
        raise ConfigError(f"unsupported flow {cfg.flow_name!r}")
    if cfg.perm_cache is not None and cfg.perm_cache.exists():
        perm = permcache.load_perm(cfg.perm_cache, p)
        if abs(perm.tau - cfg.tau) > 1e-12:
            raise permcache.CacheIntegrityError(
                f"cached tau {perm.tau} differs from config tau {cfg.tau}"
            )
    return p, mask, perm


def _unit_fourier_mode(x: np.ndarray) -> np.ndarray:
    return np.exp(2j * math.pi * np.asarray(x)[..., 0])


def _load_user_grid(path: Path, p: Partition) -> np.ndarray:
    rows = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ConfigError(f"{path}: expected rows 're,im' or 'j,re,im'")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{path}: non-finite coefficient value")
    coeffs = np.zeros(p.q, dtype=complex)
    if arr.shape[1] == 2:
        if len(arr) != p.q:
            raise ConfigError(f"{path}: {len(arr)} rows but partition has {p.q} cells")
        coeffs[:] = arr[:, 0] + 1j * arr[:, 1]
    else:
        j = arr[:, 0].astype(int)
        if j.min() < 0 or j.max() >= p.q:
            raise ConfigError(f"{path}: cell index out of range")
        coeffs[j] = arr[:, 1] + 1j * arr[:, 2]
    return coeffs


def build_observable(
    cfg: RunConfig, p: Partition, mask: Optional[CellMask]
) -> DiscreteObservable:
    name = cfg.observable
    if name == "user_grid":
        coeffs = _load_user_grid(cfg.observable_file, p)
        if mask is not None:
            coeffs = np.where(mask.active, coeffs, 0.0)
        return DiscreteObservable(p, coeffs, mask)
    if name in OBSERVABLES:
        return average_observable(OBSERVABLES[name], p, mask, cfg.quad_points)
    if not name and isinstance(cfg.flow, Translation):
        # documented default for translation runs: the unit Fourier mode
        return average_observable(_unit_fourier_mode, p, mask, cfg.quad_points)
    raise ConfigError(f"spectral.observable is required for {cfg.flow_name!r}")


# ---------------------------------------------------------------------------
# CSV emission


def _write_lines(path: Path, header: str, lines) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")
    return path


def write_spectrum_csv(path: Path, spec: Spectrum) -> Path:
    lines = (
        f"{_g17(o)},{_g17(w)},{int(L)},{int(m)}"
        for o, w, L, m in zip(spec.omegas, spec.weights, spec.cycle_lens, spec.harmonics)
    )
    return _write_lines(path, "omega,weight,cycle_len,harmonic", lines)


def write_density_csv(path: Path, grid: np.ndarray, rho: np.ndarray) -> Path:
    lines = (f"{_g17(o)},{_g17(r)}" for o, r in zip(grid, rho))
    return _write_lines(path, "omega,rho", lines)


def _parseval_residual(spec: Spectrum) -> float:
    if spec.norm_sq == 0.0:
        return abs(spec.total_weight)
    return abs(spec.total_weight - spec.norm_sq) / spec.norm_sq


def _density_grid(tau: float, alpha: float) -> np.ndarray:
    w_hat = bandwidth(tau)
    return np.arange(-w_hat, w_hat, alpha / 10.0)


# ---------------------------------------------------------------------------
# Subcommand drivers


def run_density(cfg: RunConfig, plot: bool = True) -> RunResult:
    """Density pipeline: partition -> permutation -> averaged observable ->
    spectrum -> mollified density; writes spectrum.csv + density.csv and logs
    the Parseval residual."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = RunResult(cfg.out_dir)
    p, mask, perm = build_system(cfg)
    obs = build_observable(cfg, p, mask)
    cycs = cycles(perm)
    spec = compute_spectrum(perm, obs, cfg.tau, cycs)
    residual = _parseval_residual(spec)
    log.info("parseval residual %.3e (q=%d, atoms=%d)", residual, p.q, len(spec.omegas))

    res.files["spectrum"] = write_spectrum_csv(cfg.out_dir / "spectrum.csv", spec)
    grid = _density_grid(cfg.tau, cfg.alpha)
    mol = Mollifier(cfg.alpha)
    rho = density(spec, mol, grid)
    res.files["density"] = write_density_csv(cfg.out_dir / "density.csv", grid, rho)

    sweep_cols = {}
    if cfg.b_sweep:
        if not isinstance(cfg.flow, Duffing):
            raise ConfigError("sweep.b only applies to the duffing flow")
        for b in cfg.b_sweep:
            sub = replace(cfg, flow=Duffing(cfg.flow.a, b), b_sweep=[])
            p_b, mask_b, perm_b = build_system(sub)
            obs_b = build_observable(sub, p_b, mask_b)
            spec_b = compute_spectrum(perm_b, obs_b, sub.tau)
            sweep_cols[b] = density(spec_b, mol, grid)
        header = "omega," + ",".join(f"rho_b={_g17(b)}" for b in cfg.b_sweep)
        lines = (
            _g17(grid[i]) + "," + ",".join(_g17(sweep_cols[b][i]) for b in cfg.b_sweep)
            for i in range(len(grid))
        )
        res.files["density_sweep"] = _write_lines(
            cfg.out_dir / "density_sweep.csv", header, lines
        )

    res.summary = {
        "parseval_residual": residual,
        "q": p.q,
        "tau": cfg.tau,
        "alpha": cfg.alpha,
        "n_atoms": int(len(spec.omegas)),
        "norm_sq": spec.norm_sq,
        "total_weight": spec.total_weight,
    }
    res.files["summary"] = _write_summary(cfg.out_dir, res.summary)
    if plot:
        from . import plots

        res.files["density_png"] = plots.density_figure(
            grid, rho, cfg.out_dir / "density.png", sweep=sweep_cols
        )
    res.parseval_residual = residual
    res.partition, res.mask, res.permutation = p, mask, perm
    res.observable, res.spectrum = obs, spec
    return res


def _slice_layers(d3: int) -> list[tuple[float, int]]:
    return [(v, int(round(v * d3)) % d3) for v in _PROJECTION_SLICES]


def run_projection(cfg: RunConfig, band=None, plot: bool = True) -> RunResult:
    """Band-projection pipeline: writes per-band grid CSVs (per x3-layer for
    3-d runs, at the benchmark slice positions).  Projects the single given
    band, or every band in the config when none is passed."""
    bands = [band] if band is not None else list(cfg.bands)
    if not bands:
        raise ConfigError("spectral.bands is required for projection runs")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = RunResult(cfg.out_dir)
    p, mask, perm = build_system(cfg)
    obs = build_observable(cfg, p, mask)
    cycs = cycles(perm)

    for bi, band in enumerate(bands):
        proj = band_project(perm, obs, cfg.tau, band, cycs)
        grid_c = proj.coeffs
        if p.domain.dim == 3:
            d1, d2, d3 = p.dims
            for x3, k in _slice_layers(d3):
                name = f"projection_band{bi}_x3_{x3:g}"
                lines = []
                for i1 in range(d1):
                    for i2 in range(d2):
                        c = grid_c[(i1 * d2 + i2) * d3 + k]
                        lines.append(
                            f"{i1},{i2},{k},{_g17(c.real)},{_g17(c.imag)},{_g17(abs(c))}"
                        )
                res.files[name] = _write_lines(
                    cfg.out_dir / f"{name}.csv", "i1,i2,i3,re,im,abs", lines
                )
        elif p.domain.dim == 2:
            d1, d2 = p.dims
            name = f"projection_band{bi}"
            lines = []
            for i1 in range(d1):
                for i2 in range(d2):
                    c = grid_c[i1 * d2 + i2]
                    lines.append(
                        f"{i1},{i2},{_g17(c.real)},{_g17(c.imag)},{_g17(abs(c))}"
                    )
            res.files[name] = _write_lines(
                cfg.out_dir / f"{name}.csv", "i1,i2,re,im,abs", lines
            )
        else:
            name = f"projection_band{bi}"
            lines = [
                f"{i},{_g17(c.real)},{_g17(c.imag)},{_g17(abs(c))}"
                for i, c in enumerate(grid_c)
            ]
            res.files[name] = _write_lines(
                cfg.out_dir / f"{name}.csv", "i1,re,im,abs", lines
            )
        if plot and p.domain.dim >= 2:
            from . import plots

            png = plots.projection_figure(
                p, grid_c, cfg.out_dir / f"projection_band{bi}.png", band
            )
            res.files[f"projection_band{bi}_png"] = png

    res.partition, res.mask, res.permutation, res.observable = p, mask, perm, obs
    res.files["summary"] = _write_summary(
        cfg.out_dir,
        {"bands": [[b.a, b.b] for b in cfg.bands], "q": p.q, "tau": cfg.tau},
    )
    return res


def _region_cells(p: Partition, region: list[tuple[float, float]]) -> np.ndarray:
    """Cells whose centers fall in the per-axis fractional box."""
    centers = cell_centers(p)
    lo = np.asarray(p.domain.lo)
    w = p.domain.widths
    keep = np.ones(p.q, dtype=bool)
    for k, (a, b) in enumerate(region[: p.domain.dim]):
        frac = (centers[:, k] - lo[k]) / w[k]
        keep &= (frac >= a) & (frac < b)
    return np.flatnonzero(keep)


def run_convergence(cfg: RunConfig, levels=None, plot: bool = True) -> RunResult:
    """Refinement-chain diagnostics; requires l(n)/tau(n) strictly decreasing.

    Columns: level, q, tau, l, l_over_tau, parseval_residual,
    hausdorff_integral, density_linf_prev, omega_hat_err, perm_identity.
    The translation chain uses the closed-form optimal shift permutations;
    other flows rebuild their lattice/matching systems per level.
    """
    _require(cfg, "flow")
    levels_in = list(levels) if levels is not None else cfg.conv_levels
    if not levels_in:
        raise ConfigError("convergence.levels is required")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = RunResult(cfg.out_dir)
    translation_chain = isinstance(cfg.flow, Translation) and cfg.conv_r >= 2

    levels: list[dict] = []
    if translation_chain:
        for n in levels_in:
            spec_u = UpwindSpec(cfg.conv_gamma, cfg.conv_r, cfg.conv_w, n, cfg.flow.omega)
            perm, omega_rec = optimal_translation_perm(spec_u)
            levels.append(
                {
                    "level": n,
                    "partition": perm.partition,
                    "mask": None,
                    "perm": perm,
                    "tau": spec_u.tau,
                    "omega_err": abs(cfg.flow.omega - omega_rec) / abs(cfg.flow.omega),
                }
            )
    else:
        _require(cfg, "dims", "tau")
        for lev in levels_in:
            f_s = cfg.conv_space_factor**lev
            f_t = cfg.conv_time_factor**lev
            sub = replace(
                cfg,
                dims=tuple(d * f_s for d in cfg.dims),
                tau=cfg.tau / f_t,
            )
            p, mask, perm = build_system(sub)
            levels.append(
                {
                    "level": lev,
                    "partition": p,
                    "mask": mask,
                    "perm": perm,
                    "tau": sub.tau,
                    "omega_err": math.nan,
                }
            )

    ratios = [lv["partition"].diam_bound / lv["tau"] for lv in levels]
    if any(b >= a for a, b in zip(ratios, ratios[1:])):
        raise ConfigError(
            f"refinement chain must have strictly decreasing l/tau, got {ratios}"
        )

    mol = Mollifier(cfg.alpha)
    shared_grid = _density_grid(levels[0]["tau"], cfg.alpha)
    prev_rho = None
    rows = []
    densities = []
    for lv in levels:
        p, perm = lv["partition"], lv["perm"]
        obs = build_observable(cfg, p, lv["mask"])
        spec = compute_spectrum(perm, obs, lv["tau"])
        residual = _parseval_residual(spec)
        cells = _region_cells(p, cfg.conv_set)
        trace = set_evolution_error(
            perm, cfg.flow, cells, cfg.conv_time, cfg.conv_sample_density
        )
        rho = density(spec, mol, shared_grid)
        densities.append(rho)
        linf = math.nan if prev_rho is None else float(np.max(np.abs(rho - prev_rho)))
        if prev_rho is not None and not linf < math.inf:
            log.warning("density L-inf distance not finite at level %s", lv["level"])
        prev_rho = rho
        identity = int(np.array_equal(perm.image, np.arange(p.q)))
        rows.append(
            f"{lv['level']},{p.q},{_g17(lv['tau'])},{_g17(p.diam_bound)},"
            f"{_g17(p.diam_bound / lv['tau'])},{_g17(residual)},"
            f"{_g17(trace.integral)},{_g17(linf)},{_g17(lv['omega_err'])},{identity}"
        )
    header = (
        "level,q,tau,l,l_over_tau,parseval_residual,hausdorff_integral,"
        "density_linf_prev,omega_hat_err,perm_identity"
    )
    res.files["convergence"] = _write_lines(cfg.out_dir / "convergence.csv", header, rows)
    res.files["summary"] = _write_summary(
        cfg.out_dir, {"levels": [lv["level"] for lv in levels], "l_over_tau": ratios}
    )
    if plot:
        from . import plots

        res.files["convergence_png"] = plots.convergence_figure(
            [lv["level"] for lv in levels],
            [float(r.split(",")[6]) for r in rows],
            ratios,
            cfg.out_dir / "convergence.png",
        )
    return res


def run_upwind(cfg: RunConfig, plot: bool = True) -> RunResult:
    """Sweep (gamma, n): write analytic and numeric eigenvalue CSVs side by
    side plus a max-deviation summary."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = RunResult(cfg.out_dir)
    analytic_rows, numeric_rows = [], []
    deviations = {}
    sets = []
    for g in cfg.up_gammas:
        for n in cfg.up_ns:
            spec_u = UpwindSpec(g, cfg.up_r, cfg.up_w, n, cfg.up_omega)
            num = numeric_eigs(spec_u)
            numeric_rows.extend(
                f"{j},{k},{_g17(l.real)},{_g17(l.imag)},{_g17(g)},{n}"
                for j, k, l in zip(num.j, num.kappa, num.lam)
            )
            if cfg.up_r == cfg.up_w:
                ana = analytic_eigs(spec_u)
                analytic_rows.extend(
                    f"{j},{k},{_g17(l.real)},{_g17(l.imag)},{_g17(g)},{n}"
                    for j, k, l in zip(ana.j, ana.kappa, ana.lam)
                )
                deviations[f"gamma={g:g},n={n}"] = eig_deviation(ana, num, spec_u.tau)
                sets.append((g, n, ana, num, spec_u.tau))
    header = "j,kappa,re_lambda,im_lambda,gamma,n"
    res.files["numeric"] = _write_lines(cfg.out_dir / "eigs_numeric.csv", header, numeric_rows)
    if analytic_rows:
        res.files["analytic"] = _write_lines(
            cfg.out_dir / "eigs_analytic.csv", header, analytic_rows
        )
    summary = {
        "per_run_deviation": deviations,
        "max_deviation": max(deviations.values()) if deviations else None,
        "r": cfg.up_r,
        "w": cfg.up_w,
    }
    res.summary = summary
    res.files["summary"] = _write_summary(cfg.out_dir, summary)
    if plot and sets:
        from . import plots

        res.files["eigs_png"] = plots.upwind_figure(sets, cfg.out_dir / "eigs.png")
    return res


def run_cache(cfg: RunConfig) -> RunResult:
    """Build the configured permutation and save it; if the cache file
    already exists, load + validate it instead."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = RunResult(cfg.out_dir)
    path = cfg.perm_cache or (cfg.out_dir / "perm.kpax")
    if Path(path).exists():
        p, _mask, _ = build_system(replace(cfg, perm_cache=None))
        perm = permcache.load_perm(path, p)
        action = "verified"
    else:
        p, _mask, perm = build_system(replace(cfg, perm_cache=None))
        permcache.save_perm(perm, path)
        action = "saved"
    report = validate(perm)
    if not report.bijective:
        raise permcache.CacheIntegrityError(f"{path}: permutation is not a bijection")
    res.files["cache"] = Path(path)
    res.permutation = perm
    res.summary = {
        "action": action,
        "q": perm.q,
        "tau": perm.tau,
        "cycle_count": len(report.cycle_length_histogram or {}),
    }
    res.files["summary"] = _write_summary(cfg.out_dir, res.summary)
    return res


def _write_summary(out_dir: Path, payload: dict) -> Path:
    path = out_dir / "summary.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path
