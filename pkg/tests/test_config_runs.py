import math

import numpy as np
import pytest

from kpax.config import ConfigError, load_config
from kpax.flows import Translation
from kpax.runs import (
    run_cache,
    run_convergence,
    run_density,
    run_projection,
    run_upwind,
)
from kpax.spectral import bandwidth

BASE_TRANSLATION = """
flow.variant = translation
flow.omega = 1.0
partition.dims = 256
spectral.tau = 0.1
spectral.alpha = 0.1
sampling.seed = 3
"""

BASE_PENDULUM = """
flow.variant = pendulum
partition.dims = 64,64
spectral.tau = 0.05
spectral.alpha = 0.1
spectral.observable = obs_pendulum
spectral.bands = -0.3,0.3; 1.5,2.0
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------- config


def test_parse_translation_config(tmp_path):
    cfg = load_config(write_cfg(tmp_path, BASE_TRANSLATION))
    assert isinstance(cfg.flow, Translation)
    assert cfg.dims == (256,) and cfg.tau == 0.1 and cfg.seed == 3


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(write_cfg(tmp_path, "flow.variant = pendulum\nnope = 1\n"))


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="duplicate"):
        load_config(write_cfg(tmp_path, "spectral.tau = 1\nspectral.tau = 2\n"))


def test_bad_flow_rejected(tmp_path):
    with pytest.raises(ConfigError, match="variant"):
        load_config(write_cfg(tmp_path, "flow.variant = lorenz\n"))


def test_band_outside_bandwidth_rejected(tmp_path):
    text = BASE_TRANSLATION + "spectral.bands = 0,100\n"
    with pytest.raises(ConfigError, match="bandwidth"):
        load_config(write_cfg(tmp_path, text))


def test_gyre_tau_layer_constraint(tmp_path):
    text = (
        "flow.variant = quadruple_gyre\npartition.dims = 8,8,8\n"
        "spectral.tau = 0.1\nspectral.observable = obs_gyre\n"
    )
    with pytest.raises(ConfigError, match="integer"):
        load_config(write_cfg(tmp_path, text))


def test_comments_and_blank_lines(tmp_path):
    text = "# header\n\nflow.variant = translation  # inline\nspectral.tau = 0.5\n"
    cfg = load_config(write_cfg(tmp_path, text))
    assert cfg.tau == 0.5


def test_overrides_win(tmp_path):
    cfg = load_config(
        write_cfg(tmp_path, BASE_TRANSLATION),
        {"seed": 99, "out_dir": str(tmp_path / "elsewhere"), "workers": 4},
    )
    assert cfg.seed == 99 and cfg.workers == 4
    assert cfg.out_dir == tmp_path / "elsewhere"


# ---------------------------------------------------------------- density


def test_translation_density_argmax_near_drift_frequency(tmp_path):
    cfg = load_config(write_cfg(tmp_path, BASE_TRANSLATION), {"out_dir": str(tmp_path / "o")})
    res = run_density(cfg, plot=False)
    grid, rho = np.loadtxt(res.files["density"], delimiter=",", skiprows=1, unpack=True)
    # the atom sits within alpha of the drift frequency; the argmax adds at
    # most one grid spacing (alpha/10) of quantization on top of that
    assert abs(grid[np.argmax(rho)] - 2 * math.pi) <= cfg.alpha + cfg.alpha / 10
    assert res.parseval_residual <= 1e-10


def test_pendulum_density_zero_frequency_weight(tmp_path):
    cfg = load_config(write_cfg(tmp_path, BASE_PENDULUM), {"out_dir": str(tmp_path / "o")})
    res = run_density(cfg, plot=False)
    om, w = res.spectrum.merged()
    w0 = float(w[om == 0.0].sum())
    g = res.observable
    vol = res.partition.cell_volume
    mean_sq = abs(np.sum(g.coeffs) / max(res.mask.active_count, 1)) ** 2
    mu_x = res.mask.active_volume
    # the zero-frequency eigenspace contains the constants, so its weight
    # dominates the constant-mode weight |mean g|^2 mu(X)
    assert w0 >= mean_sq * mu_x - 1e-12
    assert w0 > 0


def test_spectrum_file_parseval_after_round_trip(tmp_path):
    cfg = load_config(write_cfg(tmp_path, BASE_PENDULUM), {"out_dir": str(tmp_path / "o")})
    res = run_density(cfg, plot=False)
    w = np.loadtxt(res.files["spectrum"], delimiter=",", skiprows=1, usecols=1)
    assert abs(w.sum() - res.observable.norm_sq) / res.observable.norm_sq < 1e-8


def test_density_deterministic_bytes(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        cfg = load_config(write_cfg(tmp_path, BASE_TRANSLATION), {"out_dir": str(out)})
        run_density(cfg, plot=False)
    for name in ("spectrum.csv", "density.csv", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_user_grid_observable(tmp_path):
    q = 32
    coeffs = np.exp(2j * np.pi * (np.arange(q) + 0.5) / q)
    lines = "\n".join(f"{float(c.real)!r},{float(c.imag)!r}" for c in coeffs)
    (tmp_path / "g.csv").write_text(lines + "\n")
    text = (
        "flow.variant = translation\nflow.omega = 1.0\npartition.dims = 32\n"
        "spectral.tau = 0.125\nspectral.observable = user_grid\n"
        "spectral.observable_file = g.csv\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_density(cfg, plot=False)
    om, w = res.spectrum.merged()
    # shift is exactly 4 cells: the unit mode is an exact eigenvector
    assert w.max() / w.sum() == pytest.approx(1.0)
    assert om[np.argmax(w)] == pytest.approx(2 * math.pi)


def test_duffing_b_sweep(tmp_path):
    text = (
        "flow.variant = duffing\nflow.a = 1.0\nflow.b = -1.0\n"
        "partition.dims = 24,24\nspectral.tau = 0.02\nspectral.alpha = 0.2\n"
        "spectral.observable = obs_duffing_complex\nsweep.b = -0.1,0.1\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_density(cfg, plot=False)
    header = res.files["density_sweep"].read_text().splitlines()[0]
    assert header.startswith("omega,rho_b=")
    assert len(header.split(",")) == 3


def test_b_sweep_requires_duffing(tmp_path):
    text = BASE_TRANSLATION + "sweep.b = 0.1,0.2\n"
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    with pytest.raises(ConfigError, match="duffing"):
        run_density(cfg, plot=False)


# ---------------------------------------------------------------- projection


def test_projection_full_band_is_identity(tmp_path):
    w_hat = bandwidth(0.05)
    text = BASE_PENDULUM.replace(
        "spectral.bands = -0.3,0.3; 1.5,2.0",
        f"spectral.bands = {-w_hat!r},{w_hat!r}",
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_projection(cfg, plot=False)
    p, obs = res.partition, res.observable
    d1, d2 = p.dims
    rows = np.loadtxt(res.files["projection_band0"], delimiter=",", skiprows=1)
    proj = rows[:, 2] + 1j * rows[:, 3]
    assert np.abs(proj - obs.coeffs).max() <= 1e-10


def test_projection_disjoint_band_additivity(tmp_path):
    base = BASE_PENDULUM.replace(
        "spectral.bands = -0.3,0.3; 1.5,2.0",
        "spectral.bands = 0.5,1.0; 1.0,1.5; 0.5,1.5",
    )
    cfg = load_config(write_cfg(tmp_path, base), {"out_dir": str(tmp_path / "o")})
    res = run_projection(cfg, plot=False)

    def read(name):
        rows = np.loadtxt(res.files[name], delimiter=",", skiprows=1)
        return rows[:, 2] + 1j * rows[:, 3]

    lhs = read("projection_band0") + read("projection_band1")
    rhs = read("projection_band2")
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_projection_3d_writes_four_slices(tmp_path):
    text = (
        "flow.variant = abc\npartition.dims = 8,8,8\nspectral.tau = 0.2\n"
        "spectral.observable = obs_abc\nspectral.bands = -0.3,0.3\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_projection(cfg, plot=False)
    names = [n for n in res.files if n.startswith("projection_band0_x3_")]
    assert len(names) == 4
    rows = np.loadtxt(res.files["projection_band0_x3_0.25"], delimiter=",", skiprows=1)
    assert rows.shape == (64, 6)
    assert np.all(rows[:, 2] == 2)  # x3 = 0.25 on an 8-layer grid is layer 2


def test_projection_requires_bands(tmp_path):
    cfg = load_config(write_cfg(tmp_path, BASE_TRANSLATION), {"out_dir": str(tmp_path / "o")})
    with pytest.raises(ConfigError, match="bands"):
        run_projection(cfg, plot=False)


# ---------------------------------------------------------------- convergence


def test_translation_convergence_table(tmp_path):
    text = (
        "flow.variant = translation\nflow.omega = 1.0\n"
        "convergence.levels = 3,4,5\nconvergence.r = 4\nconvergence.w = 2\n"
        "convergence.gamma = 1.34\nconvergence.time = 1.0\n"
        "convergence.sample_density = 4\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_convergence(cfg, plot=False)
    rows = np.loadtxt(res.files["convergence"], delimiter=",", skiprows=1)
    l_over_tau = rows[:, 4]
    hausdorff = rows[:, 6]
    omega_err = rows[:, 8]
    assert np.all(np.diff(l_over_tau) < 0)
    assert np.all(np.diff(hausdorff) < 0)
    assert omega_err[-1] < 1e-2


def test_translation_identity_level_flagged(tmp_path):
    # r/w < 1: gamma (r/w)^n < 1/2 from n = 2 on, so the map is the identity
    text = (
        "flow.variant = translation\nflow.omega = 1.0\n"
        "convergence.levels = 2,3,4\nconvergence.r = 4\nconvergence.w = 2\n"
        "convergence.gamma = 1.34\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    run_convergence(cfg, plot=False)
    ident_text = (
        "flow.variant = translation\nflow.omega = 1.0\n"
        "convergence.levels = 2,3\nconvergence.r = 2\nconvergence.w = 4\n"
        "convergence.gamma = 1.0\n"
    )
    cfg2 = load_config(write_cfg(tmp_path, ident_text, "i.cfg"), {"out_dir": str(tmp_path / "o2")})
    with pytest.raises(ConfigError, match="strictly decreasing"):
        run_convergence(cfg2, plot=False)


def test_generic_convergence_duffing(tmp_path):
    text = (
        "flow.variant = duffing\nflow.a = 1.0\nflow.b = -1.0\n"
        "partition.dims = 12,12\nspectral.tau = 0.02\nspectral.alpha = 0.2\n"
        "spectral.observable = obs_duffing_energy\n"
        "convergence.levels = 0,1,2\nconvergence.time = 0.1\n"
        "convergence.sample_density = 2\nconvergence.set = 0.25:0.5\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_convergence(cfg, plot=False)
    lines = res.files["convergence"].read_text().splitlines()
    assert len(lines) == 4
    rows = np.loadtxt(res.files["convergence"], delimiter=",", skiprows=1)
    assert np.all(np.isfinite(rows[1:, 7]))  # density L-inf vs previous level


# ---------------------------------------------------------------- upwind


def test_run_upwind_outputs(tmp_path):
    text = "upwind.gammas = 0.75,1.0,1.25\nupwind.ns = 2,3,4\nupwind.r = 2\nupwind.w = 2\n"
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_upwind(cfg, plot=False)
    assert res.summary["max_deviation"] <= 1e-8
    header = res.files["analytic"].read_text().splitlines()[0]
    assert header == "j,kappa,re_lambda,im_lambda,gamma,n"
    num = np.loadtxt(res.files["numeric"], delimiter=",", skiprows=1)
    gam = num[:, 4]
    assert np.max(num[gam <= 1.0, 2]) <= 1e-10
    assert np.max(num[gam == 1.25, 2]) > 0


# ---------------------------------------------------------------- cache


def test_run_cache_save_then_verify(tmp_path):
    text = BASE_TRANSLATION + "run.perm_cache = perm.kpax\n"
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_cache(cfg)
    assert res.summary["action"] == "saved"
    assert cfg.perm_cache.exists()
    res2 = run_cache(cfg)
    assert res2.summary["action"] == "verified"


def test_density_reuses_cached_perm(tmp_path):
    text = BASE_TRANSLATION + "run.perm_cache = perm.kpax\n"
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    run_cache(cfg)
    res = run_density(cfg, plot=False)
    assert res.permutation.method == "cached"
    assert res.parseval_residual <= 1e-10


def test_missing_required_keys(tmp_path):
    cfg = load_config(write_cfg(tmp_path, "flow.variant = pendulum\n"),
                      {"out_dir": str(tmp_path / "o")})
    with pytest.raises(ConfigError, match="missing config keys"):
        run_density(cfg, plot=False)


def test_projection_constant_observable_small_band(tmp_path):
    # a constant observable lives entirely at omega = 0
    q = 16 * 16
    (tmp_path / "const.csv").write_text("\n".join("2.0,-1.0" for _ in range(q)) + "\n")
    text = (
        "flow.variant = abc\npartition.dims = 16,16,1\nspectral.tau = 0.2\n"
        "spectral.observable = user_grid\nspectral.observable_file = const.csv\n"
        "spectral.bands = -0.3,0.3\n"
    )
    cfg = load_config(write_cfg(tmp_path, text), {"out_dir": str(tmp_path / "o")})
    res = run_projection(cfg, plot=False)
    rows = np.loadtxt(res.files["projection_band0_x3_0"], delimiter=",", skiprows=1)
    proj = rows[:, 3] + 1j * rows[:, 4]
    assert np.abs(proj - (2.0 - 1.0j)).max() <= 1e-10


def test_gyre_matching_independent_of_worker_count(tmp_path):
    text = (
        "flow.variant = quadruple_gyre\nflow.eps = 0.05\n"
        "partition.dims = 12,12,4\nspectral.tau = 0.25\n"
        "spectral.observable = obs_gyre\nsampling.seed = 5\n"
    )
    images = []
    for workers in (1, 3):
        cfg = load_config(
            write_cfg(tmp_path, text, f"w{workers}.cfg"),
            {"out_dir": str(tmp_path / f"o{workers}"), "workers": workers},
        )
        res = run_density(cfg, plot=False)
        images.append(res.permutation.image.tobytes())
    assert images[0] == images[1]
