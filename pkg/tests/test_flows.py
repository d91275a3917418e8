import math

import numpy as np
import pytest

from kpax.flows import (
    ABCFlow,
    Duffing,
    NumericalBlowupError,
    OBSERVABLES,
    Pendulum,
    QuadrupleGyre,
    Translation,
    UnsupportedSplittingError,
    default_domain,
    energy_function,
    energy_level,
    gyre_bump,
    integrate_reference,
    integrate_tau,
    obs_abc,
    shear_splitting,
    vector_field,
)

ABC_SPEC = ABCFlow(math.sqrt(3) / (2 * math.pi), math.sqrt(2) / (2 * math.pi), 1 / (2 * math.pi))
GYRE_SPEC = QuadrupleGyre(1 / (2 * math.pi), 0.05)

ALL_SPECS = [Translation(1.0), Pendulum(), Duffing(1.0, -1.0), GYRE_SPEC, ABC_SPEC]


def rand_points(spec, n, seed=0):
    dom = default_domain(spec)
    rng = np.random.default_rng(seed)
    return np.asarray(dom.lo) + rng.random((n, dom.dim)) * dom.widths


def test_vector_field_pendulum():
    assert np.allclose(vector_field(Pendulum(), [0.0, 1.0]), [1.0, 0.0])


def test_vector_field_duffing_fixed_point():
    assert np.allclose(vector_field(Duffing(1.0, -1.0), [1.0, 0.0]), [0.0, 0.0])


def test_vector_field_gyre_third_component_one():
    pts = rand_points(GYRE_SPEC, 50)
    v = vector_field(GYRE_SPEC, pts)
    assert np.all(v[:, 2] == 1.0)


def test_vector_field_abc_hand_values():
    A, B, C = ABC_SPEC.a, ABC_SPEC.b, ABC_SPEC.c
    x = np.array([0.1, 0.2, 0.3])
    v = vector_field(ABC_SPEC, x)
    s, c = math.sin, math.cos
    assert v[0] == pytest.approx(A * s(2 * math.pi * 0.3) + C * c(2 * math.pi * 0.2))
    assert v[1] == pytest.approx(B * s(2 * math.pi * 0.1) + A * c(2 * math.pi * 0.3))
    assert v[2] == pytest.approx(C * s(2 * math.pi * 0.2) + B * c(2 * math.pi * 0.1))


def test_gyre_eps_range_enforced():
    with pytest.raises(ValueError):
        QuadrupleGyre(1.0, 0.25)
    QuadrupleGyre(1.0, 0.0)


def test_shear_splitting_abc_axes_in_order():
    scheme = shear_splitting(ABC_SPEC, 0.3)
    assert tuple(s.axis for s in scheme.steps) == (0, 1, 2)
    assert scheme.tau == 0.3


def test_shear_splitting_translation_constant():
    scheme = shear_splitting(Translation(1.0), 0.3)
    (step,) = scheme.steps
    pts = np.random.default_rng(0).random((10, 1))
    assert np.allclose(step.displacement(pts), 0.3)


def test_shear_splitting_gyre_unsupported():
    with pytest.raises(UnsupportedSplittingError):
        shear_splitting(GYRE_SPEC, 0.1)


def test_shear_steps_independent_of_own_axis():
    # spot evaluation: perturbing the displaced coordinate leaves delta fixed
    rng = np.random.default_rng(1)
    for spec in [Translation(0.7), Pendulum(), Duffing(1.0, -1.0), ABC_SPEC]:
        scheme = shear_splitting(spec, 0.21)
        pts = rand_points(spec, 20, seed=2)
        for step in scheme.steps:
            base = step.displacement(pts)
            bumped = pts.copy()
            bumped[:, step.axis] += rng.random(20) - 0.5
            assert np.allclose(step.displacement(bumped), base)


def test_shear_jacobian_unit_determinant():
    # finite-difference Jacobian of each shear has det 1 within 1e-8
    eps = 1e-6
    for spec in [Pendulum(), Duffing(1.0, -1.0), ABC_SPEC]:
        scheme = shear_splitting(spec, 0.17)
        pts = rand_points(spec, 5, seed=3)
        m = pts.shape[1]
        for step in scheme.steps:
            for x in pts:
                J = np.empty((m, m))
                for k in range(m):
                    dx = np.zeros(m)
                    dx[k] = eps
                    J[:, k] = (step.apply(x + dx) - step.apply(x - dx)) / (2 * eps)
                assert abs(np.linalg.det(J) - 1.0) < 1e-8


def test_integrate_translation_exact():
    y = integrate_tau(Translation(1.0), 0.3, np.array([0.2]))
    assert y[0] == pytest.approx(0.5)


def test_integrate_tau_zero_identity():
    for spec in ALL_SPECS:
        x = rand_points(spec, 4, seed=4)
        assert np.array_equal(integrate_tau(spec, 0.0, x), x)


def test_integrate_substeps_validation():
    with pytest.raises(ValueError):
        integrate_tau(Pendulum(), 0.1, np.array([0.0, 0.0]), substeps=0)


def test_pendulum_leapfrog_energy_drift():
    # one leapfrog step from (1,0), tau=0.01, against a fine RK4 reference
    H = energy_function(Pendulum())
    x0 = np.array([1.0, 0.0])
    x1 = integrate_tau(Pendulum(), 0.01, x0)
    assert abs(H(x1) - H(x0)) <= 1e-4
    ref = integrate_reference(Pendulum(), 0.01, x0, substeps=10_000)
    assert np.abs(x1 - ref).max() <= 1e-4


def test_group_property_sampling():
    # one tau-step twice vs one 2-tau step with doubled substeps
    for spec in ALL_SPECS:
        x = rand_points(spec, 100, seed=5)
        once = integrate_tau(spec, 0.05, integrate_tau(spec, 0.05, x, 4), 4)
        both = integrate_tau(spec, 0.10, x, 8)
        dom = default_domain(spec)
        diff = np.abs(once - both)
        for k in range(dom.dim):
            if dom.periodic[k]:
                diff[:, k] = np.minimum(diff[:, k], dom.widths[k] - diff[:, k])
        assert diff.max() < 1e-12


def test_abc_splitting_consistency_order():
    # one splitting step approximates the flow to O(tau^2) local error
    rng_pts = rand_points(ABC_SPEC, 100, seed=6)
    taus = [0.2, 0.1, 0.05, 0.025]
    errs = []
    for tau in taus:
        approx = integrate_tau(ABC_SPEC, tau, rng_pts, substeps=1)
        ref = integrate_reference(ABC_SPEC, tau, rng_pts, substeps=64)
        diff = np.abs(approx - ref)
        diff = np.minimum(diff, 1.0 - diff)  # all axes periodic, width 1
        errs.append(diff.max())
    slopes = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert min(slopes) >= 1.8


def test_integrate_blowup_detected():
    with np.errstate(over="ignore"), pytest.raises(NumericalBlowupError):
        integrate_tau(Duffing(1.0, -1.0), 1.0, np.array([1e200, 1e200]))


def test_energy_levels():
    assert energy_level(Pendulum()) == pytest.approx(0.5 * math.pi**2 + 1)
    assert energy_level(Duffing(1.0, -1.0)) == pytest.approx(0.25 * math.pi**4)


def test_duffing_domain_contains_level_set():
    spec = Duffing(1.0, -1.0)
    dom = default_domain(spec)
    H = energy_function(spec)
    lev = energy_level(spec)
    # the energy bound is attained inside the box, not outside it
    corners = np.array(np.meshgrid(dom.lo, dom.hi)).T.reshape(-1, 2)
    rng = np.random.default_rng(7)
    pts = np.asarray(dom.lo) + rng.random((2000, 2)) * dom.widths
    inside = pts[H(pts) <= lev]
    assert len(inside) > 0
    assert np.all(np.abs(inside) <= np.asarray(dom.hi) + 1e-12)


def test_obs_gyre_bump_support():
    rng = np.random.default_rng(8)
    pts = rng.random((1000, 2))
    r2 = (pts[:, 0] - 0.5) ** 2 + (pts[:, 1] - 0.5) ** 2
    vals = gyre_bump(pts[:, 0], pts[:, 1])
    assert np.all(vals[r2 > 0.25] == 0.0)
    assert np.all(vals[r2 <= 0.25] > 0.0)


def test_obs_abc_bounded_by_four():
    pts = np.random.default_rng(9).random((1000, 3))
    assert np.all(np.abs(obs_abc(pts)) <= 4.0 + 1e-12)


def test_observables_match_formulas_at_random_points():
    rng = np.random.default_rng(10)
    pts2 = rng.random((1000, 2)) * 4 - 2
    pts3 = rng.random((1000, 3))
    x1, x2 = pts2[:, 0], pts2[:, 1]
    assert np.allclose(
        OBSERVABLES["obs_pendulum"](pts2), 0.5 * x2**2 - np.cos(x1)
    )
    assert np.allclose(
        OBSERVABLES["obs_duffing_energy"](pts2),
        0.5 * x2**2 - 0.5 * x1**2 + 0.25 * x1**4,
    )
    assert np.allclose(
        OBSERVABLES["obs_duffing_complex"](pts2), 0.5 * x2**2 + 0.5j * x1**2
    )
    g = OBSERVABLES["obs_gyre"](pts3)
    assert np.allclose(
        g.imag, np.sin(4 * np.pi * pts3[:, 0]) * np.sin(4 * np.pi * pts3[:, 1])
    )
    assert np.allclose(g.real, 4.0 * gyre_bump(pts3[:, 0], pts3[:, 1]))
    a = OBSERVABLES["obs_abc"](pts3)
    direct = (
        np.exp(4j * np.pi * pts3[:, 1])
        + 2 * np.exp(6j * np.pi * pts3[:, 0])
        + np.exp(2j * np.pi * pts3[:, 2])
    )
    assert np.allclose(a, direct)
