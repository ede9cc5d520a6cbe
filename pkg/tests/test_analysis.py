"""
Tests for the verification analyses
"""
from fractions import Fraction

import numpy as np
import pytest

from dampspde.core.analysis import (
    derivative_consistency,
    exponent_plan,
    holder_output_times,
    holder_regression,
    slope_monotone,
    truncation_cauchy,
    weak_residual,
)
from dampspde.core.integrator import Scheme, StateField, Trajectory, run_paths
from dampspde.core.noise_model import NoiseSpec, PointChannel, check_admissibility
from dampspde.core.spectral_domain import BoxDomain, EquationKind, enumerate_modes
from dampspde.exceptions import ArtifactError, ConfigurationError

SINGLE_MODE = enumerate_modes(BoxDomain((1.0,)), EquationKind.PLATE, 1)


def synthetic(steps, dt, u, v):
    """Single-mode trajectory from (n_out, paths) arrays"""
    steps = np.asarray(steps)
    paths = u.shape[1]
    return Trajectory(
        trunc=SINGLE_MODE, rho=2.0, dt=dt, scheme=Scheme.EXACT_LINEAR_ADDITIVE,
        path_ids=np.arange(paths), times=steps * dt, steps=steps,
        u=u[..., None], v=v[..., None], initial=StateField.zeros(1, paths),
    )


def test_holder_output_times():
    steps, bases, offsets = holder_output_times(1.0, 1.0 / 256.0)
    assert bases == [64, 72, 80, 88, 96, 104, 112, 120]
    assert offsets == [1, 2, 4, 8, 16, 32]
    assert steps[0] == 0 and steps[-1] == 256
    assert 120 + 32 in steps


def test_exponent_plan():
    report = check_admissibility('plate', 1, 2, NoiseSpec(point=PointChannel((0.3,))), theta_C="3/10")
    plan = exponent_plan(report, Fraction(1, 2))
    assert plan.lambda_max == Fraction(1, 5)
    assert plan.probes[0].p == 10
    assert plan.probes[0].alpha == Fraction(9, 20)
    assert len(plan.probes) == 7
    assert sum(p.required for p in plan.probes) == 5
    assert all(p.delta + p.lam < plan.lambda_max for p in plan.probes if p.required)
    assert plan.contains(0, Fraction(3, 20))


def test_eta_caps_lambda_max():
    report = check_admissibility('plate', 1, 2, NoiseSpec(point=PointChannel((0.3,))))
    assert exponent_plan(report, Fraction(1, 16)).lambda_max == Fraction(1, 16)


def test_exponent_plan_rejects_inadmissible_report():
    report = check_admissibility('plate', 2, "5/2", NoiseSpec(point=PointChannel((0.5, 0.5))))
    with pytest.raises(ConfigurationError, match="q-window"):
        exponent_plan(report)


def test_brownian_velocity_has_half_exponent():
    dt = 1.0 / 256.0
    steps, _, _ = holder_output_times(1.0, dt)
    increments = np.random.default_rng(7).standard_normal((256, 400)) * np.sqrt(dt)
    brownian = np.vstack([np.zeros((1, 400)), np.cumsum(increments, axis=0)])
    trajectory = synthetic(steps, dt, np.zeros((len(steps), 400)), brownian[steps])
    report = holder_regression(trajectory, 0.0, 'v', lambda_max=0.4, subtract_flow=False)
    assert report.exponent == pytest.approx(0.5, abs=0.05)
    assert report.passed
    assert report.base_points == 8
    assert len(report.plot_data()) == 6


def test_holder_regression_needs_enough_scales():
    dt = 1.0 / 256.0
    steps, _, _ = holder_output_times(1.0, dt)
    zeros = np.zeros((len(steps), 2))
    trajectory = synthetic(steps, dt, zeros, zeros + 1.0)
    with pytest.raises(ConfigurationError):
        holder_regression(trajectory, 0.0, 'v', h_range=(dt, 2 * dt))


def test_slope_monotone_compares_bands():
    dt = 1.0 / 256.0
    steps, _, _ = holder_output_times(1.0, dt)
    rng = np.random.default_rng(3)
    brownian = np.vstack([np.zeros((1, 200)), np.cumsum(rng.standard_normal((256, 200)) * np.sqrt(dt), axis=0)])
    trajectory = synthetic(steps, dt, np.zeros((len(steps), 200)), brownian[steps])
    reports = [holder_regression(trajectory, delta, 'v', subtract_flow=False) for delta in (0.0, 0.1)]
    assert slope_monotone(reports)


def test_weak_residual_needs_increments(make_scenario):
    scenario = make_scenario(run={'persist_increments': False})
    trajectory = run_paths(scenario, 5, [0])
    with pytest.raises(ArtifactError):
        weak_residual(trajectory)


def test_weak_residual_closes_on_linear_additive_run(make_scenario):
    trajectory = run_paths(make_scenario(), 5, [0, 1, 2, 3])
    report = weak_residual(trajectory)
    assert report.passed
    assert report.max_relative <= 1e-6
    assert len(report.to_frame()) == 8 * 4


def test_dropping_damping_breaks_the_identity(make_scenario):
    trajectory = run_paths(make_scenario(), 5, [0, 1])
    control = weak_residual(trajectory, damping=False)
    assert not control.passed
    assert control.max_relative >= 1e-2


def test_weak_residual_rejects_unknown_mode(make_scenario):
    trajectory = run_paths(make_scenario(), 5, [0])
    with pytest.raises(ConfigurationError):
        weak_residual(trajectory, test_modes=[40])


def test_derivative_consistency_is_second_order():
    dt = 0.05
    steps = np.arange(21)
    t = steps * dt
    trajectory = synthetic(steps, dt, np.sin(t)[:, None], np.cos(t)[:, None])
    report = derivative_consistency(trajectory)
    assert report.observed_order == pytest.approx(2.0, abs=0.1)
    assert report.passed


def test_derivative_consistency_needs_uniform_outputs():
    steps = np.array([0, 1, 3, 4, 5, 6, 7, 8, 9, 10])
    zeros = np.zeros((len(steps), 1))
    with pytest.raises(ConfigurationError):
        derivative_consistency(synthetic(steps, 0.1, zeros, zeros))


def test_truncation_cauchy_needs_a_high_cutoff(make_scenario):
    trajectory = run_paths(make_scenario(), 5, [0])
    with pytest.raises(ConfigurationError):
        truncation_cauchy(trajectory)


def test_truncation_tails_decay(make_scenario):
    scenario = make_scenario(truncation={'cutoff': 32}, run={'persist_increments': False})
    trajectory = run_paths(scenario, 5, [0, 1, 2, 3])
    report = truncation_cauchy(trajectory, cutoffs=(4, 8, 16))
    assert report.monotone
    assert report.slope < 0
    assert report.passed


def test_subtracting_the_flow_removes_initial_data(make_scenario):
    common = {'time': {'T': 1.0}, 'output': {'kind': 'holder'}, 'run': {'persist_increments': False}}
    first = run_paths(make_scenario(**common), 9, list(range(8)))
    second = run_paths(make_scenario(initial={'u0': {'profile': 'parabola', 'amplitude': -10.0},
                                              'u1': {'profile': 'mode', 'index': [2], 'amplitude': -1.0}},
                                     **common), 9, list(range(8)))
    for component in ('u', 'v'):
        kept = holder_regression(first, 0.0, component, lambda_max=0.25)
        moved = holder_regression(second, 0.0, component, lambda_max=0.25)
        np.testing.assert_allclose(moved.moments, kept.moments, rtol=1e-8)
        assert moved.measured_slope == pytest.approx(kept.measured_slope, abs=1e-8)

        raw_kept = holder_regression(first, 0.0, component, lambda_max=0.25, subtract_flow=False)
        raw_moved = holder_regression(second, 0.0, component, lambda_max=0.25, subtract_flow=False)
        assert not np.allclose(raw_moved.moments, raw_kept.moments, rtol=1e-3)
