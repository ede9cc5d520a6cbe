"""
Tests for the exact Gaussian convolutions and the time stepper
"""
import numpy as np
import pytest
from scipy import integrate as quadrature, linalg

from dampspde.core.coefficients import CoefficientSet, build_functional
from dampspde.core.damped_semigroup import mode_matrix, phi_matrices, propagators
from dampspde.core.integrator import (
    GaussianSampler,
    Scheme,
    StateField,
    accumulated_covariance,
    augmented_covariance,
    augmented_cross_blocks,
    build_step_plan,
    integrate,
    run_path,
    run_paths,
    stochastic_convolution_covariance,
)
from dampspde.core.noise_model import NoiseSpec, PointChannel
from dampspde.core.spectral_domain import BoxDomain, enumerate_modes, point_mass_coefficients
from dampspde.exceptions import ConfigurationError, IntegrationError

SILENT = {'C': {'name': 'constant', 'value': 0.0}}


def test_stationary_covariance_of_critical_mode():
    cov = stochastic_convolution_covariance(mode_matrix(1.0, 2.0), [0.0, 1.0], 50.0)
    np.testing.assert_allclose(cov, np.diag([0.25, 0.25]), atol=1e-8)


def test_accumulated_steps_match_one_long_step():
    m = mode_matrix(30.0, 1.2)
    np.testing.assert_allclose(
        accumulated_covariance(m, [0.0, 1.0], 0.05, 10),
        stochastic_convolution_covariance(m, [0.0, 1.0], 0.5),
        rtol=1e-8, atol=1e-14,
    )


def test_convolution_covariance_is_symmetric_psd():
    cov = stochastic_convolution_covariance(mode_matrix(900.0, 0.4), [0.0, 2.0], 0.01)
    np.testing.assert_allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-15)


def test_sampler_keeps_singular_directions_exact():
    cov = np.outer([1.0, 2.0], [1.0, 2.0])
    sampler = GaussianSampler(cov, clip=1e-12)
    assert sampler.rank == 1
    np.testing.assert_allclose(sampler.factor @ sampler.factor.T, cov, atol=1e-12)


def test_sampler_handles_zero_rows():
    cov = np.diag([0.0, 4.0, 0.0])
    sampler = GaussianSampler(cov, clip=1e-12)
    draws = sampler.transform(np.ones((5, sampler.rank)))
    assert np.all(draws[:, [0, 2]] == 0)
    np.testing.assert_allclose(np.abs(draws[:, 1]), 2.0)


def test_linear_additive_scenario_uses_exact_scheme(make_scenario):
    scenario = make_scenario()
    plan = build_step_plan(scenario.truncation(), scenario.rho, scenario.dt, scenario.noise,
                           scenario.coefficient_set(), persist=True)
    assert plan.scheme is Scheme.EXACT_LINEAR_ADDITIVE
    assert plan.augmented_sampler is not None


def test_point_functional_without_point_is_rejected(plate_1d):
    coefficients = CoefficientSet(G=build_functional({'name': 'constant', 'value': 1.0}))
    with pytest.raises(ConfigurationError):
        build_step_plan(plate_1d, 2.0, 0.01, NoiseSpec(), coefficients)


def test_path_is_deterministic(make_scenario):
    scenario = make_scenario()
    first = run_path(scenario, seed=5, path_id=1)
    second = run_path(scenario, seed=5, path_id=1)
    np.testing.assert_array_equal(first.u, second.u)
    np.testing.assert_array_equal(first.v, second.v)


def test_path_does_not_depend_on_batch(make_scenario):
    scenario = make_scenario()
    batch = run_paths(scenario, 5, [0, 1, 2, 3])
    alone = run_paths(scenario, 5, [2])
    np.testing.assert_allclose(batch.u[:, 2], alone.u[:, 0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(batch.increments.L[:, 2], alone.increments.L[:, 0], rtol=1e-12, atol=1e-15)


def test_seeds_give_different_paths(make_scenario):
    scenario = make_scenario()
    assert not np.allclose(run_path(scenario, 1).u[-1], run_path(scenario, 2).u[-1])


def test_zero_noise_and_zero_data_stay_at_rest(make_scenario):
    scenario = make_scenario(coefficients=SILENT, initial={'u0': 'zero'})
    trajectory = run_paths(scenario, 0, [0, 1])
    assert np.all(trajectory.u == 0)
    assert np.all(trajectory.v == 0)


def test_noise_free_run_follows_the_semigroup(make_scenario):
    scenario = make_scenario(coefficients=SILENT)
    trajectory = run_path(scenario, 0)
    trunc = scenario.truncation()
    start = np.stack([trajectory.initial.u[0], trajectory.initial.v[0]], axis=-1)
    for index, t in enumerate(trajectory.times):
        expected = np.einsum('nij,nj->ni', propagators(trunc.a, scenario.rho, t), start)
        np.testing.assert_allclose(trajectory.u[index, 0], expected[:, 0], atol=1e-10)
        np.testing.assert_allclose(trajectory.v[index, 0], expected[:, 1], atol=1e-10)


def test_output_snapshots_and_increments(make_scenario):
    scenario = make_scenario()
    trajectory = run_paths(scenario, 5, [0, 1])
    np.testing.assert_allclose(trajectory.times, np.arange(0.0, 0.25 + 1e-12, 0.0625))
    assert trajectory.u.shape == (5, 2, 8)
    assert trajectory.increments.n_steps == scenario.n_steps
    assert trajectory.time_index(0.125) == 2


def test_multiplicative_run_is_finite(make_scenario):
    scenario = make_scenario(coefficients={
        'C': {'name': 'integral', 'phi': 'sin', 'amplitude': 0.2},
        'f': {'name': 'linear', 'alpha': -0.5},
    })
    trajectory = run_paths(scenario, 3, [0, 1])
    assert trajectory.scheme is Scheme.EXPONENTIAL_EULER
    assert np.all(np.isfinite(trajectory.u))
    assert trajectory.increments.M.shape == (scenario.n_steps, 2, 8)


def test_overflowing_coefficient_names_the_path(make_scenario):
    scenario = make_scenario(coefficients={'f': {'name': 'linear', 'alpha': 1e300}})
    with pytest.raises(IntegrationError) as info:
        run_paths(scenario, 5, [0, 1])
    assert info.value.path_id == 0
    assert info.value.step is not None


def test_state_shape_mismatch(make_scenario):
    scenario = make_scenario()
    plan = build_step_plan(scenario.truncation(), scenario.rho, scenario.dt, scenario.noise,
                           scenario.coefficient_set())
    with pytest.raises(ConfigurationError):
        integrate(plan, StateField.zeros(3), 4, [4], 0, [0])


def _kernel(a, rho, s):
    E, Phi1, Phi2, _ = phi_matrices(np.array([a]), rho, s)
    return np.array([E[0, 0, 1], E[0, 1, 1], Phi1[0, 0, 1], Phi2[0, 0, 1], 1.0, s])


def test_augmented_block_matches_van_loan_for_smooth_mode():
    a, rho, dt = 1.0, 1.0, 0.25
    drift = np.zeros((6, 6))
    drift[0, 1] = 1.0
    drift[1, 0] = -a
    drift[1, 1] = -rho * np.sqrt(a)
    drift[2, 0] = 1.0
    drift[3, 2] = 1.0
    drift[5, 4] = 1.0
    loading = np.array([0.0, 1.0, 0.0, 0.0, 1.0, 0.0])
    balance = np.array([np.sqrt(a), 1.0, np.sqrt(a) / dt, np.sqrt(a) / dt ** 2, 1.0, 1.0 / dt])
    drift = balance[:, None] * drift / balance[None, :]
    loading = balance * loading
    system = np.block([[drift, np.outer(loading, loading)], [np.zeros((6, 6)), -drift.T]]) * dt
    expo = linalg.expm(system)
    expected = expo[:6, 6:] @ expo[:6, :6].T / np.outer(balance, balance)

    block = augmented_cross_blocks(np.array([a]), rho, dt, [0], [0])[0]
    scale = np.sqrt(np.diag(expected))
    np.testing.assert_allclose(block / np.outer(scale, scale), expected / np.outer(scale, scale), atol=1e-9)


@pytest.mark.parametrize("rho", [0.5, 2.0, 3.0])
def test_augmented_blocks_match_quadrature_for_stiff_pairs(rho):
    a = np.array([4.0, 4.0e4, 1.0e6])
    dt = 1.0 / 256.0
    k, l = np.meshgrid(np.arange(3), np.arange(3), indexing='ij')
    blocks = augmented_cross_blocks(a, rho, dt, k.ravel(), l.ravel()).reshape(3, 3, 6, 6)
    scales = [np.sqrt(np.diag(blocks[i, i])) for i in range(3)]
    for i in range(3):
        for j in range(3):
            def integrand(s):
                return np.outer(_kernel(a[i], rho, s) / scales[i], _kernel(a[j], rho, s) / scales[j])
            expected, _ = quadrature.quad_vec(integrand, 0.0, dt, epsabs=1e-13, epsrel=1e-11)
            np.testing.assert_allclose(blocks[i, j] / np.outer(scales[i], scales[j]), expected, atol=1e-6)


def test_augmented_covariance_is_consistent_on_stiff_truncation():
    trunc = enumerate_modes(BoxDomain((1.0,)), 'plate', 64)
    dt, rho, n = 1.0 / 256.0, 2.0, trunc.size
    direction = point_mass_coefficients(trunc, [0.3])
    cov = augmented_covariance(trunc, rho, dt, direction, np.zeros(n))
    variances = np.diag(cov)
    assert np.all(variances >= 0)
    for m in (0, 5, 63):
        rows = [m, n + m]
        expected = stochastic_convolution_covariance(mode_matrix(trunc.a[m], rho), [0.0, direction[m]], dt)
        np.testing.assert_allclose(cov[np.ix_(rows, rows)], expected, rtol=1e-8, atol=1e-12 * np.abs(expected).max())
    scale = np.sqrt(np.where(variances > 0, variances, 1.0))
    corr = cov / np.outer(scale, scale)
    assert np.abs(corr).max() <= 1.0 + 1e-6
    assert np.linalg.eigvalsh(corr)[0] > -1e-6


def test_distributed_augmented_covariance_couples_modes_with_themselves(plate_1d):
    dt, n = 1.0 / 256.0, plate_1d.size
    direction = 1.0 / np.arange(1, n + 1)
    cov = augmented_covariance(plate_1d, 2.0, dt, np.zeros(n), direction).reshape(6, n, 6, n)
    off = cov.copy()
    off[:, np.arange(n), :, np.arange(n)] = 0.0
    assert np.all(off == 0.0)
    expected = stochastic_convolution_covariance(mode_matrix(plate_1d.a[3], 2.0), [0.0, direction[3]], dt)
    np.testing.assert_allclose(cov[:2, 3, :2, 3], expected, rtol=1e-8)


def test_persisted_run_keeps_exact_variances_on_stiff_truncation():
    trunc = enumerate_modes(BoxDomain((1.0,)), 'plate', 64)
    noise = NoiseSpec(point=PointChannel((0.3,)))
    coefficients = CoefficientSet(C=build_functional({'name': 'constant', 'value': 1.0}))
    dt, n_steps, paths = 1.0 / 256.0, 32, 1000
    profile = point_mass_coefficients(trunc, [0.3])
    expected = accumulated_covariance(mode_matrix(trunc.a[0], 2.0), [0.0, profile[0]], dt, n_steps)
    for persist in (False, True):
        plan = build_step_plan(trunc, 2.0, dt, noise, coefficients, persist=persist)
        trajectory = integrate(plan, StateField.zeros(trunc.size), n_steps, [n_steps], 7, range(paths))
        assert np.var(trajectory.u[0, :, 0]) == pytest.approx(expected[0, 0], rel=0.2)
        assert np.var(trajectory.v[0, :, 0]) == pytest.approx(expected[1, 1], rel=0.2)
    assert np.all(np.isfinite(trajectory.increments.q))
    assert np.abs(trajectory.increments.p).max() < 1.0


@pytest.mark.slow
def test_empirical_covariance_matches_exact_convolution():
    trunc = enumerate_modes(BoxDomain((1.0,)), 'plate', 4)
    noise = NoiseSpec(point=PointChannel((0.3,)))
    coefficients = CoefficientSet(C=build_functional({'name': 'constant', 'value': 1.0}))
    dt, n_steps = 1.0 / 64.0, 16
    plan = build_step_plan(trunc, 2.0, dt, noise, coefficients)
    trajectory = integrate(plan, StateField.zeros(trunc.size), n_steps, [n_steps], 0, range(10000))
    profile = point_mass_coefficients(trunc, [0.3])
    expected = accumulated_covariance(mode_matrix(trunc.a[0], 2.0), [0.0, profile[0]], dt, n_steps)
    samples = np.stack([trajectory.u[0, :, 0], trajectory.v[0, :, 0]], axis=1)
    np.testing.assert_allclose(np.cov(samples, rowvar=False), expected, rtol=0.05,
                               atol=0.05 * np.sqrt(expected[0, 0] * expected[1, 1]))
