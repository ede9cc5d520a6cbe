"""
Tests for noise channels, admissibility arithmetic and increment streams
"""
from fractions import Fraction

import numpy as np
import pytest

from dampspde.core.noise_model import (
    CompactCovariance,
    IncrementStream,
    LrValued,
    NoiseSpec,
    PointChannel,
    WhiteNoise1D,
    Window,
    check_admissibility,
    decaying_lambdas,
    exact,
    sample_increments,
    validate_covariance,
)
from dampspde.core.spectral_domain import BoxDomain, EquationKind, enumerate_modes
from dampspde.exceptions import ConfigurationError

POINT_1D = NoiseSpec(point=PointChannel((0.3,)))
POINT_2D = NoiseSpec(point=PointChannel((0.5, 0.5)))


def test_exact_keeps_decimal_text():
    assert exact("0.3") == Fraction(3, 10)
    assert exact("4/3") == Fraction(4, 3)
    assert exact(2) == Fraction(2)


def test_plate_point_window_in_one_dimension():
    report = check_admissibility('plate', 1, 2, POINT_1D)
    assert report.verdict
    assert report.theta_C_window == Window(Fraction(1, 4), Fraction(1, 2))
    assert str(report.theta_C_window) == "(1/4, 1/2)"
    assert report.theta_C == Fraction(3, 8)
    assert report.theta_B == 0
    assert report.lambda_max == Fraction(1, 8)
    assert report.weak_formulation


def test_theta_override_sets_lambda_max():
    report = check_admissibility('plate', 1, 2, POINT_1D, theta_C="3/10")
    assert report.verdict
    assert report.lambda_max == Fraction(1, 5)


def test_theta_override_outside_window_is_a_violation():
    report = check_admissibility('plate', 1, 2, POINT_1D, theta_C="1/5")
    assert not report.verdict
    assert any('theta_C' in v for v in report.violations)


def test_plate_q_window_in_two_dimensions():
    report = check_admissibility(EquationKind.PLATE, 2, "5/2", POINT_2D)
    assert not report.verdict
    assert any('q-window (1, 2)' in v for v in report.violations)


def test_point_window_widens_as_q_decreases():
    windows = [check_admissibility('plate', 2, q, POINT_2D).theta_C_window for q in ("19/10", "3/2", "6/5", "11/10")]
    assert [w.lower for w in windows] == [Fraction(9, 19), Fraction(1, 3), Fraction(1, 6), Fraction(1, 11)]
    for wide, narrow in zip(windows[1:], windows[:-1]):
        assert wide.lower < narrow.lower
        assert wide.contains(narrow.default())


def test_wave_windows():
    report = check_admissibility('wave', 1, "3/2", POINT_1D)
    assert report.q_window == Window(Fraction(1), Fraction(2))
    assert report.theta_C_window == Window(Fraction(1, 3), Fraction(1, 2))
    assert report.verdict


def test_white_noise_rules():
    white = NoiseSpec(distributed=WhiteNoise1D())
    assert not check_admissibility('wave', 1, 3, white).verdict
    assert not check_admissibility('plate', 1, 2, white).verdict
    report = check_admissibility('plate', 1, 4, white)
    assert report.verdict
    assert report.theta_B_window == Window(Fraction(3, 8), Fraction(1, 2))


def test_compact_covariance_window_is_closed_at_zero():
    noise = NoiseSpec(distributed=CompactCovariance((1.0, 0.25)))
    report = check_admissibility('plate', 1, 2, noise)
    assert report.theta_B_window.closed_lower
    assert report.theta_B == 0


def test_lr_covariance_requires_r_above_dimension():
    noise = NoiseSpec(distributed=LrValued(1.0, (1.0,)))
    report = check_admissibility('plate', 1, 2, noise)
    assert not report.verdict


def test_invalid_dimension():
    with pytest.raises(ConfigurationError):
        check_admissibility('plate', 0, 2, POINT_1D)


def test_negative_eigenvalues_rejected():
    with pytest.raises(ConfigurationError):
        CompactCovariance((1.0, -0.5))


def test_lambdas_outside_truncation_are_dropped(plate_1d):
    noise = NoiseSpec(distributed=CompactCovariance((1.0, 2.0), ((2,), (40,))))
    lambdas = noise.lambdas(plate_1d)
    assert lambdas[1] == 1.0
    assert lambdas.sum() == 1.0


def test_trace_class_covariance_is_summable():
    trunc = enumerate_modes(BoxDomain((1.0,)), 'plate', 64)
    noise = NoiseSpec(distributed=decaying_lambdas(trunc, 2.0))
    report = validate_covariance(noise, trunc)
    assert report.summable
    assert report.bounded_square_function
    assert report.sup_norm > 0
    assert list(report.to_frame()['cutoff']) == report.cutoffs


def test_increment_stream_is_split_invariant(plate_1d):
    noise = NoiseSpec(point=PointChannel((0.3,)), distributed=decaying_lambdas(plate_1d, 1.0))
    whole = IncrementStream(noise, plate_1d, 0.01, seed=3, path_id=2, block=7).draw(40)
    split = IncrementStream(noise, plate_1d, 0.01, seed=3, path_id=2, block=64)
    first, second = split.draw(15), split.draw(25)
    np.testing.assert_array_equal(whole.dw2, np.concatenate([first.dw2, second.dw2]))
    np.testing.assert_array_equal(whole.dbeta, np.concatenate([first.dbeta, second.dbeta]))


def test_increment_variances(plate_1d):
    noise = NoiseSpec(point=PointChannel((0.3,)), distributed=decaying_lambdas(plate_1d, 2.0))
    draws = IncrementStream(noise, plate_1d, 0.02, seed=0).draw(20000)
    assert draws.dw2.var() == pytest.approx(0.02, rel=0.05)
    assert draws.dbeta[:, 1].var() == pytest.approx(0.25 * 0.02, rel=0.05)


def test_paths_have_independent_streams(plate_1d):
    first = IncrementStream(POINT_1D, plate_1d, 0.01, seed=1, path_id=0).draw(10)
    second = IncrementStream(POINT_1D, plate_1d, 0.01, seed=1, path_id=1).draw(10)
    assert not np.array_equal(first.dw2, second.dw2)
    assert np.all(first.dbeta == 0)


def test_sample_increments_is_deterministic_and_prefix_stable(plate_1d):
    noise = NoiseSpec(point=PointChannel((0.3,)), distributed=decaying_lambdas(plate_1d, 1.0))
    first = sample_increments(noise, 0.01, 40, plate_1d, seed=5, path_id=1)
    again = sample_increments(noise, 0.01, 40, plate_1d, seed=5, path_id=1)
    np.testing.assert_array_equal(first.dw2, again.dw2)
    np.testing.assert_array_equal(first.dbeta, again.dbeta)

    head = sample_increments(noise, 0.01, 15, plate_1d, seed=5, path_id=1)
    np.testing.assert_array_equal(head.dw2, first.dw2[:15])
    np.testing.assert_array_equal(head.dbeta, first.dbeta[:15])

    stream = IncrementStream(noise, plate_1d, 0.01, seed=5, path_id=1, block=3)
    parts = [stream.draw(n) for n in (1, 14, 25)]
    np.testing.assert_array_equal(first.dw2, np.concatenate([p.dw2 for p in parts]))
    np.testing.assert_array_equal(first.dbeta, np.concatenate([p.dbeta for p in parts]))


def test_sample_increments_channels(plate_1d):
    noise = NoiseSpec(point=PointChannel((0.3,)), distributed=CompactCovariance((1.0, 0.0), ((1,), (2,))))
    draws = sample_increments(noise, 0.01, 100000, plate_1d, seed=11)
    assert draws.dw2.var() == pytest.approx(0.01, rel=0.03)
    assert draws.dbeta[:, 0].var() == pytest.approx(0.01, rel=0.03)
    assert np.all(draws.dbeta[:, 1] == 0)
    cross = np.mean(draws.dw2 * draws.dbeta[:, 0])
    assert abs(cross) < 4.0 * 0.01 / np.sqrt(len(draws.dw2))
