"""
Tests for gamma-radonifying norms
"""
import numpy as np
import pytest

from dampspde.core.coefficients import build_nemytskii
from dampspde.core.gamma_calculus import (
    FiniteRankOperator,
    GammaMethod,
    equivalence_bench,
    equivalence_constants,
    estimate_L2gamma_lipschitz,
    gamma_norm_mc,
    gamma_norm_square_function,
    ideal_property_check,
    random_finite_rank_operator,
    square_function,
)
from dampspde.core.streams import derive_generator
from dampspde.exceptions import ConfigurationError

POINTS = 32
CELL = 1.0 / (POINTS + 1)


def smooth_columns(rank):
    s = np.arange(1, POINTS + 1) / (POINTS + 1)
    return np.stack([np.sin((k + 1) * np.pi * s) / (k + 1) for k in range(rank)])


def test_square_function_of_orthogonal_columns():
    op = FiniteRankOperator(smooth_columns(3), 2.0, CELL)
    expected = np.sqrt(np.sum(smooth_columns(3) ** 2, axis=0))
    np.testing.assert_allclose(square_function(op), expected)


def test_q_two_square_function_is_hilbert_schmidt_norm():
    columns = smooth_columns(4)
    op = FiniteRankOperator(columns, 2.0, CELL)
    expected = np.sqrt(np.sum(columns ** 2) * CELL)
    assert gamma_norm_square_function(op).value == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize('q', [1.0, 1.5, 3.0])
def test_square_function_norm_is_a_norm(q):
    gen = np.random.default_rng(12)
    first = gen.standard_normal((5, POINTS))
    second = gen.standard_normal((5, POINTS))

    def norm(columns):
        return gamma_norm_square_function(FiniteRankOperator(columns, q, CELL)).value

    for scale in (-2.5, 0.1, 7.0):
        assert norm(scale * first) == pytest.approx(abs(scale) * norm(first), rel=1e-10)
    assert norm(first + second) <= norm(first) + norm(second) + 1e-10
    assert norm(first - first) == 0.0


def test_zero_rank_operator_has_zero_norm():
    op = FiniteRankOperator(np.zeros((0, POINTS)), 3.0, CELL)
    estimate = gamma_norm_square_function(op)
    assert estimate.value == 0.0
    assert estimate.method is GammaMethod.SQUARE_FUNCTION


def test_single_column_monte_carlo_is_exact():
    op = FiniteRankOperator(smooth_columns(1), 3.0, CELL)
    mc = gamma_norm_mc(op, samples=2000, seed=4)
    assert mc.value == pytest.approx(gamma_norm_square_function(op).value, rel=1e-10)


def test_monte_carlo_agrees_for_q_two():
    op = FiniteRankOperator(smooth_columns(5), 2.0, CELL)
    mc = gamma_norm_mc(op, samples=20000, seed=1)
    sf = gamma_norm_square_function(op).value
    assert mc.method is GammaMethod.MC_GAUSSIAN
    assert mc.ci_halfwidth > 0
    assert abs(mc.value - sf) < 0.05 * sf


def test_monte_carlo_is_reproducible():
    op = FiniteRankOperator(smooth_columns(3), 1.5, CELL)
    first = gamma_norm_mc(op, samples=1000, seed=9, threads=1)
    second = gamma_norm_mc(op, samples=1000, seed=9, threads=4)
    assert first.value == second.value


def test_monte_carlo_needs_samples():
    op = FiniteRankOperator(smooth_columns(2), 2.0, CELL)
    with pytest.raises(ConfigurationError):
        gamma_norm_mc(op, samples=10, seed=0)


def test_time_dependent_operator_needs_measure():
    op = FiniteRankOperator(np.stack([smooth_columns(2)] * 3), 2.0, CELL)
    with pytest.raises(ConfigurationError):
        gamma_norm_square_function(op)
    weights = np.full(3, 1.0 / 3.0)
    fixed = FiniteRankOperator(smooth_columns(2), 2.0, CELL)
    assert gamma_norm_square_function(op, weights).value == pytest.approx(
        gamma_norm_square_function(fixed).value, rel=1e-12)


def test_ideal_property_holds():
    op = random_finite_rank_operator(derive_generator(3, 0), 6, 1.5, POINTS)
    S1, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 6)))
    S2 = np.linspace(-2.0, 1.0, POINTS)
    check = ideal_property_check(op, S1, S2)
    assert check.holds
    assert check.ratio <= 1.0 + 1e-9


def test_lipschitz_estimate_within_declared_constant():
    b = build_nemytskii({'name': 'sin', 'amplitude': 0.5, 'frequency': 2.0})
    estimate = estimate_L2gamma_lipschitz(b, [0.25, 0.25, 0.5], trials=30, seed=0, q=3.0)
    assert estimate.declared == pytest.approx(1.0)
    assert estimate.within_declared


def test_equivalence_constants_are_finite():
    bench = equivalence_bench(q_values=(1.5, 4.0), operators=5, rank=4, samples=500, seed=0)
    assert len(bench) == 10
    constants = equivalence_constants(bench)
    assert list(constants['q']) == [1.5, 4.0]
    assert np.all(constants['K_q'] >= 1.0)
    assert np.all(np.isfinite(constants['K_q']))
