"""Tests for performance measures, data generation and the Monte Carlo harness."""

import itertools

import numpy as np
import pytest

from dmr.constraints import FeasibleModel
from dmr.core import SelectionResult
from dmr.errors import ZeroVariance
from dmr.evaluation import (
    ExperimentSpec,
    Replication,
    accepted_constraints,
    aggregate,
    correct_factors,
    difference_rates,
    elementary_rates,
    generate_experiment,
    run_monte_carlo,
    star_rates,
)
from dmr.model_matrix import DesignLayout

from conftest import random_model

EXAMPLE_LAYOUT = DesignLayout(1, (4,))
EXAMPLE_TRUE = FeasibleModel(EXAMPLE_LAYOUT, (1,), (((1, 4), (2, 3)),))


def satisfied_pairs(partition):
    """Level pairs ``(i, j)``, ``i < j``, sharing a cluster, by brute force."""
    L = max(max(c) for c in partition)
    label = {j: c for c, cluster in enumerate(partition) for j in cluster}
    return {(i, j) for i, j in itertools.combinations(range(1, L + 1), 2) if label[i] == label[j]}


class TruthSelector:
    """Returns the true model regardless of the data."""

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, X, y):
        model = self.spec.true_model
        return SelectionResult(model, self.spec.beta, None, (), "bic", 0.0, 0)


def failing_selector(X, y):
    raise ZeroVariance("always fails")


class TestElementaryRates:
    def test_identical_models(self):
        assert elementary_rates(EXAMPLE_TRUE, EXAMPLE_TRUE) == (1.0, 0.0)

    def test_full_model_selected(self):
        full = FeasibleModel.full(EXAMPLE_LAYOUT)
        assert elementary_rates(EXAMPLE_TRUE, full) == (0.0, 0.0)

    def test_five_level_example(self):
        layout = DesignLayout(0, (5,))
        T = FeasibleModel(layout, (), (((1, 2), (3, 4, 5)),))
        T_hat = FeasibleModel(layout, (), (((1, 2, 3), (4, 5)),))
        B, B_hat = satisfied_pairs(T.partitions[0]), satisfied_pairs(T_hat.partitions[0])
        assert len(B) == 1 + 3
        tpr, fdr = elementary_rates(T, T_hat)
        assert tpr == pytest.approx(len(B & B_hat) / len(B))
        assert fdr == pytest.approx(1 - len(B & B_hat) / len(B_hat))
        assert (tpr, fdr) == pytest.approx((0.5, 0.5))

    def test_continuous_deletions_count(self):
        layout = DesignLayout(2, ())
        T = FeasibleModel(layout, (1,), ())
        assert accepted_constraints(T) == {(0, 2)}
        assert elementary_rates(T, FeasibleModel(layout, (), ())) == (1.0, 0.5)

    def test_difference_rates_complement(self):
        full = FeasibleModel.full(EXAMPLE_LAYOUT)
        assert difference_rates(EXAMPLE_TRUE, EXAMPLE_TRUE) == (1.0, 0.0)
        # The full model keeps all 6 level pairs and the slope; 5 of them are true differences.
        assert difference_rates(EXAMPLE_TRUE, full) == pytest.approx((1.0, 1 - 5 / 7))


class TestStarRates:
    def test_identical_models(self):
        rng = np.random.default_rng(40)
        for _ in range(10):
            T = random_model(rng, DesignLayout(2, (4, 3)))
            assert star_rates(T, T) == (1.0, 0.0)
            assert elementary_rates(T, T) == (1.0, 0.0)

    def test_example_against_full_model(self):
        full = FeasibleModel.full(EXAMPLE_LAYOUT)
        assert star_rates(EXAMPLE_TRUE, full) == pytest.approx((1.0, 0.4))

    def test_fdr_grows_with_supermodels(self):
        layout = DesignLayout(1, (5,))
        T = FeasibleModel(layout, (1,), (((1, 2, 3), (4, 5)),))
        bigger = FeasibleModel(layout, (1,), (((1, 2), (3,), (4, 5)),))
        biggest = FeasibleModel.full(layout)
        r1, r2 = star_rates(T, bigger), star_rates(T, biggest)
        assert r1[0] == r2[0] == 1.0
        assert r1[1] <= r2[1]

    def test_correct_factors(self):
        spec = ExperimentSpec(1, 1)
        T = spec.true_model
        assert correct_factors(T, T)
        wrong = FeasibleModel(T.layout, (), (T.partitions[0], ((1, 2), (3, 4)), T.partitions[2]))
        assert not correct_factors(T, wrong)


class TestGenerators:
    def test_experiment_one_shape(self):
        data = generate_experiment(ExperimentSpec(1, 1), 0)
        assert data.X.values.shape == (96, 13)
        # Balanced: every level combination appears c times.
        combos = {tuple(row) for row in data.X.values}
        assert len(combos) == 96

    def test_experiment_two_shape(self):
        data = generate_experiment(ExperimentSpec(2, 1), 0)
        assert data.X.n == 128
        assert data.X.layout == DesignLayout(8, (8,))
        assert data.X.p == 1 + 8 + 7

    def test_experiment_two_covariance(self):
        data = generate_experiment(ExperimentSpec(2, 100), 1)
        V = data.X.values[:, 1:9]
        codes = np.repeat(np.arange(8), 1600)
        centred = V.copy()
        for lvl in range(8):
            centred[codes == lvl] -= V[codes == lvl].mean(axis=0)
        target = 0.8 ** np.abs(np.subtract.outer(np.arange(8), np.arange(8)))
        assert np.abs(np.cov(centred.T) - target).max() <= 0.05

    def test_deterministic(self):
        spec = ExperimentSpec(2, 1)
        a, b = generate_experiment(spec, 123), generate_experiment(spec, 123)
        np.testing.assert_array_equal(a.X.values, b.X.values)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.y, a.y_new)

    def test_binomial_response(self):
        data = generate_experiment(ExperimentSpec(3, 1), 0)
        assert set(np.unique(data.y)) <= {0.0, 1.0}

    def test_true_models(self):
        assert ExperimentSpec(1, 1).true_model.size == 3
        assert ExperimentSpec(2, 1).true_model.size == 1 + 4 + 2
        with pytest.raises(ValueError):
            ExperimentSpec(4, 1)


class TestMonteCarlo:
    def test_truth_selector(self):
        spec = ExperimentSpec(1, 1)
        metrics = run_monte_carlo(spec, TruthSelector(spec), reps=1, seed=0)
        assert metrics.tm == 1.0 and metrics.fdr_star == 0.0 and metrics.cf == 1.0
        assert metrics.md_mean == 3

    def test_failures_are_counted(self):
        metrics = run_monte_carlo(ExperimentSpec(1, 1), failing_selector, reps=3, seed=0)
        assert metrics.failures == 3 and np.isnan(metrics.tm)

    def test_parallel_equals_serial(self):
        spec = ExperimentSpec(2, 1)
        a = run_monte_carlo(spec, reps=8, seed=3)
        b = run_monte_carlo(spec, reps=8, seed=3, workers=2)
        assert a.csv_row() == b.csv_row()

    def test_order_invariance(self):
        spec = ExperimentSpec(1, 1)
        reps = [Replication(i, i % 2 == 0, True, 0.5, 0.1 * i, 1.0, 0.0, 1.0 + i, 3 + i) for i in range(5)]
        a = aggregate(spec, reps, "x")
        b = aggregate(spec, list(reversed(reps)), "x")
        assert a.csv_row() == b.csv_row()

    def test_rates_in_range(self):
        spec = ExperimentSpec(1, 1)
        m = run_monte_carlo(spec, reps=10, seed=5)
        for v in (m.tm, m.cf, m.tpr, m.fdr, m.tpr_star, m.fdr_star):
            assert 0.0 <= v <= 1.0
        assert 1 <= m.md_mean <= spec.layout.p
