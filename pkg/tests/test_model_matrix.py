"""Tests for design construction and the full-model QR fit."""

import numpy as np
import pytest

from dmr.errors import InputError, RankDeficient, TooFewRows, UnknownLevel
from dmr.model_matrix import (
    ColumnSpec,
    DesignLayout,
    DesignMatrix,
    build_design_matrix,
    dummy_block,
    fit_full_model,
    positive_qr,
)

from conftest import EXAMPLE_X0, example_design, random_design


def example_dataset():
    return {
        "y": np.arange(8.0),
        "x0": EXAMPLE_X0,
        "factor1": list("AABBCCDD"),
    }


EXAMPLE_SPECS = [
    ColumnSpec("y", "response"),
    ColumnSpec("x0", "continuous"),
    ColumnSpec("factor1", "factor", ("A", "B", "C", "D")),
]


class TestLayout:
    def test_columns_are_a_bijection(self):
        layout = DesignLayout(2, (4, 3, 2))
        cols = [layout.column(k, j) for k, j in layout.block_index]
        assert cols == list(range(layout.p))
        assert layout.p == 1 + 2 + 3 + 2 + 1

    def test_reference_level_has_no_column(self):
        layout = DesignLayout(1, (4,))
        with pytest.raises(IndexError):
            layout.column(1, 1)
        with pytest.raises(IndexError):
            layout.column(1, 5)

    def test_factor_columns(self):
        layout = DesignLayout(1, (4, 3))
        assert list(layout.factor_columns(1)) == [2, 3, 4]
        assert list(layout.factor_columns(2)) == [5, 6]


class TestBuildDesignMatrix:
    def test_example_design(self):
        X = build_design_matrix(example_dataset(), EXAMPLE_SPECS)
        np.testing.assert_array_equal(X.values, example_design().values)
        assert X.column_names == ("(Intercept)", "x0", "factor1:B", "factor1:C", "factor1:D")

    def test_response_only_gives_intercept(self):
        X = build_design_matrix({"y": [1.0, 2.0, 4.0]}, [ColumnSpec("y", "response")])
        np.testing.assert_array_equal(X.values, np.ones((3, 1)))
        assert X.layout == DesignLayout(0, ())

    def test_duplicate_continuous_column_is_rank_deficient(self):
        data = {"y": np.arange(6.0), "a": [1.0, 3, 2, 5, 4, 0], "b": [1.0, 3, 2, 5, 4, 0]}
        specs = [ColumnSpec("y", "response"), ColumnSpec("a", "continuous"), ColumnSpec("b", "continuous")]
        with pytest.raises(RankDeficient) as info:
            build_design_matrix(data, specs)
        assert info.value.columns == ["b"]

    def test_unknown_level_names_row(self):
        data = example_dataset()
        data["factor1"][5] = "E"
        with pytest.raises(UnknownLevel) as info:
            build_design_matrix(data, EXAMPLE_SPECS)
        assert (info.value.level, info.value.row) == ("E", 5)

    def test_too_few_rows(self):
        data = {"y": [1.0, 2.0], "a": [0.0, 1.0]}
        with pytest.raises(TooFewRows):
            build_design_matrix(data, [ColumnSpec("y", "response"), ColumnSpec("a", "continuous")])

    def test_spec_validation(self):
        with pytest.raises(InputError):
            ColumnSpec("f", "factor", ("a", "a"))
        with pytest.raises(InputError):
            ColumnSpec("f", "weird")
        with pytest.raises(InputError):
            build_design_matrix({"y": [1.0]}, [ColumnSpec("x", "continuous")])

    def test_values_are_copied_and_frozen(self):
        raw = example_design().values.copy()
        X = DesignMatrix(raw, DesignLayout(1, (4,)))
        assert raw.flags.writeable
        assert not X.values.flags.writeable

    def test_dummy_block(self):
        block = dummy_block(np.array([0, 2, 1, 2]), 3)
        np.testing.assert_array_equal(block, [[0, 0], [0, 1], [1, 0], [0, 1]])


class TestFullModelFit:
    def test_positive_diagonal(self):
        rng = np.random.default_rng(1)
        Q, R = positive_qr(rng.standard_normal((20, 5)))
        assert (np.diag(R) > 0).all()
        np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((50, 6))
        y = rng.standard_normal(50)
        fit = fit_full_model(A, y)
        beta = np.linalg.solve(A.T @ A, A.T @ y)
        fitted = A @ beta
        assert np.linalg.norm(A @ fit.beta_hat - fitted) <= 1e-10 * np.linalg.norm(fitted)

    def test_rss_identity(self):
        rng = np.random.default_rng(3)
        X = random_design(rng, 40, 2, (3, 4))
        y = rng.standard_normal(40)
        fit = fit_full_model(X, y)
        resid = y - X.values @ fit.beta_hat
        assert fit.rss == pytest.approx(resid @ resid, rel=1e-10)
        assert fit.sigma2_hat == pytest.approx(fit.rss / (40 - X.p))

    def test_exact_fit_has_zero_variance(self):
        X = example_design()
        y = X.values @ np.array([1.0, 2.0, -2.0, -2.0, 0.0])
        assert fit_full_model(X, y).sigma2_hat == 0.0

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(4)
        X = random_design(rng, 30, 2, (3,))
        y = rng.standard_normal(30)
        perm = rng.permutation(30)
        a = fit_full_model(X, y)
        b = fit_full_model(X.values[perm], y[perm])
        np.testing.assert_allclose(a.beta_hat, b.beta_hat, rtol=1e-10, atol=1e-12)
        assert a.rss == pytest.approx(b.rss, rel=1e-10)

    def test_response_shape_checked(self):
        with pytest.raises(InputError):
            fit_full_model(example_design(), np.zeros(7))
