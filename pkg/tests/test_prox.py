import numpy as np
import pytest

from mscdlra.prox import (
    hard_threshold_columns,
    hard_threshold_k,
    nonneg_soft_threshold,
    project_nonneg,
    prox_l11,
    soft_threshold,
)


def l11_prox_objective(Z, X, lam):
    col_l1 = np.abs(Z).sum(axis=0)
    return 0.5 * np.sum((Z - X) ** 2) + lam * (col_l1.max() if col_l1.size else 0.0)


def subgradient_prox_oracle(X, lam, iters=4000):
    """Projected-subgradient descent on the prox objective, run long enough
    to provide a reference objective value."""
    Z = X.copy()
    best = Z.copy()
    best_obj = l11_prox_objective(Z, X, lam)
    for t in range(1, iters + 1):
        col_l1 = np.abs(Z).sum(axis=0)
        i_max = int(np.argmax(col_l1))
        g = Z - X
        g[:, i_max] += lam * np.sign(Z[:, i_max])
        step = 1.0 / (1.0 + 0.5 * t)
        Z = Z - step * g
        obj = l11_prox_objective(Z, X, lam)
        if obj < best_obj:
            best_obj = obj
            best = Z.copy()
    return best, best_obj


class TestHardThreshold:
    def test_keeps_largest_magnitude(self):
        np.testing.assert_array_equal(
            hard_threshold_k(np.array([1.0, -3.0, 2.0]), 1), [0.0, -3.0, 0.0]
        )

    def test_lexicographic_tie_break(self):
        np.testing.assert_array_equal(
            hard_threshold_k(np.array([2.0, 2.0, 1.0]), 1), [2.0, 0.0, 0.0]
        )

    def test_full_k_is_identity(self):
        x = np.array([0.5, -1.0, 0.0])
        np.testing.assert_array_equal(hard_threshold_k(x, 3), x)

    def test_nonzero_count(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(1, 12)
            x = rng.standard_normal(n) * rng.integers(0, 2, size=n)
            k = int(rng.integers(0, n + 1))
            out = hard_threshold_k(x, k)
            assert np.count_nonzero(out) == min(k, np.count_nonzero(x))

    def test_euclidean_projection_property(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 10))
            x = rng.standard_normal(n)
            k = int(rng.integers(1, n + 1))
            ht = hard_threshold_k(x, k)
            d_ht = np.linalg.norm(x - ht)
            for _ in range(50):
                z = np.zeros(n)
                idx = rng.choice(n, size=k, replace=False)
                z[idx] = rng.standard_normal(k)
                assert d_ht <= np.linalg.norm(x - z) + 1e-12

    def test_columnwise(self):
        X = np.array([[1.0, 4.0], [-2.0, 3.0]])
        np.testing.assert_array_equal(
            hard_threshold_columns(X, 1), [[0.0, 4.0], [-2.0, 0.0]]
        )


class TestSoftThreshold:
    def test_basic(self):
        np.testing.assert_allclose(
            soft_threshold(np.array([2.0, -0.5]), 1.0), [1.0, 0.0]
        )

    def test_zero_threshold_identity(self):
        x = np.array([1.0, -2.0, 0.0])
        np.testing.assert_array_equal(soft_threshold(x, 0.0), x)

    def test_l1_norm_identity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(20)
        lam = 0.3
        out = soft_threshold(x, lam)
        assert np.abs(out).sum() == pytest.approx(
            np.maximum(np.abs(x) - lam, 0.0).sum()
        )


class TestNonnegOps:
    def test_projection(self):
        np.testing.assert_array_equal(project_nonneg(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_projection_identity_on_nonneg(self):
        x = np.array([0.0, 3.0])
        np.testing.assert_array_equal(project_nonneg(x), x)

    def test_thresholded_variant(self):
        np.testing.assert_array_equal(
            nonneg_soft_threshold(np.array([3.0, 0.5]), 1.0), [2.0, 0.0]
        )


class TestShrinkLevels:
    def test_vectorized_matches_scalar_reference(self):
        from mscdlra.prox import _l1_shrink_level, _shrink_levels

        rng = np.random.default_rng(9)
        for _ in range(100):
            d = int(rng.integers(1, 15))
            r = int(rng.integers(1, 6))
            X = rng.standard_normal((d, r))
            A = np.sort(np.abs(X), axis=0)[::-1]
            C = np.cumsum(A, axis=0)
            t = float(rng.uniform(1e-6, C[-1].max() * 1.2))
            vec = _shrink_levels(A, C, t)
            ref = [_l1_shrink_level(A[:, i], C[:, i], t) for i in range(r)]
            np.testing.assert_allclose(vec, ref, atol=1e-12)

    def test_shrink_amount_realizes_target(self):
        from mscdlra.prox import _shrink_levels

        rng = np.random.default_rng(10)
        X = rng.standard_normal((12, 4))
        A = np.sort(np.abs(X), axis=0)[::-1]
        C = np.cumsum(A, axis=0)
        t = 1.5
        mu = _shrink_levels(A, C, t)
        for i in range(4):
            shrunk = np.maximum(A[:, i] - mu[i], 0).sum()
            assert shrunk == pytest.approx(min(t, C[-1, i]), abs=1e-10)


class TestProxL11:
    def test_single_column_reduces_to_soft_threshold(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 1))
        lam = 0.4
        np.testing.assert_allclose(
            prox_l11(x, lam), soft_threshold(x, lam), atol=1e-8
        )

    def test_zero_above_max_regularization(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((5, 3))
        lam = np.abs(X).max(axis=0).sum()
        assert not prox_l11(X, lam).any()
        assert not prox_l11(X, lam * 1.5).any()

    def test_beats_subgradient_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((4, 3))
        lam = 0.7
        Z = prox_l11(X, lam)
        _, oracle_obj = subgradient_prox_oracle(X, lam)
        assert l11_prox_objective(Z, X, lam) <= oracle_obj + 1e-6

    def test_firm_nonexpansiveness(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            X = rng.standard_normal((5, 4))
            Y = rng.standard_normal((5, 4))
            lam = float(rng.uniform(0.1, 2.0))
            dz = np.linalg.norm(prox_l11(X, lam) - prox_l11(Y, lam))
            assert dz <= np.linalg.norm(X - Y) + 1e-9

    def test_max_column_l1_nonincreasing_in_lam(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((6, 4))
        lams = np.linspace(0.0, np.abs(X).max(axis=0).sum() * 1.1, 20)
        levels = [np.abs(prox_l11(X, lam)).sum(axis=0).max() for lam in lams]
        assert all(a >= b - 1e-9 for a, b in zip(levels, levels[1:]))

    def test_zero_lam_is_identity(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(prox_l11(X, 0.0), X)
