import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exprfv.core import ExpressionSequence
from exprfv.fisher import (SufficientStats, accumulate_stats, encode, fv_length,
                           fv_unnormalized, l2_normalize, power_normalize)
from exprfv.gmm import EMConfig, GaussianMixture, fit_em, posteriors

from test_gmm import random_gmm


def naive_stats(X, gmm, threshold):
    K, N = gmm.K, gmm.N
    S0 = [0.0] * K
    S1 = [[0.0] * N for _ in range(K)]
    S2 = [[0.0] * N for _ in range(K)]
    for x in X:
        gamma = posteriors(gmm, x)
        for k in range(K):
            g = 0.0 if gamma[k] < threshold else gamma[k]
            S0[k] += g
            for n in range(N):
                S1[k][n] += g * x[n]
                S2[k][n] += g * x[n] * x[n]
    return np.array(S0), np.array(S1), np.array(S2)


class TestStats:
    def test_single_frame_k1(self):
        g = GaussianMixture([1.0], [[0.1, 0.2]], [[1.0, 2.0]])
        x = np.array([[0.5, -0.3]])
        s = accumulate_stats(x, g, 0.0)
        assert s.S0.tolist() == [1.0]
        np.testing.assert_array_equal(s.S1, x)
        np.testing.assert_array_equal(s.S2, x * x)
        assert s.T == 1

    def test_s0_sums_to_T(self, rng):
        g = random_gmm(rng, 4, 3)
        X = rng.normal(size=(30, 3))
        assert accumulate_stats(X, g, 0.0).S0.sum() == pytest.approx(30, abs=1e-9)

    def test_sparsified_mass_below_T(self, rng):
        g = random_gmm(rng, 5, 3)
        X = rng.normal(size=(30, 3)) * 3
        s = accumulate_stats(X, g, 1e-2)
        assert s.S0.sum() <= 30 and np.all(s.S0 >= 0)

    def test_naive_reference(self, rng):
        g = random_gmm(rng, 2, 3)
        X = rng.normal(size=(50, 3))
        s = accumulate_stats(X, g, 0.0)
        S0, S1, S2 = naive_stats(X, g, 0.0)
        np.testing.assert_allclose(s.S0, S0, atol=1e-12)
        np.testing.assert_allclose(s.S1, S1, atol=1e-12)
        np.testing.assert_allclose(s.S2, S2, atol=1e-12)

    def test_naive_reference_sparsified(self, rng):
        g = random_gmm(rng, 4, 2)
        X = rng.normal(size=(40, 2)) * 2
        s = accumulate_stats(X, g, 1e-4)
        S0, S1, S2 = naive_stats(X, g, 1e-4)
        np.testing.assert_allclose(s.S0, S0, atol=1e-12)
        np.testing.assert_allclose(s.S2, S2, atol=1e-12)

    def test_additive_over_concatenation(self, rng):
        g = random_gmm(rng, 3, 4)
        A, B = rng.normal(size=(13, 4)), rng.normal(size=(21, 4))
        whole = accumulate_stats(np.vstack([A, B]), g, 1e-4)
        parts = accumulate_stats(A, g, 1e-4) + accumulate_stats(B, g, 1e-4)
        assert whole.T == parts.T
        for a in ("S0", "S1", "S2"):
            np.testing.assert_allclose(getattr(whole, a), getattr(parts, a), atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            accumulate_stats(rng.normal(size=(3, 2)), random_gmm(rng, 2, 3))


class TestFVBlocks:
    def test_hand_example(self):
        g = GaussianMixture([1.0], [[0.0]], [[1.0]])
        fv = fv_unnormalized(SufficientStats(np.array([1.0]), np.array([[1.0]]), np.array([[1.0]]), 1), g)
        np.testing.assert_allclose(fv.values, [0.0, 1.0, 0.0], atol=1e-15)

    def test_zero_at_fixed_point(self, rng):
        g = random_gmm(rng, 3, 2)
        T = 17
        S0 = T * g.weights
        S1 = g.means * S0[:, None]
        S2 = (g.means ** 2 + g.variances) * S0[:, None]
        fv = fv_unnormalized(SufficientStats(S0, S1, S2, T), g)
        np.testing.assert_allclose(fv.values, 0.0, atol=1e-12)

    @pytest.mark.parametrize("K,N", [(1, 1), (3, 2), (16, 11), (12, 8)])
    def test_length(self, K, N, rng):
        g = random_gmm(rng, K, N)
        fv = encode(rng.normal(size=(5, N)), g)
        assert fv.values.shape == (K * (2 * N + 1),) == (fv_length(K, N),)

    def test_block_order(self, rng):
        g = random_gmm(rng, 2, 3)
        X = rng.normal(size=(9, 3))
        fv = fv_unnormalized(accumulate_stats(X, g, 0.0), g)
        s = accumulate_stats(X, g, 0.0)
        gw, gmu, gs = fv.blocks()
        np.testing.assert_allclose(gw, (s.S0 - 9 * g.weights) / np.sqrt(g.weights))
        k, n = 1, 2
        expected = (s.S1[k, n] - g.means[k, n] * s.S0[k]) / (math.sqrt(g.weights[k]) * math.sqrt(g.variances[k, n]))
        assert fv.values[2 + k * 3 + n] == pytest.approx(expected, rel=1e-12)
        assert gs.shape == (2, 3)


class TestNormalizations:
    def test_power(self):
        np.testing.assert_array_equal(power_normalize([4.0, -9.0, 0.0]), [2.0, -3.0, 0.0])

    def test_l2(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
        u = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(l2_normalize(u), u, atol=1e-12)
        assert l2_normalize([0.0, 0.0]).tolist() == [0.0, 0.0]

    def test_encoded_unit_norm(self, rng):
        g = random_gmm(rng, 3, 4)
        fv = encode(rng.normal(size=(20, 4)), g)
        assert fv.normalized
        assert np.linalg.norm(fv.values) == pytest.approx(1.0, abs=1e-10)

    def test_normalization_tail_not_idempotent(self, rng):
        g = random_gmm(rng, 3, 4)
        v = encode(rng.normal(size=(20, 4)), g).values
        assert not np.allclose(l2_normalize(power_normalize(v)), v)


class TestEncode:
    def test_length_independent_of_T(self, rng):
        g = random_gmm(rng, 4, 3)
        a = encode(rng.normal(size=(100, 3)), g)
        b = encode(rng.normal(size=(100000, 3)), g)
        assert a.values.shape == b.values.shape == (28,)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        g = random_gmm(rng, 3, 2)
        X = rng.normal(size=(25, 2))
        a = encode(X, g).values
        b = encode(X[rng.permutation(25)], g).values
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_accepts_sequence(self, rng):
        g = random_gmm(rng, 2, 3)
        seq = ExpressionSequence("a", rng.uniform(size=(6, 3)), ("x", "y", "z"))
        np.testing.assert_array_equal(encode(seq, g).values, encode(seq.frames, g).values)

    def test_zero_at_mle(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.normal(-2, 0.5, (300, 2)), rng.normal(2, 0.7, (300, 2))])
        res = fit_em(X, 2, EMConfig(tol=0.0, max_iters=500, seed=1))
        assert not res.floored_last_step
        fv = encode(X, res.gmm, sparsify_threshold=0.0, normalize=False)
        assert np.max(np.abs(fv.values)) <= 1e-6
