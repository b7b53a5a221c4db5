import tracemalloc
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from decs.stability import (
    DegenerateThresholdWarning,
    StabilityParams,
    clustering_loss,
    co_association,
    determinacy,
    forward,
    otsu_threshold,
    sample_stability,
)

from oracles import otsu_bruteforce

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def batch(n, d):
    return arrays(np.float64, (n, d), elements=finite)


class TestCoAssociation:
    def test_single_cluster_is_one(self):
        q = co_association(np.array([[3.0, -1.0]]), np.array([[10.0, 2.0]]))
        assert q.shape == (1, 1)
        assert q[0, 0] == 1.0

    def test_equidistant_is_half(self):
        q = co_association(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(q, [[0.5, 0.5]], atol=1e-15)

    def test_hand_evaluated_scalar_case(self):
        # unnormalized weights 1 and 1/(1+4) = 0.2
        q = co_association(np.array([[0.0]]), np.array([[0.0], [2.0]]), alpha=1.0)
        np.testing.assert_allclose(q, [[5 / 6, 1 / 6]], rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            co_association(np.zeros((3, 2)), np.zeros((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            co_association(np.array([[np.nan, 0.0]]), np.zeros((2, 2)))

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            co_association(np.zeros((1, 1)), np.zeros((1, 1)), alpha=0.0)

    @given(batch(7, 3), batch(4, 3), st.floats(0.1, 10))
    def test_rows_are_stochastic(self, z, m, alpha):
        q = co_association(z, m, alpha)
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(q > 0)

    @given(batch(5, 3), batch(3, 3), arrays(np.float64, 3, elements=finite))
    def test_translation_invariance(self, z, m, c):
        np.testing.assert_allclose(co_association(z + c, m + c), co_association(z, m), atol=1e-12)

    @given(batch(6, 2), batch(4, 2), st.permutations(range(4)))
    def test_centroid_permutation_equivariance(self, z, m, perm):
        perm = list(perm)
        np.testing.assert_allclose(co_association(z, m[perm]), co_association(z, m)[:, perm],
                                   rtol=1e-14, atol=1e-15)


class TestOtsu:
    def test_constant_input_degenerates_to_half(self):
        with pytest.warns(DegenerateThresholdWarning):
            assert otsu_threshold(np.full((10, 3), 0.3)) == 0.5

    def test_degenerate_flag(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateThresholdWarning)
            assert otsu_threshold(np.full(5, 0.7), return_degenerate=True) == (0.5, True)
        assert otsu_threshold(np.array([0.1, 0.9]), return_degenerate=True)[1] is False

    def test_two_point_modes(self):
        q = np.array([0.1] * 50 + [0.9] * 50)
        t = otsu_threshold(q)
        assert 0.1 < t < 0.9
        assert t == otsu_bruteforce(q)

    def test_unbalanced_modes(self):
        q = np.array([0.05] * 900 + [0.95] * 100)
        t = otsu_threshold(q)
        assert 0.05 < t < 0.95
        assert t == otsu_bruteforce(q)

    def test_result_is_a_clamped_bin_edge(self):
        rng = np.random.default_rng(3)
        t = otsu_threshold(rng.uniform(size=(40, 5)))
        assert 0.05 <= t <= 0.95
        assert (t * 256) == int(t * 256) or t in (0.05, 0.95)

    def test_clamp_low(self):
        q = np.array([0.0] * 10 + [0.01] * 10)
        assert otsu_threshold(q) == 0.05

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.integers(2, 60), elements=st.floats(0, 1)))
    def test_matches_bruteforce(self, q):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateThresholdWarning)
            t = otsu_threshold(q)
        expected = otsu_bruteforce(q)
        assert t == (0.5 if expected is None else expected)


class TestDeterminacy:
    def test_zero_at_threshold(self):
        for t in (0.1, 0.5, 0.83):
            assert determinacy(np.array(t), t) == 0.0

    def test_one_at_boundaries(self):
        for t in (0.05, 0.3, 0.5, 0.95):
            np.testing.assert_allclose(determinacy(np.array([0.0, 1.0]), t), [1.0, 1.0], rtol=1e-15)

    def test_hand_value(self):
        assert determinacy(np.array(0.25), 0.5) == pytest.approx(0.25, abs=1e-15)

    def test_rejects_bad_threshold(self):
        for t in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                determinacy(np.array([0.5]), t)

    @given(arrays(np.float64, 20, elements=st.floats(0, 1)), st.floats(0.01, 0.99))
    def test_range(self, q, t):
        fq = determinacy(q, t)
        assert np.all(fq >= 0) and np.all(fq <= 1)

    @given(st.floats(0.05, 0.95))
    def test_continuous_at_threshold(self, t):
        eps = 1e-7
        assert determinacy(np.array(t - eps), t) < 1e-10
        assert determinacy(np.array(t + eps), t) < 1e-10


class TestStability:
    def test_all_determinate(self):
        assert sample_stability(np.array([[1.0, 1.0, 1.0]]))[0] == 1.0

    def test_all_indeterminate(self):
        assert sample_stability(np.array([[0.0, 0.0]]))[0] == 0.0

    def test_hand_value(self):
        assert sample_stability(np.array([[1.0, 0.0]]), lam=0.8)[0] == pytest.approx(0.3, abs=1e-15)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            sample_stability(np.ones((1, 2)), lam=-0.1)

    @given(arrays(np.float64, (8, 5), elements=st.floats(0, 1)), st.floats(0, 5))
    def test_upper_bound(self, fq, lam):
        sq = sample_stability(fq, lam)
        assert np.all(sq <= 1.0)
        assert clustering_loss(sq) >= 0.0


class TestLoss:
    def test_values(self):
        assert clustering_loss(np.ones(7)) == 0.0
        assert clustering_loss(np.array([0.5, 0.7])) == pytest.approx(0.4, abs=1e-15)
        assert clustering_loss(np.zeros(2)) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            clustering_loss(np.array([]))


def test_params_validation():
    StabilityParams(t=0.3)
    for kwargs in ({"t": 0.0}, {"t": 1.0}, {"alpha": 0.0}, {"lam": -1.0}):
        with pytest.raises(ValueError):
            StabilityParams(**kwargs)


def test_memory_is_linear_in_samples():
    rng = np.random.default_rng(0)
    n, k, d = 20000, 3, 2
    z = rng.normal(size=(n, d))
    m = rng.normal(size=(k, d))
    tracemalloc.start()
    forward(z, m, StabilityParams(t=0.5))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    # an n x n float64 matrix would be 3.2 GB
    assert peak < 50 * n * k * d * 8
