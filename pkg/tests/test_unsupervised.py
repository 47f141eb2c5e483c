import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_set
from hybrid_ccnn import unsupervised as U
from hybrid_ccnn.core import Dataset
from hybrid_ccnn.errors import DataError
from oracles import log_gauss


def blobs(rng, centers, n=40, scale=1.0):
    X = np.concatenate([c + scale * rng.normal(size=(n, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), n)
    return X, y


class TestPCA:
    def test_two_points(self):
        X = np.array([[0.0, 0.0], [3.0, 4.0]])
        m = U.pca_fit(X, 1)
        np.testing.assert_allclose(m.components[0], [0.6, 0.8])
        # sample covariance with n-1 = 1: squared distance over 2
        assert m.explained_variance[0] == pytest.approx(25.0 / 2)

    def test_axis_aligned(self, rng):
        Z = rng.normal(size=(4000, 2))
        Z = (Z - Z.mean(0)) / Z.std(0, ddof=1) * [2.0, 1.0]
        m = U.pca_fit(Z, 2)
        np.testing.assert_allclose(np.abs(m.components), np.eye(2), atol=0.05)
        assert m.components[0, 0] > 0
        assert m.explained_variance[0] / m.explained_variance[1] == pytest.approx(4.0, rel=0.1)

    def test_zero_sum_features_give_zero_sum_components(self, rng):
        X = rng.normal(size=(30, 16))
        X -= X.mean(axis=1, keepdims=True)
        m = U.pca_fit(X, 5)
        np.testing.assert_allclose(m.components.sum(axis=1), 0, atol=1e-8)

    def test_sign_convention(self, rng):
        m = U.pca_fit(rng.normal(size=(20, 6)), 4)
        for c in m.components:
            assert c[np.argmax(np.abs(c))] > 0

    def test_orthonormal_and_diagonal_projection(self, rng):
        X = rng.normal(size=(50, 8)) @ rng.normal(size=(8, 8))
        m = U.pca_fit(X, 5)
        np.testing.assert_allclose(m.components @ m.components.T, np.eye(5), atol=1e-8)
        Z = U.pca_project(m, X)
        cov = np.cov(Z.T)
        np.testing.assert_allclose(np.diag(cov), m.explained_variance, rtol=1e-6)
        np.testing.assert_allclose(cov - np.diag(np.diag(cov)), 0, atol=1e-6 * m.explained_variance[0])
        assert np.all(np.diff(m.explained_variance) <= 0)

    def test_matches_svd(self, rng):
        X = rng.normal(size=(25, 6))
        m = U.pca_fit(X, 3)
        _, s, vt = np.linalg.svd(X - X.mean(0), full_matrices=False)
        np.testing.assert_allclose(m.explained_variance, s[:3] ** 2 / 24, rtol=1e-10)
        np.testing.assert_allclose(np.abs(np.sum(m.components * vt[:3], axis=1)), 1, atol=1e-10)

    def test_projection_examples(self, rng):
        X = rng.normal(size=(10, 4))
        m = U.pca_fit(X, 3)
        np.testing.assert_allclose(U.pca_project(m, m.mean), 0, atol=1e-12)
        np.testing.assert_allclose(U.pca_project(m, m.mean + m.components[0]), [1, 0, 0], atol=1e-12)

    def test_low_rank_reconstruction(self, rng):
        X = rng.normal(size=(12, 2)) @ rng.normal(size=(2, 7))
        m = U.pca_fit(X, 2)
        Z = U.pca_project(m, X)
        np.testing.assert_allclose(Z @ m.components + m.mean, X, atol=1e-8)

    def test_errors(self, rng):
        with pytest.raises(DataError):
            U.pca_fit(np.ones((5, 3)), 1)
        with pytest.raises(DataError):
            U.pca_fit(rng.normal(size=(3, 5)), 3)
        m = U.pca_fit(rng.normal(size=(4, 3)), 2)
        with pytest.raises(DataError):
            U.pca_project(m, np.zeros((1, 4)))


class TestKMeans:
    def test_K_equals_points(self, rng):
        X = rng.normal(size=(5, 2))
        C = U.kmeans_init(X, 5, 0)
        assert sorted(map(tuple, C.round(12))) == sorted(map(tuple, X.round(12)))

    def test_two_pairs(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [100.0, 0.0], [100.0, 1.0]])
        C = U.kmeans_init(X, 2, 3)
        assert sorted(map(tuple, C)) == [(0.0, 0.5), (100.0, 0.5)]

    def test_deterministic(self, rng):
        X = rng.normal(size=(30, 3))
        np.testing.assert_array_equal(U.kmeans_init(X, 4, 9), U.kmeans_init(X, 4, 9))

    def test_too_many_clusters(self):
        with pytest.raises(DataError):
            U.kmeans_init(np.zeros((2, 2)), 3, 0)


class TestGMM:
    def test_single_component_closed_form(self, rng):
        X = rng.normal(size=(50, 3))
        m = U.gmm_fit_em(X, 1, X.mean(0, keepdims=True))
        reg = U.regularization(X)
        np.testing.assert_allclose(m.means[0], X.mean(0), atol=1e-12)
        np.testing.assert_allclose(m.covariances[0], np.cov(X.T, bias=True) + reg * np.eye(3), atol=1e-12)
        ll = sum(log_gauss(x, m.means[0], m.covariances[0]) for x in X)
        assert m.log_likelihood == pytest.approx(ll, rel=1e-10)

    def test_separated_blobs(self, rng):
        X, y = blobs(rng, [np.zeros(2), np.array([20.0, 0.0])], n=100)
        m = U.gmm_fit_em(X, 2, U.kmeans_init(X, 2, 0))
        R = m.responsibilities(X)
        assert np.all(np.max(R, axis=1) > 1 - 1e-6)
        np.testing.assert_allclose(np.sort(m.weights), [0.5, 0.5], atol=1e-9)
        np.testing.assert_allclose(R.sum(1), 1, atol=1e-10)
        assert U.adjusted_rand_index(m.predict(X), y) == 1.0

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(1, 4))
    def test_log_likelihood_monotone(self, seed, K):
        rng = np.random.default_rng(seed)
        X, _ = blobs(rng, [rng.normal(size=3) * 3 for _ in range(3)], n=20)
        m = U.gmm_fit_em(X, K, U.kmeans_init(X, K, seed))
        assert np.all(np.diff(m.history) >= -1e-9)
        assert abs(m.weights.sum() - 1) < 1e-10
        for c in m.covariances:
            np.testing.assert_allclose(c, c.T)
            assert np.linalg.eigvalsh(c).min() >= m.reg * (1 - 1e-9)

    def test_nonfinite_rejected(self):
        X = np.array([[0.0], [np.inf]])
        with pytest.raises(DataError):
            U.gmm_fit_em(X, 1, np.zeros((1, 1)))


class TestRestartSearch:
    def test_reproducible(self, rng):
        X, _ = blobs(rng, [np.zeros(2), np.ones(2) * 4, np.array([8.0, 0])], n=15)
        a = U.gmm_restart_search(X, 3, 5, patience=20)
        b = U.gmm_restart_search(X, 3, 5, patience=20)
        np.testing.assert_array_equal(a.means, b.means)

    def test_separable_data_equals_single_run(self, rng):
        X, _ = blobs(rng, [np.zeros(2), np.array([50.0, 0])], n=20)
        res = U.gmm_restart_search(X, 2, 1, patience=10, return_info=True)
        single = U.gmm_fit_em(X, 2, U.kmeans_init(X, 2, U.attempt_seed(1, 0)))
        assert res.model.log_likelihood == pytest.approx(single.log_likelihood, abs=1e-9)

    def test_stopping_rule(self, rng):
        X, _ = blobs(rng, [np.zeros(2), np.ones(2)], n=10)
        res = U.gmm_restart_search(X, 3, 2, patience=25, return_info=True)
        assert res.attempts == res.best_attempt + 1 + 25
        assert res.attempts >= 25


class TestBIC:
    def test_arithmetic(self):
        m = U.GMMModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1, 1)), 0.0)
        assert U.bic(m, np.e) == pytest.approx(2.0)

    def test_penalty_grows_with_K(self):
        m1 = U.GMMModel(np.ones(2) / 2, np.zeros((2, 3)), np.ones((2, 3, 3)), -5.0)
        m2 = U.GMMModel(np.ones(4) / 4, np.zeros((4, 3)), np.ones((4, 3, 3)), -5.0)
        assert U.bic(m2, 100) > U.bic(m1, 100)
        assert U.bic(m1, 100) - 10.0 == pytest.approx(U.n_free_parameters(2, 3) * np.log(100))

    def test_three_blobs_selects_three(self, rng):
        X, _ = blobs(rng, [np.zeros(2), np.array([15.0, 0]), np.array([0, 15.0])], n=60)
        scores = U.bic_scan(X, [2, 3, 4], 0, patience=20)
        assert scores[3] < scores[2] and scores[3] < scores[4]


class TestPipeline:
    def test_identical_sets(self, rng):
        b = rng.integers(0, 2, (5, 6, 6))
        ds = Dataset([make_set(b, d, 1.0) for d in range(4)])
        res = U.cluster_phase_diagram(ds, 8, 3, 2, 0)
        assert set(res.labels.tolist()) == {0}

    def test_scale_invariance(self, rng):
        X, _ = blobs(rng, [np.zeros(4), np.ones(4) * 5, np.array([5.0, 0, 0, 0])], n=10)
        a = U.cluster_features(X, 3, 3, 0, patience=20)
        b = U.cluster_features(2 * X, 3, 3, 0, patience=20)
        assert U.adjusted_rand_index(a.labels, b.labels) == 1.0

    def test_permutation_equivariance(self, rng):
        X, _ = blobs(rng, [np.zeros(3), np.ones(3) * 6], n=12)
        perm = rng.permutation(len(X))
        a = U.cluster_features(X, 2, 2, 0, patience=10)
        b = U.cluster_features(X[perm], 2, 2, 0, patience=10)
        assert U.adjusted_rand_index(a.labels[perm], b.labels) == 1.0

    def test_two_phase_synthetic(self):
        from hybrid_ccnn import datagen
        from hybrid_ccnn.core import Lattice
        ds = datagen.generate_dataset(datagen.two_phase_plan(), Lattice(13, 13), 100, 0)
        res = U.cluster_phase_diagram(ds, 16, 10, 2, 0, patience=50)
        assert U.purity(res.labels, ds.truth) >= 0.95


class TestScores:
    def test_purity(self):
        assert U.purity([0, 0, 1, 1], ["a", "a", "b", "a"]) == 0.75

    def test_ari_reference_values(self):
        assert U.adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
        # contingency [[2,0],[1,1]]: index 1, expected 2*3/6 = 1, max 5/2
        assert U.adjusted_rand_index([0, 0, 1, 1], [0, 0, 0, 1]) == 0.0
        # [[2,1],[0,3]]: index 4, row pairs 6, column pairs 7, expected 6*7/15, max 13/2
        assert U.adjusted_rand_index([0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 1, 1]) == pytest.approx(
            (4 - 2.8) / (6.5 - 2.8))
