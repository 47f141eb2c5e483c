"""PCA and Gaussian-mixture clustering of per-point spectral features."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import DataError, NumericalError
from .spectral import DEFAULT_K, feature_matrix

EM_TOL = 1e-6
EM_MAX_ITER = 500
RESTART_PATIENCE = 500
REG_SCALE = 1e-6


# --------------------------------------------------------------------- PCA

@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float = 0.0

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self):
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def _fix_signs(vectors):
    """Make the largest-magnitude entry of each row positive (first one on ties)."""
    idx = np.argmax(np.abs(vectors), axis=1)  # argmax returns the lowest index on ties
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_fit(features, n_components: int) -> PCAModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("PCA needs a 2D feature matrix with at least two points")
    n, d = X.shape
    if not 1 <= n_components <= min(n - 1, d):
        raise DataError(f"n_components must lie in [1, {min(n - 1, d)}], got {n_components}")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DataError("all feature vectors are identical; PCA is undefined")
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    comps = _fix_signs(evecs[:, order].T.copy())
    return PCAModel(mean, comps, np.clip(evals[order], 0.0, None), float(np.trace(cov)))


def pca_project(model: PCAModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != model.mean.shape[0]:
        raise DataError(f"feature dimension {X.shape[-1]} does not match model ({model.mean.shape[0]})")
    return (X - model.mean) @ model.components.T


# ----------------------------------------------------------------- k-means

def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_init(data, K: int, seed, max_iter: int = 1000) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations to an assignment fixpoint."""
    X = np.asarray(data, dtype=np.float64)
    n = X.shape[0]
    if K < 1 or K > n:
        raise DataError(f"cannot place {K} centroids on {n} points")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:  # remaining points coincide with centroids
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    C = X[chosen].copy()
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(X, C), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(K):
            members = X[labels == j]
            if len(members):
                C[j] = members.mean(axis=0)
    return C


# --------------------------------------------------------------------- GMM

@dataclass
class GMMModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float
    reg: float = 0.0
    n_iter: int = 0
    history: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_clusters(self):
        return self.means.shape[0]

    def log_prob_components(self, data) -> np.ndarray:
        """``log(w_j N(x | mu_j, Sigma_j))`` for every point and component."""
        return _weighted_log_prob(np.asarray(data, dtype=np.float64),
                                  self.weights, self.means, self.covariances)

    def responsibilities(self, data) -> np.ndarray:
        lp = self.log_prob_components(data)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def predict(self, data) -> np.ndarray:
        return np.argmax(self.log_prob_components(data), axis=1)


def _weighted_log_prob(X, weights, means, covs):
    n, d = X.shape
    out = np.empty((n, len(weights)))
    for j in range(len(weights)):
        try:
            cf = cho_factor(covs[j], lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance lost positive definiteness") from exc
        diff = X - means[j]
        maha = np.einsum("ij,ij->i", diff, cho_solve(cf, diff.T).T)
        logdet = 2.0 * np.log(np.diag(cf[0])).sum()
        with np.errstate(divide="ignore"):
            out[:, j] = np.log(weights[j]) - 0.5 * (d * np.log(2 * np.pi) + logdet + maha)
    return out


def regularization(data) -> float:
    X = np.asarray(data, dtype=np.float64)
    return REG_SCALE * float(X.var(axis=0, ddof=0).mean())


def _m_step(X, resp, reg):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).tiny
    weights = nk / nk.sum()
    means = resp.T @ X / nk[:, None]
    d = X.shape[1]
    covs = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        diff = X - means[j]
        c = (resp[:, j, None] * diff).T @ diff / nk[j]
        covs[j] = 0.5 * (c + c.T) + reg * np.eye(d)
    return weights, means, covs


def gmm_fit_em(data, K: int, init_means, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
               reg: Optional[float] = None) -> GMMModel:
    """EM with full covariances plus ``reg * I``.

    Initial responsibilities are the hard nearest-mean assignment to
    ``init_means``. Iteration stops once the log-likelihood improves by less
    than ``tol`` or after ``max_iter`` iterations. A step that lowers the
    log-likelihood ends the fit at the preceding iterate, so ``history`` is
    non-decreasing.
    """
    X = np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if not np.all(np.isfinite(X)):
        raise DataError("feature matrix contains non-finite values")
    if K < 1 or n < K:
        raise DataError(f"cannot fit {K} components to {n} points")
    init_means = np.asarray(init_means, dtype=np.float64)
    if init_means.shape != (K, d):
        raise DataError(f"initial means must have shape {(K, d)}")
    if reg is None:
        reg = regularization(X)
    if reg <= 0:
        reg = 1e-12
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(_sq_dists(X, init_means), axis=1)] = 1.0
    params = _m_step(X, resp, reg)
    prev = None
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 2):
        lp = _weighted_log_prob(X, *params)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(norm.sum())
        if not np.isfinite(ll):
            raise NumericalError("non-finite GMM log-likelihood")
        if history and ll < history[-1]:
            # the regularized M-step is not an exact maximizer, so a step can
            # lose likelihood; reject it and keep the previous iterate
            params = prev
            converged = True
            break
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        if it > max_iter:
            break
        prev = params
        params = _m_step(X, np.exp(lp - norm), reg)
    weights, means, covs = params
    return GMMModel(weights, means, covs, history[-1], reg, it, history, converged)


def attempt_seed(seed, attempt: int) -> int:
    """Independent per-attempt seed, a pure function of ``(seed, attempt)``."""
    return int(np.random.SeedSequence([int(seed), int(attempt)]).generate_state(1)[0])


@dataclass
class RestartResult:
    model: GMMModel
    attempts: int
    best_attempt: int


def gmm_restart_search(data, K: int, seed, patience: int = RESTART_PATIENCE,
                       tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
                       improve_tol: float = 1e-9, return_info: bool = False, on_fit=None):
    """Repeat k-means-initialized EM with fresh seeds until ``patience``
    consecutive attempts fail to beat the best log-likelihood by more than
    ``improve_tol``. ``on_fit(model)`` is called after every attempt."""
    X = np.asarray(data, dtype=np.float64)
    reg = regularization(X)
    best, best_attempt = None, -1
    attempt, stale = 0, 0
    while stale < patience:
        s = attempt_seed(seed, attempt)
        model = gmm_fit_em(X, K, kmeans_init(X, K, s), tol=tol, max_iter=max_iter, reg=reg)
        if on_fit is not None:
            on_fit(model)
        if best is None or model.log_likelihood > best.log_likelihood + improve_tol:
            best, best_attempt, stale = model, attempt, 0
        else:
            stale += 1
        attempt += 1
    if return_info:
        return RestartResult(best, attempt, best_attempt)
    return best


def n_free_parameters(K: int, d: int) -> int:
    return (K - 1) + K * d + K * d * (d + 1) // 2


def bic(model: GMMModel, n_points: int) -> float:
    K, d = model.means.shape
    return n_free_parameters(K, d) * np.log(n_points) - 2.0 * model.log_likelihood


def bic_scan(data, K_values, seed, patience: int = RESTART_PATIENCE, on_fit=None) -> dict:
    X = np.asarray(data, dtype=np.float64)
    return {int(K): bic(gmm_restart_search(X, int(K), seed, patience=patience, on_fit=on_fit), len(X))
            for K in K_values}


# ------------------------------------------------------------ pipeline

@dataclass
class ClusterAssignment:
    labels: np.ndarray
    responsibilities: np.ndarray
    features: Optional[np.ndarray] = None
    pca: Optional[PCAModel] = None
    projections: Optional[np.ndarray] = None
    gmm: Optional[GMMModel] = None


def cluster_features(features, n_pca: int = 10, K_clusters: int = 6, seed=0,
                     patience: int = RESTART_PATIENCE) -> ClusterAssignment:
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise DataError("no feature vectors to cluster")
    if n < 2 or not np.any(X - X.mean(axis=0)):
        resp = np.zeros((n, K_clusters))
        resp[:, 0] = 1.0
        return ClusterAssignment(np.zeros(n, dtype=int), resp, X)
    n_pca = max(1, min(n_pca, n - 1, d))
    pca = pca_fit(X, n_pca)
    Z = pca_project(pca, X)
    gmm = gmm_restart_search(Z, K_clusters, seed, patience=patience)
    resp = gmm.responsibilities(Z)
    return ClusterAssignment(np.argmax(resp, axis=1), resp, X, pca, Z, gmm)


def cluster_phase_diagram(dataset, K_spectral: int = DEFAULT_K, n_pca: int = 10,
                          K_clusters: int = 6, seed=0,
                          patience: int = RESTART_PATIENCE) -> ClusterAssignment:
    """Spectra -> shift-invariant features -> PCA -> GMM, one label per set."""
    if dataset is None or len(dataset) == 0:
        raise DataError("empty dataset")
    return cluster_features(feature_matrix(dataset, K_spectral), n_pca, K_clusters, seed, patience)


# ----------------------------------------------------------- scoring

def _contingency(a, b):
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def purity(labels, truth) -> float:
    """Fraction of points carrying the majority truth label of their cluster."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("no labels")
    return float(_contingency(labels, truth).max(axis=1).sum() / len(labels))


def adjusted_rand_index(a, b) -> float:
    table = _contingency(a, b)
    n = table.sum()

    def pairs(v):
        return (v * (v - 1) // 2).sum()

    sum_ij = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
