"""Gaussian-mixture LEEP: PCA, then a full-covariance GMM fit by EM."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..cluster import kmeans_plus_plus
from ..core import DataError, LabeledFeatureSet
from .basic import leep_from_probs
from .config import MetricConfig


def pca_reduce(X: np.ndarray, variance: float) -> np.ndarray:
    """Project onto the fewest principal axes that keep ``variance`` of the total."""
    Xc = X - X.mean(axis=0)
    _, sv, Vt = np.linalg.svd(Xc, full_matrices=False)
    ev = sv * sv
    total = ev.sum()
    if total <= 0:
        return Xc[:, :1] * 0.0
    frac = np.cumsum(ev) / total
    k = int(np.searchsorted(frac, variance - 1e-12) + 1)
    k = min(k, Vt.shape[0])
    V = Vt[:k]
    # fix the SVD sign ambiguity: largest-magnitude loading of each axis is positive
    signs = np.sign(V[np.arange(k), np.argmax(np.abs(V), axis=1)])
    return Xc @ (V * signs[:, None]).T


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_likelihood: list[float] = field(default_factory=list)
    converged: bool = False

    def _log_joint(self, X):
        k, d = self.means.shape
        out = np.empty((X.shape[0], k))
        for c in range(k):
            L = np.linalg.cholesky(self.covs[c])
            sol = np.linalg.solve(L, (X - self.means[c]).T)
            out[:, c] = (np.log(self.weights[c]) - 0.5 * d * np.log(2 * np.pi)
                         - np.sum(np.log(np.diag(L))) - 0.5 * np.sum(sol * sol, axis=0))
        return out

    def responsibilities(self, X):
        lj = self._log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def mean_log_likelihood(self, X) -> float:
        return float(np.mean(logsumexp(self._log_joint(X), axis=1)))


def _m_step(X, resp, reg):
    n, d = X.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = resp.T @ X / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    for c in range(resp.shape[1]):
        D = X - means[c]
        covs[c] = (resp[:, c, None] * D).T @ D / nk[c]
        covs[c].flat[::d + 1] += reg
    return nk / n, means, covs


def fit_gmm(X, n_components: int, seed=0, reg: float = 1e-6, max_iter: int = 200,
            tol: float = 1e-8) -> GaussianMixture:
    """EM from a k-means++ hard assignment. Records the mean log-likelihood per iteration."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= n_components:
        raise DataError(f"GMM needs more samples ({X.shape[0]}) than components ({n_components})")
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(X, n_components, rng)
    d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((X.shape[0], n_components))
    resp[np.arange(X.shape[0]), np.argmin(d2, axis=1)] = 1.0
    gmm = GaussianMixture(*_m_step(X, resp, reg))
    prev = -np.inf
    for _ in range(max_iter):
        lj = gmm._log_joint(X)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        if not np.isfinite(ll):
            raise DataError("GMM: EM produced a non-finite log-likelihood")
        gmm.log_likelihood.append(ll)
        if ll - prev < tol * max(1.0, abs(ll)):
            gmm.converged = True
            break
        prev = ll
        gmm.weights, gmm.means, gmm.covs = _m_step(X, np.exp(lj - norm), reg)
    return gmm


def nleep(fs: LabeledFeatureSet, cfg: MetricConfig = MetricConfig(), seed=0) -> float:
    comps = fs.n_classes if cfg.nleep_components == "auto" else int(cfg.nleep_components)
    if fs.n <= comps:
        raise DataError(f"NLEEP needs n > components ({fs.n} <= {comps})")
    Z = pca_reduce(fs.features, cfg.nleep_pca_variance)
    # fit on lexicographically sorted rows so seeding does not depend on sample order
    canon = Z[np.lexsort(Z.T[::-1])]
    gmm = fit_gmm(canon, comps, seed=seed, reg=cfg.gmm_reg, max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol)
    return leep_from_probs(gmm.responsibilities(Z), fs.labels, fs.n_classes)
