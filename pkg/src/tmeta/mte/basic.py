"""H-Score, NCE, LEEP and GBC."""
from __future__ import annotations

import itertools
import warnings

import numpy as np

from ..core import DataError, DegenerateWarning, LabeledFeatureSet
from .config import MetricConfig


def h_score(fs: LabeledFeatureSet, cfg: MetricConfig = MetricConfig()) -> float:
    """``tr(pinv(Cov(F)) Cov_b)`` with population covariances.

    ``Cov_b`` is the covariance of the matrix in which every row is replaced
    by the mean of its class.
    """
    F = fs.features
    present = np.unique(fs.labels)
    if present.size < 2:
        warnings.warn("h_score: a single class is present; returning 0", DegenerateWarning, stacklevel=2)
        return 0.0
    Fc = F - F.mean(axis=0)
    cov = Fc.T @ Fc / fs.n
    G = np.zeros_like(F)
    for c in present:
        mask = fs.labels == c
        G[mask] = F[mask].mean(axis=0)
    Gc = G - G.mean(axis=0)
    cov_b = Gc.T @ Gc / fs.n
    return float(np.trace(np.linalg.pinv(cov, rcond=cfg.pinv_rcond, hermitian=True) @ cov_b))


def _require_probs(fs: LabeledFeatureSet, name: str) -> np.ndarray:
    if fs.source_probs is None:
        raise DataError(f"{name} needs source-model probabilities")
    return fs.source_probs


def nce(fs: LabeledFeatureSet) -> float:
    """Negative conditional entropy ``-H(Y | Z)`` with ``Z`` the source argmax."""
    P = _require_probs(fs, "NCE")
    z = np.argmax(P, axis=1)
    joint = np.zeros((fs.n_classes, P.shape[1]))
    np.add.at(joint, (fs.labels, z), 1.0)
    joint /= fs.n
    pz = joint.sum(axis=0)
    nz = joint > 0
    cond = np.divide(joint, pz[None, :], out=np.ones_like(joint), where=nz)
    return float(np.sum(joint[nz] * np.log(cond[nz])))


def leep_from_probs(theta: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Average log-likelihood of the expected empirical predictor built from ``theta``."""
    n = theta.shape[0]
    joint = np.zeros((n_classes, theta.shape[1]))
    np.add.at(joint, labels, theta)
    joint /= n
    pz = joint.sum(axis=0)
    keep = pz > 0
    cond = joint[:, keep] / pz[keep]
    eep = np.einsum("iz,iz->i", theta[:, keep], cond[labels])
    bad = np.flatnonzero(eep <= 0)
    if bad.size:
        raise DataError(f"LEEP: sample {int(bad[0])} has zero expected-predictor probability")
    return float(np.mean(np.log(eep)))


def leep(fs: LabeledFeatureSet) -> float:
    return leep_from_probs(_require_probs(fs, "LEEP"), fs.labels, fs.n_classes)


def bhattacharyya_diag(mu1, var1, mu2, var2) -> float:
    var = 0.5 * (var1 + var2)
    diff = mu1 - mu2
    maha = 0.125 * np.sum(diff * diff / var)
    # log det ratio, summed per dimension for stability
    logdet = 0.5 * np.sum(np.log(var) - 0.5 * (np.log(var1) + np.log(var2)))
    return float(maha + logdet)


def gbc(fs: LabeledFeatureSet, cfg: MetricConfig = MetricConfig()) -> float:
    """Negative sum of Bhattacharyya coefficients over class pairs."""
    F = fs.features
    stats = []
    for c in np.unique(fs.labels):
        Fc = F[fs.labels == c]
        if Fc.shape[0] < 2:
            raise DataError(f"GBC: class {int(c)} has fewer than 2 samples")
        var = np.maximum(Fc.var(axis=0), cfg.gmm_reg)
        if np.any(var <= 0):
            raise DataError(f"GBC: class {int(c)} has zero variance after flooring")
        stats.append((Fc.mean(axis=0), var))
    total = 0.0
    for (m1, v1), (m2, v2) in itertools.combinations(stats, 2):
        total += np.exp(-bhattacharyya_diag(m1, v1, m2, v2))
    return -float(total)
