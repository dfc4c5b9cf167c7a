"""k-means with k-means++ seeding; shared by the GMM initialiser and ISAC."""
from __future__ import annotations

import numpy as np


def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``k`` initial centers by D^2 sampling."""
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers, dtype=np.float64)


def kmeans(X, k: int, seed=0, max_iter: int = 100):
    """Lloyd iterations from a k-means++ start. Returns ``(centers, labels)``."""
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(X, k, rng)
    labels = np.argmin(_sq_dists(X, centers), axis=1)
    for _ in range(max_iter):
        for c in range(k):
            members = X[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        new = np.argmin(_sq_dists(X, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return centers, labels
