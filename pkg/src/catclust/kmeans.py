"""Lloyd's K-means with k-means++ seeding and restarts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed


@dataclass(frozen=True, eq=False)
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    K: int
    n_iter: int
    seed: int
    inertia_trace: tuple = field(default=(), repr=False)


def _sq_dists(X, C, x_sq=None):
    if x_sq is None:
        x_sq = (X * X).sum(1)
    d = x_sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(X, C, x_sq=None):
    d = _sq_dists(X, C, x_sq)
    # argmin returns the first minimum: ties go to the lower cluster id
    lab = np.argmin(d, axis=1)
    return lab, d[np.arange(len(X)), lab]


def kmeans_plusplus(X, K, rng, x_sq=None) -> np.ndarray:
    """D^2-weighted seeding."""
    n = X.shape[0]
    if x_sq is None:
        x_sq = (X * X).sum(1)
    centers = np.empty((K, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    closest = _sq_dists(X, centers[:1], x_sq)[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[k] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[k:k + 1], x_sq)[:, 0])
    return centers


def _repair_empty(X, labels, d2, C, K):
    """Give each empty cluster the point farthest from its current centroid."""
    counts = np.bincount(labels, minlength=K)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels, d2
    labels = labels.copy()
    d2 = d2.copy()
    for e in empty:
        counts = np.bincount(labels, minlength=K)
        movable = counts[labels] > 1
        cand = np.where(movable, d2, -1.0)
        far = int(np.argmax(cand))
        counts[labels[far]] -= 1
        labels[far] = e
        C[e] = X[far]
        d2[far] = 0.0
    return labels, d2


def _centroids(X, labels, K):
    # one-hot product; much faster than np.add.at
    H = np.zeros((K, X.shape[0]))
    H[labels, np.arange(X.shape[0])] = 1.0
    counts = np.bincount(labels, minlength=K).astype(float)
    return (H @ X) / counts[:, None], counts


def _lloyd(X, K, rng, tol, max_iter, x_sq):
    C = kmeans_plusplus(X, K, rng, x_sq)
    # with centroids at cluster means, within SS = total SS - between SS
    mu = X.mean(0)
    tss = float(((X - mu) ** 2).sum())
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels, d2 = _assign(X, C, x_sq)
        labels, d2 = _repair_empty(X, labels, d2, C, K)
        new, counts = _centroids(X, labels, K)
        shift = float(((new - C) ** 2).sum())
        C = new
        trace.append(max(tss - float(counts @ ((C - mu) ** 2).sum(1)), 0.0))
        if shift < tol:
            break
    labels, d2 = _assign(X, C, x_sq)
    if np.bincount(labels, minlength=K).min() == 0:
        labels, d2 = _repair_empty(X, labels, d2, C, K)
    inertia = float(((X - C[labels]) ** 2).sum())
    trace.append(inertia)
    return labels, C, inertia, n_iter, trace


def kmeans(X, K: int, restarts: int = 10, seed: int = 0, tol: float = 1e-6,
           max_iter: int = 300) -> ClusteringResult:
    """Best-of-``restarts`` Lloyd K-means.

    Each restart seeds with k-means++ and iterates until the total squared
    centroid shift drops below ``tol`` or ``max_iter`` is hit; points are then
    reassigned to their nearest centroid. ``inertia_trace`` of the returned
    result holds the within-cluster sum of squares after every iteration of
    the winning restart (last entry = final inertia).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    x_sq = (X * X).sum(1)
    best = None
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        rng = np.random.default_rng(child)
        labels, C, inertia, n_iter, trace = _lloyd(X, K, rng, tol, max_iter, x_sq)
        if best is None or inertia < best[2]:
            best = (labels, C, inertia, n_iter, trace)
    labels, C, inertia, n_iter, trace = best
    return ClusteringResult(labels, C, inertia, K, n_iter, seed, tuple(trace))


def default_k_range(n: int, k_min: int = 3, k_max: int = 100) -> range:
    return range(k_min, min(k_max, n - 1) + 1)


def sweep_k(X, k_min: int = 3, k_max: int = 100, restarts: int = 10, seed: int = 0,
            n_jobs: int = 1, **kw) -> list[ClusteringResult]:
    """One K-means result per K in ``[k_min, min(k_max, n-1)]``, each with its own
    seed derived from ``(seed, K)``."""
    X = np.asarray(X, dtype=float)
    ks = default_k_range(X.shape[0], k_min, k_max)
    if len(ks) == 0:
        raise ValueError(f"empty K range [{k_min}, {min(k_max, X.shape[0] - 1)}]")
    seeds = {K: int(np.random.SeedSequence([seed, K]).generate_state(1)[0]) for K in ks}
    if n_jobs == 1:
        return [kmeans(X, K, restarts, seeds[K], **kw) for K in ks]
    return list(Parallel(n_jobs=n_jobs)(delayed(kmeans)(X, K, restarts, seeds[K], **kw) for K in ks))
