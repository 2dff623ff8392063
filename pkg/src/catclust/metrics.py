"""Internal and external clustering scores, classifier scores, K selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

log = logging.getLogger(__name__)

INTERNAL = ("inertia", "silhouette", "calinski_harabasz", "davies_bouldin", "gap_statistic")
EXTERNAL = ("homogeneity", "completeness", "v_measure", "rand", "adjusted_rand",
            "nmi", "ami", "fowlkes_mallows", "clustering_accuracy")
METRICS = INTERNAL + EXTERNAL
LOWER_IS_BETTER = frozenset({"inertia", "davies_bouldin"})

# closed ranges; None = unbounded on that side
RANGES = {
    "inertia": (0.0, None),
    "silhouette": (-1.0, 1.0),
    "calinski_harabasz": (0.0, None),
    "davies_bouldin": (0.0, None),
    "gap_statistic": (None, None),
    "homogeneity": (0.0, 1.0),
    "completeness": (0.0, 1.0),
    "v_measure": (0.0, 1.0),
    "rand": (0.0, 1.0),
    "adjusted_rand": (-1.0, 1.0),
    "nmi": (0.0, 1.0),
    "ami": (-1.0, 1.0),
    "fowlkes_mallows": (0.0, 1.0),
    "clustering_accuracy": (0.0, 1.0),
}


def check_range(metric: str, value: float, slack: float = 1e-9) -> float:
    lo, hi = RANGES[metric]
    if math.isnan(value):
        raise ValueError(f"{metric} is NaN")
    if (lo is not None and value < lo - slack) or (hi is not None and value > hi + slack):
        raise ValueError(f"{metric}={value} outside its range [{lo}, {hi}]")
    return value


def _relabel(a) -> tuple[np.ndarray, int]:
    _, inv = np.unique(np.asarray(a), return_inverse=True)
    return inv.ravel(), int(inv.max()) + 1 if len(inv) else 0


# ---------------------------------------------------------------- internal

def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def inertia(X, assign) -> float:
    X = np.asarray(X, dtype=float)
    a, k = _relabel(assign)
    total = 0.0
    for c in range(k):
        pts = X[a == c]
        total += float(((pts - pts.mean(0)) ** 2).sum())
    return total


def silhouette(X, assign, D=None, chunk: int = 1024) -> float:
    """Mean silhouette width; points in singleton clusters score 0.

    ``D`` may be a precomputed Euclidean distance matrix.
    """
    a, k = _relabel(assign)
    if k < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    n = len(a)
    sizes = np.bincount(a, minlength=k).astype(float)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), a] = 1.0
    X = None if X is None else np.asarray(X, dtype=float)
    s = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        if D is not None:
            block = D[lo:hi]
        else:
            block = np.sqrt(_sq_dists(X[lo:hi], X))
        sums = block @ onehot                      # (rows, k) distance totals per cluster
        own = a[lo:hi]
        r = np.arange(hi - lo)
        own_size = sizes[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            intra = sums[r, own] / (own_size - 1)
            mean_other = sums / sizes[None, :]
        mean_other[r, own] = np.inf
        inter = mean_other.min(axis=1)
        denom = np.maximum(intra, inter)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (inter - intra) / denom
        val = np.where(denom > 0, val, 0.0)
        s[lo:hi] = np.where(own_size > 1, val, 0.0)
    return float(s.mean())


def calinski_harabasz(X, assign) -> float:
    """Variance ratio (B/(K-1)) / (W/(n-K)); ``inf`` when W = 0."""
    X = np.asarray(X, dtype=float)
    a, k = _relabel(assign)
    n = len(a)
    if not 2 <= k < n:
        raise ValueError(f"Calinski-Harabasz needs 2 <= K < n, got K={k}, n={n}")
    mean = X.mean(0)
    B = W = 0.0
    for c in range(k):
        pts = X[a == c]
        mu = pts.mean(0)
        B += len(pts) * float(((mu - mean) ** 2).sum())
        W += float(((pts - mu) ** 2).sum())
    if W == 0.0:
        return math.inf
    return (B / (k - 1)) / (W / (n - k))


def davies_bouldin(X, assign) -> float:
    X = np.asarray(X, dtype=float)
    a, k = _relabel(assign)
    if k < 2:
        raise ValueError("Davies-Bouldin needs at least 2 clusters")
    cents = np.stack([X[a == c].mean(0) for c in range(k)])
    S = np.array([np.sqrt(((X[a == c] - cents[c]) ** 2).sum(1)).mean() for c in range(k)])
    M = np.sqrt(_sq_dists(cents, cents))
    M = np.maximum(M, 1e-12)
    R = (S[:, None] + S[None, :]) / M
    np.fill_diagonal(R, -np.inf)
    return float(R.max(axis=1).mean())


def _log_wk(X, K, seed, restarts):
    from .kmeans import kmeans
    res = kmeans(X, K, restarts=restarts, seed=seed)
    # W_k: pooled within-cluster sum of squares; floor keeps log finite for
    # perfectly clustered data
    return math.log(max(res.inertia, 1e-300))


def gap_statistic(X, K: int, B: int = 10, seed: int = 0, restarts: int = 1,
                  log_wk: float | None = None) -> tuple[float, float]:
    """Gap(K) against uniform reference data drawn in the per-feature bounding box.

    Returns ``(gap, s_k)`` with ``s_k = sd(log W*) * sqrt(1 + 1/B)``. Pass
    ``log_wk`` to reuse the observed dispersion of an existing clustering.
    """
    X = np.asarray(X, dtype=float)
    if B < 1:
        raise ValueError("need at least one reference data set")
    lo, hi = X.min(0), X.max(0)
    if np.all(hi - lo == 0):
        raise ValueError("gap statistic undefined for zero-variance data")
    ss = np.random.SeedSequence([seed, K])
    child = ss.spawn(B + 1)
    if log_wk is None:
        log_wk = _log_wk(X, K, int(child[0].generate_state(1)[0]), restarts)
    refs = []
    for b in range(B):
        rng = np.random.default_rng(child[b + 1])
        Z = rng.uniform(lo, hi, size=X.shape)
        refs.append(_log_wk(Z, K, int(rng.integers(2**31 - 1)), restarts))
    refs = np.array(refs)
    gap = float(refs.mean() - log_wk)
    s_k = float(refs.std() * math.sqrt(1.0 + 1.0 / B))
    return gap, s_k


# ---------------------------------------------------------------- external

@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray           # classes x clusters

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def class_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cluster_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(y, assign) -> ContingencyTable:
    y = np.asarray(y)
    assign = np.asarray(assign)
    if y.shape != assign.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {assign.shape}")
    yi, ny = _relabel(y)
    ai, na = _relabel(assign)
    counts = np.zeros((ny, na), dtype=np.int64)
    np.add.at(counts, (yi, ai), 1)
    return ContingencyTable(counts)


def _as_table(ct_or_y, assign=None) -> ContingencyTable:
    if isinstance(ct_or_y, ContingencyTable):
        return ct_or_y
    return contingency(ct_or_y, assign)


def _entropy(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(ct: ContingencyTable) -> float:
    c = ct.counts.astype(float)
    n = c.sum()
    a = c.sum(1)
    b = c.sum(0)
    nz = c > 0
    outer = np.outer(a, b)
    mi = (c[nz] / n * (np.log(c[nz] * n) - np.log(outer[nz]))).sum()
    return max(float(mi), 0.0)


def homogeneity_completeness_v(ct_or_y, assign=None) -> tuple[float, float, float]:
    ct = _as_table(ct_or_y, assign)
    h_class = _entropy(ct.class_totals)
    h_clust = _entropy(ct.cluster_totals)
    mi = _mutual_info(ct)
    # H(class|cluster) = H(class) - MI
    h = 1.0 if h_class == 0 else 1.0 - (h_class - mi) / h_class
    c = 1.0 if h_clust == 0 else 1.0 - (h_clust - mi) / h_clust
    h, c = min(max(h, 0.0), 1.0), min(max(c, 0.0), 1.0)
    v = 0.0 if h + c == 0 else 2.0 * h * c / (h + c)
    return h, c, v


def _pair_counts(ct: ContingencyTable):
    """(same-class & same-cluster, same-cluster, same-class, total) pair counts, exact ints."""
    c = ct.counts.astype(object)
    comb2 = lambda v: v * (v - 1) // 2  # noqa: E731
    both = int(sum(comb2(int(x)) for x in ct.counts.ravel()))
    same_cluster = int(sum(comb2(int(x)) for x in ct.cluster_totals))
    same_class = int(sum(comb2(int(x)) for x in ct.class_totals))
    total = comb2(int(c.sum()))
    return both, same_cluster, same_class, total


def rand_ari_fm(ct_or_y, assign=None) -> tuple[float, float, float]:
    ct = _as_table(ct_or_y, assign)
    if ct.n < 2:
        raise ValueError("pair-counting indices need n >= 2")
    tp, pred_pos, true_pos, total = _pair_counts(ct)
    fp = pred_pos - tp
    fn = true_pos - tp
    tn = total - tp - fp - fn
    rand = (tp + tn) / total
    expected = pred_pos * true_pos / total
    max_index = (pred_pos + true_pos) / 2
    if max_index == expected:
        # both partitions trivial (all singletons or one block): perfect agreement
        ari = 1.0
    else:
        ari = (tp - expected) / (max_index - expected)
    denom = pred_pos * true_pos
    fm = 0.0 if denom == 0 else tp / math.sqrt(denom)
    return rand, ari, fm


def _expected_mutual_info(ct: ContingencyTable) -> float:
    """E[MI] under the hypergeometric (fixed-marginals permutation) model."""
    a = ct.class_totals.astype(np.int64)
    b = ct.cluster_totals.astype(np.int64)
    n = int(a.sum())
    lg = gammaln
    emi = 0.0
    log_n = math.log(n)
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1, dtype=float)
            term1 = nij / n * (np.log(nij) + log_n - math.log(ai) - math.log(bj))
            log_p = (lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                     - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1) - lg(bj - nij + 1)
                     - lg(n - ai - bj + nij + 1))
            emi += float((term1 * np.exp(log_p)).sum())
    return emi


def nmi_ami(ct_or_y, assign=None) -> tuple[float, float]:
    """Mutual information normalized by the arithmetic mean of the two entropies,
    and its chance-adjusted version."""
    ct = _as_table(ct_or_y, assign)
    h1 = _entropy(ct.class_totals)
    h2 = _entropy(ct.cluster_totals)
    k1, k2 = ct.counts.shape
    if (k1 == k2 == 1) or (k1 == k2 == ct.n):
        # identical trivial partitions
        return 1.0, 1.0
    mi = _mutual_info(ct)
    mean_h = (h1 + h2) / 2.0
    nmi = 0.0 if mean_h == 0 else min(mi / mean_h, 1.0)
    emi = _expected_mutual_info(ct)
    denom = mean_h - emi
    if abs(denom) < np.finfo(float).eps:
        denom = np.finfo(float).eps if denom >= 0 else -np.finfo(float).eps
    ami = (mi - emi) / denom
    return nmi, float(ami)


def clustering_accuracy(y, assign, chunk: int = 2048) -> float:
    """Fraction of the m(m-1)/2 point pairs whose same/different-group status
    agrees between ``y`` and ``assign`` (counted directly over pairs)."""
    y = np.asarray(y)
    assign = np.asarray(assign)
    if y.shape != assign.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {assign.shape}")
    m = len(y)
    if m < 2:
        raise ValueError("clustering accuracy needs at least 2 points")
    agree = 0
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        same_y = y[lo:hi, None] == y[None, :]
        same_a = assign[lo:hi, None] == assign[None, :]
        ok = same_y == same_a
        # keep only pairs with i > j
        i = np.arange(lo, hi)[:, None]
        j = np.arange(m)[None, :]
        agree += int(np.count_nonzero(ok & (i > j)))
    return agree / (m * (m - 1) // 2)


def classification_scores(y_true, y_pred) -> tuple[float, float]:
    """Accuracy and support-weighted F1 (fractions, not percent)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    n = len(y_true)
    acc = float(np.mean(y_true == y_pred))
    f1w = 0.0
    for c in np.unique(y_true):
        tp = np.sum((y_pred == c) & (y_true == c))
        pred_c = np.sum(y_pred == c)
        true_c = np.sum(y_true == c)
        f1 = 0.0 if tp == 0 else 2.0 * tp / (pred_c + true_c)
        f1w += true_c / n * f1
    return acc, float(f1w)


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson undefined for a constant sequence")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------- tables

def external_scores(y, assign) -> dict:
    ct = contingency(y, assign)
    h, c, v = homogeneity_completeness_v(ct)
    rand, ari, fm = rand_ari_fm(ct)
    nmi, ami = nmi_ami(ct)
    out = {
        "homogeneity": h, "completeness": c, "v_measure": v,
        "rand": rand, "adjusted_rand": ari, "nmi": nmi, "ami": ami,
        "fowlkes_mallows": fm, "clustering_accuracy": clustering_accuracy(y, assign),
    }
    for k, val in out.items():
        check_range(k, val)
    return out


def internal_scores(X, assign, D=None, inertia_value=None, gap=None) -> dict:
    """Inertia, silhouette, CH and DB; ``gap`` is an optional precomputed
    ``(gap, s_k)`` pair (NaN otherwise)."""
    out = {
        "inertia": inertia(X, assign) if inertia_value is None else float(inertia_value),
        "silhouette": silhouette(X, assign, D=D),
        "calinski_harabasz": calinski_harabasz(X, assign),
        "davies_bouldin": davies_bouldin(X, assign),
        "gap_statistic": math.nan if gap is None else gap[0],
    }
    for k, val in out.items():
        if not (k == "gap_statistic" and math.isnan(val)):
            check_range(k, val)
    return out


class ScoreTable(dict):
    """``{K: {metric: value}}``."""

    @property
    def ks(self) -> list[int]:
        return sorted(self)

    def curve(self, metric: str) -> np.ndarray:
        return np.array([self[k].get(metric, math.nan) for k in self.ks], dtype=float)


def elbow(ks, values) -> int:
    """K at the largest second difference of a curve (ties -> smallest K)."""
    ks = list(ks)
    v = np.asarray(values, dtype=float)
    if len(ks) < 3:
        return ks[int(np.argmin(v))]
    second = v[:-2] - 2.0 * v[1:-1] + v[2:]
    return ks[1 + int(np.argmax(second))]


def optimal_k(scores: ScoreTable, metric: str) -> int:
    """K that optimizes ``metric`` over the sweep.

    Maximized for every metric except davies_bouldin (minimized) and inertia,
    whose raw minimum always sits at the largest K and is replaced by the
    elbow of the curve. Ties go to the smallest K.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    ks = scores.ks
    vals = scores.curve(metric)
    if metric == "inertia":
        log.info("optimal_k: inertia elbow used in place of the degenerate argmin")
        return elbow(ks, vals)
    if np.all(np.isnan(vals)):
        raise ValueError(f"no finite {metric} values in the sweep")
    if metric in LOWER_IS_BETTER:
        vals = -vals
    vals = np.where(np.isnan(vals), -np.inf, vals)
    return ks[int(np.argmax(vals))]
