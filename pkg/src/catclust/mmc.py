"""Supervised Mahalanobis metric learning from similar/dissimilar pairs."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PairSets:
    S: np.ndarray            # (n_similar, 2), i < j, same class
    D: np.ndarray            # (n_dissimilar, 2), i < j, different classes
    sampling_seed: int


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    M: np.ndarray
    eigen_floor: float = 0.0
    objective_trace: tuple = field(default=(), repr=False)
    min_eigenvalues: tuple = field(default=(), repr=False)   # after each projection

    @property
    def p(self) -> int:
        return self.M.shape[0]


def _tri_decode(k, m):
    """Map linear ids 0..C(m,2)-1 to pairs (i, j), i < j, in row-major order."""
    k = np.asarray(k, dtype=np.int64)
    rows = np.arange(m, dtype=np.int64)
    starts = rows * m - rows * (rows + 1) // 2
    i = np.searchsorted(starts, k, side="right") - 1
    j = k - starts[i] + i + 1
    return i, j


def _choose(total, cap, rng):
    if total <= cap:
        return np.arange(total, dtype=np.int64)
    return np.sort(rng.choice(total, size=cap, replace=False)).astype(np.int64)


def build_pairs(y, max_pairs_per_set: int = 5000, seed: int = 0) -> PairSets:
    """Same-class pairs into S and cross-class pairs into D.

    Each set is sampled uniformly without replacement down to
    ``max_pairs_per_set``; below the cap it is exhaustive.
    """
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least two classes to form dissimilar pairs")
    rng = np.random.default_rng(seed)
    members = [np.flatnonzero(y == c) for c in classes]
    sizes = np.array([len(m) for m in members], dtype=np.int64)

    # similar pairs: class blocks of C(n_c, 2) linear ids
    s_block = sizes * (sizes - 1) // 2
    s_total = int(s_block.sum())
    if s_total == 0:
        raise ValueError("no class has two members; similar set is empty")
    ids = _choose(s_total, max_pairs_per_set, rng)
    bounds = np.cumsum(s_block)
    blk = np.searchsorted(bounds, ids, side="right")
    S = np.empty((len(ids), 2), dtype=np.int64)
    for b in np.unique(blk):
        sel = blk == b
        local = ids[sel] - (bounds[b] - s_block[b])
        i, j = _tri_decode(local, sizes[b])
        S[sel, 0] = members[b][i]
        S[sel, 1] = members[b][j]

    # dissimilar pairs: blocks n_a * n_b for class pairs a < b
    blocks = [(a, b) for a in range(len(classes)) for b in range(a + 1, len(classes))]
    d_block = np.array([sizes[a] * sizes[b] for a, b in blocks], dtype=np.int64)
    ids = _choose(int(d_block.sum()), max_pairs_per_set, rng)
    bounds = np.cumsum(d_block)
    blk = np.searchsorted(bounds, ids, side="right")
    D = np.empty((len(ids), 2), dtype=np.int64)
    for b in np.unique(blk):
        sel = blk == b
        local = ids[sel] - (bounds[b] - d_block[b])
        ca, cb = blocks[b]
        i, j = np.divmod(local, sizes[cb])
        D[sel, 0] = members[ca][i]
        D[sel, 1] = members[cb][j]
    D.sort(axis=1)
    return PairSets(S, D, seed)


def _psd_project(M):
    M = (M + M.T) / 2.0
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, 0.0)
    out = (V * w) @ V.T
    return (out + out.T) / 2.0


FORMS = ("convex", "literal")


def learn_metric(X, pairs: PairSets, max_iter: int = 500, step: float = 0.1,
                 tol: float = 1e-5, init: str = "standardized",
                 form: str = "convex") -> MetricMatrix:
    """Projected-gradient metric learning from pair constraints.

    ``form="convex"`` (default) solves the convex program::

        min_M  sum_{(i,j) in S} d_M(x_i, x_j)^2
        s.t.   sum_{(k,l) in D} d_M(x_k, x_l) >= 1,   M PSD

    ``form="literal"`` swaps the powers (plain distances in the objective,
    squared ones in the constraint). That variant minimizes a concave
    function, so projected gradient only finds a local solution.

    In both forms objective and constraint scale with different powers of
    M, so the optimum sits on the constraint boundary and the problem
    reduces to a scale-free ratio. Each iteration steps along the gradient
    of that ratio (the Lagrangian gradient), clips negative eigenvalues, and
    rescales M so the constraint holds with equality. A step that does not
    lower the objective is retried at half the size; accepted steps grow
    the step by 1.5x. Accepted objective values therefore never increase.
    Stops when the relative change falls below ``tol`` or after
    ``max_iter`` iterations.

    ``init="identity"`` starts from the (rescaled) Euclidean metric;
    ``init="standardized"`` from the per-feature inverse-variance metric,
    unless the rescaled identity already scores lower. Either way the
    result never scores worse than the rescaled identity.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if init not in ("identity", "standardized"):
        raise ValueError(f"unknown init {init!r}")
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    p = X.shape[1]
    dS = X[pairs.S[:, 0]] - X[pairs.S[:, 1]]
    dD = X[pairs.D[:, 0]] - X[pairs.D[:, 1]]
    scatter_D = dD.T @ dD          # constraint is linear: g(M) = tr(M scatter_D)

    def dist(diff, M):
        return np.sqrt(np.maximum(((diff @ M) * diff).sum(1), 0.0))

    def sum_dist_grad(diff, M):
        w = 0.5 / np.maximum(dist(diff, M), 1e-12)
        return (diff * w[:, None]).T @ diff

    if form == "literal":
        def constraint(M):
            return float(np.sum(scatter_D * M))

        def objective(M):
            return float(dist(dS, M).sum())

        def gradient(M, f):
            # d/dM [f / sqrt(g)] at g = 1
            return sum_dist_grad(dS, M) - 0.5 * f * scatter_D
        power = 1.0
    else:
        scatter_S = dS.T @ dS

        def constraint(M):
            return float(dist(dD, M).sum())

        def objective(M):
            return float(np.sum(scatter_S * M))

        def gradient(M, f):
            # d/dM [f / g^2] at g = 1
            return scatter_S - 2.0 * f * sum_dist_grad(dD, M)
        power = 2.0

    def start(M):
        g0 = constraint(M)
        if g0 <= 0:
            raise ValueError("dissimilar pairs have zero spread")
        M = M / g0 ** power
        return M, objective(M)

    M, f = start(np.eye(p))
    if init == "standardized":
        sd = X.std(axis=0)
        Ms, fs = start(np.diag(1.0 / np.where(sd > 0, sd, 1.0) ** 2))
        if fs <= f:
            M, f = Ms, fs
    trace = [f]
    floors = [float(np.linalg.eigvalsh(M).min())]
    eta = step
    for _ in range(max_iter):
        G = gradient(M, f)
        gnorm = np.linalg.norm(G)
        if gnorm == 0:
            break
        accepted = False
        while eta > 1e-10:
            cand = _psd_project(M - eta * (np.linalg.norm(M) / gnorm) * G)
            floors.append(float(np.linalg.eigvalsh(cand).min()))
            g = constraint(cand)
            if g > 0:
                cand = cand / g ** power
                fc = objective(cand)
                if fc < f:
                    accepted = True
                    break
            eta /= 2.0
        if not accepted:
            break
        rel = (f - fc) / max(abs(f), 1e-300)
        M, f = cand, fc
        trace.append(f)
        eta = eta * 1.5
        if rel < tol:
            break
    log.debug("learn_metric: %d iterations, objective %.6g -> %.6g", len(trace) - 1, trace[0], f)
    w = np.linalg.eigvalsh(M)
    return MetricMatrix(M, float(w.min()), tuple(trace), tuple(floors))


def sqrtm_psd(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def transform_points(M: MetricMatrix | np.ndarray, X) -> np.ndarray:
    """Rows of ``X`` mapped by the symmetric square root of M, so Euclidean
    distances in the image equal d_M in the source."""
    M = M.M if isinstance(M, MetricMatrix) else np.asarray(M, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != M.shape[0]:
        raise ValueError(f"dimension mismatch: X has {X.shape[-1]} columns, M is {M.shape}")
    return X @ sqrtm_psd(M)


def mahalanobis_distance(M: MetricMatrix | np.ndarray, x, y) -> float:
    M = M.M if isinstance(M, MetricMatrix) else np.asarray(M, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if d.shape != (M.shape[0],):
        raise ValueError(f"dimension mismatch: vectors of shape {d.shape}, M is {M.shape}")
    r = float(d @ M @ d)
    if r < -1e-10:
        raise ValueError(f"negative squared distance {r}: M is not PSD")
    return float(np.sqrt(max(r, 0.0)))


def save_metric(mm: MetricMatrix, path) -> None:
    """JSON document: ``{"format": "catclust.metric", "version": 1, "M": [[...]],
    "eigen_floor": float, "objective_trace": [...]}``; floats are written with
    ``repr`` precision so the round trip is exact."""
    doc = {
        "format": "catclust.metric",
        "version": 1,
        "M": mm.M.tolist(),
        "eigen_floor": mm.eigen_floor,
        "objective_trace": list(mm.objective_trace),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_metric(path) -> MetricMatrix:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "catclust.metric" or doc.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 metric file")
    return MetricMatrix(np.array(doc["M"], dtype=float), float(doc["eigen_floor"]),
                        tuple(doc["objective_trace"]))
