"""Diffusion potential embedding of random-forest proximities.

Pipeline: GAP proximities -> symmetric affinity -> row-stochastic diffusion
operator -> t steps of diffusion (t picked at the knee of the von Neumann
entropy curve) -> potential distances -> metric MDS (classical start refined
by SMACOF) with the dimension picked from a stress scan.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from .dataset import Dataset, stratified_subsample
from .forest import Forest, ProximityMatrix, gap_proximities

log = logging.getLogger(__name__)

EPS_LOG = 1e-7
T_MAX = 64
SUBSAMPLE_CAP = 4000
STRESS_REL = 0.01     # dimension rule: within 1% of the scan minimum
STRESS_ABS = 1e-6     # ... or this close to it in absolute terms
STRESS_FLOOR = 1e-7   # SMACOF stops once the normalized stress is this small


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    P: np.ndarray
    t: int = 1
    degree: np.ndarray | None = field(default=None, repr=False)   # row sums of the affinity


@dataclass(frozen=True, eq=False)
class PotentialDistances:
    D: np.ndarray
    eps: float = EPS_LOG


@dataclass(frozen=True, eq=False)
class Embedding:
    """MDS coordinates.

    ``Y`` has one row per embedded point. For :func:`rf_phate_embed` on a
    subsampled dataset, ``rows`` lists the dataset rows that were embedded
    and ``anchor[i]`` gives, for every dataset row, the position in ``Y``
    whose coordinates it takes (see :meth:`full`).
    """

    Y: np.ndarray
    m: int
    stress: float
    stress_by_dim: dict = field(default_factory=dict)
    stress_trace: tuple = field(default=(), repr=False)
    t: int | None = None
    entropy: tuple = field(default=(), repr=False)
    rows: np.ndarray | None = field(default=None, repr=False)
    anchor: np.ndarray | None = field(default=None, repr=False)

    def full(self) -> np.ndarray:
        """Coordinates for every dataset row."""
        return self.Y if self.anchor is None else self.Y[self.anchor]


def symmetrize(K) -> np.ndarray:
    K = K.K if isinstance(K, ProximityMatrix) else np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"proximity matrix must be square, got shape {K.shape}")
    return (K + K.T) / 2.0


def diffusion_operator(A) -> DiffusionOperator:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"affinity must be square, got shape {A.shape}")
    if (A < 0).any():
        raise ValueError("affinity has negative entries")
    s = A.sum(axis=1)
    zero = np.flatnonzero(s == 0)
    if zero.size:
        log.info("diffusion_operator: %d all-zero rows get a 1e-12 self loop", zero.size)
        A[zero, zero] = 1e-12
        s = A.sum(axis=1)
    return DiffusionOperator(A / s[:, None], 1, s)


def _spectrum(op) -> np.ndarray:
    """Eigenvalues of P. With the affinity degrees d known, P is similar to the
    symmetric d^1/2 P d^-1/2 and a symmetric solver applies."""
    if isinstance(op, DiffusionOperator) and op.degree is not None:
        r = np.sqrt(op.degree)
        S = (r[:, None] * op.P) / r[None, :]
        return np.linalg.eigvalsh((S + S.T) / 2.0)
    P = op.P if isinstance(op, DiffusionOperator) else np.asarray(op, dtype=float)
    return np.linalg.eigvals(P).real


def von_neumann_entropy(P, t_max: int = T_MAX) -> np.ndarray:
    """H(t) for t = 1..t_max from the eigenvalues of P."""
    lam = np.abs(_spectrum(P))
    H = np.empty(t_max)
    for t in range(1, t_max + 1):
        e = lam ** t
        e = e / e.sum()
        e = e[e > 0]
        H[t - 1] = float(-(e * np.log(e)).sum())
    return H


def _knee(H: np.ndarray) -> int:
    """1-based position of the largest second difference; 1 on flat curves."""
    if len(H) < 3:
        return 1
    d2 = H[:-2] - 2.0 * H[1:-1] + H[2:]
    k = int(np.argmax(d2))
    if d2[k] <= 1e-12 * max(1.0, float(np.abs(H).max())):
        return 1
    return k + 2


def select_t(P, t_max: int = T_MAX) -> int:
    """Diffusion time at the knee of the von Neumann entropy curve."""
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if t_max == 1:
        return 1
    return _knee(von_neumann_entropy(P, t_max))


def diffuse(P, t: int) -> np.ndarray:
    P = P.P if isinstance(P, DiffusionOperator) else np.asarray(P, dtype=float)
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    return np.linalg.matrix_power(P, int(t))


def potential_distances(P, t: int, eps: float = EPS_LOG) -> PotentialDistances:
    """Euclidean distances between the rows of ``-log(P^t + eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    U = -np.log(np.maximum(diffuse(P, t), 0.0) + eps)
    sq = (U * U).sum(1)
    G = sq[:, None] + sq[None, :] - 2.0 * (U @ U.T)
    D = np.sqrt(np.maximum(G, 0.0))
    D = (D + D.T) / 2.0
    np.fill_diagonal(D, 0.0)
    return PotentialDistances(D, eps)


def _as_dist(D) -> np.ndarray:
    D = D.D if isinstance(D, PotentialDistances) else np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix has non-finite entries")
    return D


def normalized_stress(D, Y) -> float:
    """sqrt(sum (d_ij - |y_i - y_j|)^2 / sum d_ij^2) over pairs i < j."""
    Dc = squareform(_as_dist(D), checks=False)
    den = float((Dc * Dc).sum())
    if den == 0:
        return 0.0
    r = pdist(np.asarray(Y, dtype=float)) - Dc
    return float(np.sqrt((r * r).sum() / den))


def classical_mds(D, m: int) -> np.ndarray:
    """Top-``m`` coordinates of the double-centered squared distances.

    Each eigenvector's sign is fixed so its largest-magnitude entry is
    positive, making the result equivariant under row permutations.
    """
    D = _as_dist(D)
    n = D.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    D2 = D ** 2
    B = -0.5 * (D2 - D2.mean(0)[None, :] - D2.mean(1)[:, None] + D2.mean())
    B = (B + B.T) / 2.0
    w, V = eigh(B, subset_by_index=[n - m, n - 1])
    w, V = w[::-1], V[:, ::-1]
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(m)])[None, :]
    return V * np.sqrt(np.maximum(w, 0.0))[None, :]


def smacof(D, Y0, max_iter: int = 100, tol: float = 1e-3):
    """Stress majorization from ``Y0``; returns ``(Y, stress, trace)``.

    Guttman transforms never raise the stress; an update that would (only
    possible through rounding) ends the loop with the previous iterate.
    Works on condensed (upper-triangle) distance vectors.
    """
    D = _as_dist(D)
    n = D.shape[0]
    Dc = squareform(D, checks=False)
    den = float((Dc * Dc).sum())
    Y = np.array(Y0, dtype=float)

    def raw(Yc):
        d = pdist(Yc)
        r = d - Dc
        return d, float((r * r).sum())

    d, s = raw(Y)
    trace = [float(np.sqrt(s / den)) if den > 0 else 0.0]
    for _ in range(max_iter):
        if s == 0.0:
            break
        # Guttman transform: (B Y)_i = sum_j r_ij (y_i - y_j), r = D/d (0 where d = 0)
        r = np.divide(Dc, d, out=np.zeros_like(Dc), where=d > 0)
        R = squareform(r, checks=False)
        Yn = (R.sum(1)[:, None] * Y - R @ Y) / n
        dn, sn = raw(Yn)
        if sn > s:
            break
        rel = (s - sn) / s
        Y, d, s = Yn, dn, sn
        trace.append(float(np.sqrt(s / den)))
        if rel < tol or trace[-1] < STRESS_FLOOR:
            break
    return Y, trace[-1], tuple(trace)


def mds(D, m: int, max_iter: int = 100, tol: float = 1e-3, init=None) -> Embedding:
    """Metric MDS: classical solution (or ``init``) refined by SMACOF."""
    D = _as_dist(D)
    Y0 = classical_mds(D, m) if init is None else np.asarray(init, dtype=float)
    Y, stress, trace = smacof(D, Y0, max_iter, tol)
    return Embedding(Y, m, float(stress), {m: float(stress)}, trace)


def select_dimension(D, dims=range(2, 11), max_iter: int = 100, tol: float = 1e-3):
    """Scan ``dims`` and return ``(m*, stress_by_dim, embeddings)``.

    m* is the smallest dimension whose stress is within 1% (or 1e-6
    absolute) of the scan minimum. Dimensions are scanned in increasing
    order; if a fresh classical start ends above the previous dimension,
    the previous solution padded with a zero column is refined instead, so
    the stress curve is non-increasing.
    """
    D = _as_dist(D)
    dims = sorted(int(m) for m in dims)
    if not dims:
        raise ValueError("empty dimension range")
    n = D.shape[0]
    if dims[0] < 1 or dims[-1] > n - 1:
        raise ValueError(f"dimensions must lie in [1, {n - 1}], got {dims[0]}..{dims[-1]}")
    embs = {}
    prev = None
    for m in dims:
        e = mds(D, m, max_iter, tol)
        if prev is not None and e.stress > prev.stress:
            pad = np.zeros((n, m))
            pad[:, :prev.m] = prev.Y
            e = mds(D, m, max_iter, tol, init=pad)
        embs[m] = e
        prev = e
    by_dim = {m: embs[m].stress for m in dims}
    best = min(by_dim.values())
    m_star = next(m for m in dims if by_dim[m] <= best * (1 + STRESS_REL) + STRESS_ABS)
    return m_star, by_dim, embs


def rf_phate_embed(f: Forest, ds: Dataset, dims=range(2, 11), t_max: int = T_MAX,
                   eps: float = EPS_LOG, subsample_cap: int = SUBSAMPLE_CAP, seed: int = 0,
                   max_iter: int = 100, tol: float = 1e-3,
                   proximities: ProximityMatrix | None = None) -> Embedding:
    """Embed the rows of ``ds`` from the GAP proximities of forest ``f``.

    Above ``subsample_cap`` rows a stratified subsample is embedded and every
    other row borrows the coordinates of the embedded row it has the largest
    symmetric proximity to.
    """
    prox = proximities if proximities is not None else gap_proximities(f, ds)
    A_full = symmetrize(prox)
    n = A_full.shape[0]
    rows = stratified_subsample(ds.y, subsample_cap, seed)
    A = A_full[np.ix_(rows, rows)]
    P = diffusion_operator(A)
    H = von_neumann_entropy(P, t_max) if t_max > 1 else np.zeros(1)
    t = _knee(H)
    pot = potential_distances(P, t, eps)
    hi = min(max(dims), len(rows) - 1)
    dims = [m for m in dims if m <= hi]
    m_star, by_dim, embs = select_dimension(pot, dims, max_iter, tol)
    e = embs[m_star]
    log.info("rf_phate_embed %s: n=%d embedded=%d t=%d m*=%d stress=%.4g",
             ds.name, n, len(rows), t, m_star, e.stress)
    if len(rows) == n:
        return Embedding(e.Y, m_star, e.stress, by_dim, e.stress_trace, t, tuple(H))
    anchor = np.empty(n, dtype=np.int64)
    anchor[rows] = np.arange(len(rows))
    held = np.setdiff1d(np.arange(n), rows)
    anchor[held] = np.argmax(A_full[np.ix_(held, rows)], axis=1)
    return Embedding(e.Y, m_star, e.stress, by_dim, e.stress_trace, t, tuple(H), rows, anchor)


def write_embedding(emb: Embedding, path, labels=None, class_names=None) -> None:
    """Columnar export ``id,dim_1..dim_m[,label]`` for every dataset row."""
    Y = emb.full()
    head = ["id"] + [f"dim_{k + 1}" for k in range(Y.shape[1])]
    if labels is not None:
        head.append("label")
    with open(path, "w") as fh:
        fh.write(",".join(head) + "\n")
        for i, r in enumerate(Y):
            cells = [str(i)] + [repr(float(v)) for v in r]
            if labels is not None:
                lab = labels[i]
                cells.append(str(class_names[lab]) if class_names is not None else str(lab))
            fh.write(",".join(cells) + "\n")


def write_stress(emb: Embedding, path) -> None:
    with open(path, "w") as fh:
        fh.write("dim,stress\n")
        for m in sorted(emb.stress_by_dim):
            fh.write(f"{m},{emb.stress_by_dim[m]!r}\n")
