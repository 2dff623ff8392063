"""Random forest with bootstrap bookkeeping and GAP proximities.

Each tree is a CART grown by scikit-learn's ``DecisionTreeClassifier`` on the
bagged rows (bootstrap multiplicities passed as sample weights, Gini splits,
``ceil(sqrt(p))`` candidate features per split). Everything that depends on
the bootstrap -- multiplicities, out-of-bag sets, leaf occupancy, voting and
the proximities -- is kept here, in plain arrays that serialize exactly.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.tree import DecisionTreeClassifier

from .dataset import Dataset, FoldPlan

log = logging.getLogger(__name__)

FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted binary tree in array form.

    Node ``k`` is a leaf when ``children_left[k] == -1``. ``leaf_counts`` holds
    the bootstrap-weighted class counts of every node. ``multiplicity[j]`` is
    how many times training row ``j`` was drawn, and ``leaf_of[j]`` is the
    leaf that row ``j`` of the training matrix falls into (bagged or not).
    """

    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    leaf_counts: np.ndarray
    multiplicity: np.ndarray
    leaf_of: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.children_left)

    def apply(self, X) -> np.ndarray:
        # sklearn grows trees on float32 features; compare at the same precision
        X = np.asarray(X, dtype=np.float32)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.children_left[node] != -1)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.children_left[nd], self.children_right[nd])
            active = active[self.children_left[node[active]] != -1]
        return node

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.leaf_counts[self.apply(X)], axis=1)


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    n_classes: int
    n_features: int
    n_estimators: int
    max_depth: int | None
    seed: int

    @property
    def n(self) -> int:
        return len(self.trees[0].multiplicity)

    @property
    def oob_mask(self) -> np.ndarray:
        """``(n_trees, n)`` boolean; ``[t, i]`` is True when row i is out of bag in tree t."""
        return np.stack([t.multiplicity == 0 for t in self.trees])

    @property
    def oob_sets(self) -> list[np.ndarray]:
        """S_i for every training row: the ids of trees where row i is out of bag."""
        mask = self.oob_mask
        return [np.flatnonzero(mask[:, i]) for i in range(mask.shape[1])]

    def head(self, n_estimators: int) -> "Forest":
        """The sub-forest made of the first ``n_estimators`` trees.

        Per-tree seeds are spawned positionally from the master seed, so this
        is exactly the forest ``fit_forest`` builds with that size.
        """
        if not 1 <= n_estimators <= len(self.trees):
            raise ValueError(f"head({n_estimators}) out of range for {len(self.trees)} trees")
        return Forest(self.trees[:n_estimators], self.n_classes, self.n_features,
                      n_estimators, self.max_depth, self.seed)


def _tree_rngs(seed: int, n_estimators: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_estimators)]


def _grow(X, y, n_classes, max_depth, max_features, rng) -> Tree:
    n = X.shape[0]
    draw = rng.integers(0, n, size=n)
    mult = np.bincount(draw, minlength=n).astype(np.int64)
    bag = np.flatnonzero(mult)
    clf = DecisionTreeClassifier(
        criterion="gini",
        max_depth=max_depth,
        max_features=max_features,
        min_samples_split=2,
        random_state=int(rng.integers(2**31 - 1)),
    )
    clf.fit(X[bag], y[bag], sample_weight=mult[bag].astype(float))
    st = clf.tree_
    # tree_.value holds per-node class fractions; rescale to weighted counts
    frac = st.value[:, 0, :]
    frac = frac / frac.sum(axis=1, keepdims=True)
    counts = np.zeros((st.node_count, n_classes))
    counts[:, clf.classes_.astype(np.int64)] = frac * st.weighted_n_node_samples[:, None]
    left = st.children_left.astype(np.int64)
    right = st.children_right.astype(np.int64)
    feat = np.where(left == -1, 0, st.feature).astype(np.int64)
    tree = Tree(left, right, feat, st.threshold.astype(np.float64), counts, mult,
                np.empty(0, dtype=np.int64))
    object.__setattr__(tree, "leaf_of", tree.apply(X))
    return tree


def fit_forest(ds: Dataset, n_estimators: int = 100, max_depth: int | None = None,
               seed: int = 0, n_jobs: int = 1) -> Forest:
    """Grow ``n_estimators`` bootstrap trees on ``ds`` (deterministic in ``seed``)."""
    if ds.n == 0:
        raise ValueError("cannot fit a forest on an empty dataset")
    if n_estimators < 1:
        raise ValueError(f"n_estimators must be >= 1, got {n_estimators}")
    if len(np.unique(ds.y)) < 2:
        warnings.warn(f"{ds.name}: single-class training data; trees collapse to one leaf",
                      stacklevel=2)
    X = np.asarray(ds.X, dtype=float)
    max_features = min(ds.p, math.ceil(math.sqrt(ds.p)))
    rngs = _tree_rngs(seed, n_estimators)
    if n_jobs == 1:
        trees = [_grow(X, ds.y, ds.n_classes, max_depth, max_features, r) for r in rngs]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_grow)(X, ds.y, ds.n_classes, max_depth, max_features, r) for r in rngs
        )
    return Forest(tuple(trees), ds.n_classes, ds.p, n_estimators, max_depth, seed)


def _votes(f: Forest, X, mask=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != f.n_features:
        raise ValueError(f"expected rows with {f.n_features} columns, got shape {X.shape}")
    votes = np.zeros((X.shape[0], f.n_classes), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for t, tree in enumerate(f.trees):
        pred = tree.predict(X)
        if mask is None:
            votes[rows, pred] += 1
        else:
            m = mask[t]
            votes[rows[m], pred[m]] += 1
    return votes


def predict(f: Forest, rows) -> np.ndarray:
    """Hard majority vote over trees; ties go to the lower class id."""
    return np.argmax(_votes(f, rows), axis=1)


def oob_predict(f: Forest, X) -> np.ndarray:
    """Majority vote using, for each training row, only trees where it is out of bag.
    Rows never out of bag get -1."""
    votes = _votes(f, X, f.oob_mask)
    pred = np.argmax(votes, axis=1)
    pred[votes.sum(axis=1) == 0] = -1
    return pred


@dataclass
class GridSearchResult:
    best_params: tuple[int, int | None]
    cv_scores: dict            # (n_estimators, max_depth) -> mean weighted F1 over folds
    fold_scores: dict          # (n_estimators, max_depth) -> list of per-fold weighted F1
    oof_predictions: dict = field(repr=False)  # params -> out-of-fold predicted labels

    def __iter__(self):
        yield self.best_params
        yield self.cv_scores


def _depth_key(d):
    return math.inf if d is None else d


def grid_search_cv(ds: Dataset, grid, folds: FoldPlan, seed: int = 0,
                   n_jobs: int = 1) -> GridSearchResult:
    """Pick the (n_estimators, max_depth) point with the best mean CV weighted F1.

    Ties go to fewer trees, then to the shallower depth (unbounded counts as
    deepest). For each depth and fold only the largest forest is grown; the
    smaller grid sizes are its leading sub-forests.
    """
    from .metrics import classification_scores

    grid = [(int(n), None if d is None else int(d)) for n, d in grid]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    fold_scores = {g: [] for g in grid}
    oof = {g: np.full(ds.n, -1, dtype=np.int64) for g in grid}
    depths = sorted({d for _, d in grid}, key=_depth_key)
    for depth in depths:
        sizes = sorted({n for n, d in grid if d == depth})
        for k, (train, test) in enumerate(folds.folds):
            big = fit_forest(ds.subset(train), max(sizes), depth, seed=seed + k, n_jobs=n_jobs)
            for size in sizes:
                pred = predict(big.head(size), ds.X[test])
                _, f1 = classification_scores(ds.y[test], pred)
                fold_scores[(size, depth)].append(f1)
                oof[(size, depth)][test] = pred
    cv = {g: float(np.mean(s)) for g, s in fold_scores.items()}
    best = min(grid, key=lambda g: (-cv[g], g[0], _depth_key(g[1])))
    return GridSearchResult(best, cv, fold_scores, oof)


@dataclass(frozen=True, eq=False)
class ProximityMatrix:
    """Dense GAP proximities; ``K[i, j]`` is how close j is to i (rows sum to 1)."""

    K: np.ndarray
    forest: Forest
    refits: int = 0

    @property
    def n(self) -> int:
        return self.K.shape[0]


def _gap_dense(f: Forest) -> np.ndarray:
    n = f.n
    K = np.zeros((n, n))
    n_oob = np.zeros(n, dtype=np.int64)
    for tree in f.trees:
        c = tree.multiplicity
        leaf = tree.leaf_of
        bagged = np.flatnonzero(c > 0)
        oob = np.flatnonzero(c == 0)
        n_oob[oob] += 1
        if oob.size == 0:
            continue
        # |M_l(t)|: bagged multiset size of each leaf
        msize = np.bincount(leaf[bagged], weights=c[bagged], minlength=tree.n_nodes)
        # bagged rows grouped by leaf -> contiguous segments
        order = bagged[np.argsort(leaf[bagged], kind="stable")]
        seg_len = np.bincount(leaf[order], minlength=tree.n_nodes)
        seg_start = np.concatenate(([0], np.cumsum(seg_len)[:-1]))
        reps = seg_len[leaf[oob]]
        rows = np.repeat(oob, reps)
        base = np.repeat(seg_start[leaf[oob]], reps)
        within = np.arange(rows.size) - np.repeat(np.cumsum(reps) - reps, reps)
        cols = order[base + within]
        K[rows, cols] += c[cols] / msize[leaf[rows]]
    has = n_oob > 0
    K[has] /= n_oob[has, None]
    return K, n_oob


def gap_proximities(f: Forest, ds: Dataset | None = None, refit: bool = True,
                    max_refits: int = 3) -> ProximityMatrix:
    """GAP proximities of the training rows of ``f``.

    For row i and the trees S_i where i is out of bag::

        k_ij = 1/|S_i| * sum_{t in S_i} c_j(t) * [j bagged in i's leaf] / |M_i(t)|

    where c_j(t) is j's bootstrap multiplicity and |M_i(t)| the multiset size
    of the bagged rows in i's leaf. ``k_ii`` is 0. When some row is never out
    of bag the forest is regrown with 50% more trees (needs ``ds``), at most
    ``max_refits`` times.
    """
    if ds is not None and ds.n != f.n:
        raise ValueError(f"forest was trained on {f.n} rows, dataset has {ds.n}")
    refits = 0
    while True:
        K, n_oob = _gap_dense(f)
        empty = int(np.sum(n_oob == 0))
        if empty == 0:
            return ProximityMatrix(K, f, refits)
        if not refit or ds is None or refits >= max_refits:
            raise ValueError(f"{empty} rows are never out of bag with {len(f.trees)} trees")
        refits += 1
        size = math.ceil(1.5 * len(f.trees))
        log.warning("%d rows never out of bag; refitting with %d trees", empty, size)
        f = fit_forest(ds, size, f.max_depth, f.seed)


def save_forest(f: Forest, path) -> None:
    """Write ``f`` to an ``.npz`` archive.

    Layout (version 1): scalar metadata arrays ``version``, ``n_classes``,
    ``n_features``, ``n_estimators``, ``max_depth`` (-1 = unbounded), ``seed``;
    per-node arrays concatenated over trees with ``node_offsets``
    (``children_left``/``children_right`` are tree-local ids); and
    ``multiplicity``/``leaf_of`` stacked as ``(n_trees, n)``.
    """
    offsets = np.cumsum([0] + [t.n_nodes for t in f.trees])
    np.savez(
        path,
        version=np.int64(FOREST_FORMAT_VERSION),
        n_classes=np.int64(f.n_classes),
        n_features=np.int64(f.n_features),
        n_estimators=np.int64(f.n_estimators),
        max_depth=np.int64(-1 if f.max_depth is None else f.max_depth),
        seed=np.int64(f.seed),
        node_offsets=offsets.astype(np.int64),
        children_left=np.concatenate([t.children_left for t in f.trees]),
        children_right=np.concatenate([t.children_right for t in f.trees]),
        feature=np.concatenate([t.feature for t in f.trees]),
        threshold=np.concatenate([t.threshold for t in f.trees]),
        leaf_counts=np.concatenate([t.leaf_counts for t in f.trees]),
        multiplicity=np.stack([t.multiplicity for t in f.trees]),
        leaf_of=np.stack([t.leaf_of for t in f.trees]),
    )


def load_forest(path) -> Forest:
    with np.load(path) as z:
        version = int(z["version"])
        if version != FOREST_FORMAT_VERSION:
            raise ValueError(f"unsupported forest file version {version}")
        off = z["node_offsets"]
        trees = []
        for t in range(len(off) - 1):
            a, b = off[t], off[t + 1]
            trees.append(Tree(
                z["children_left"][a:b], z["children_right"][a:b], z["feature"][a:b],
                z["threshold"][a:b], z["leaf_counts"][a:b], z["multiplicity"][t], z["leaf_of"][t],
            ))
        depth = int(z["max_depth"])
        return Forest(tuple(trees), int(z["n_classes"]), int(z["n_features"]),
                      int(z["n_estimators"]), None if depth < 0 else depth, int(z["seed"]))
