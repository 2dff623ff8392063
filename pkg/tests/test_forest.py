import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catclust.dataset import Dataset, NUMERIC, stratified_kfold
from catclust.forest import (Forest, Tree, _gap_dense, fit_forest, gap_proximities,
                             grid_search_cv, load_forest, oob_predict, predict, save_forest)

from .conftest import toy


def make_ds(X, y, name="synthetic"):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    k = int(y.max()) + 1
    return Dataset(X, y, tuple(str(c) for c in range(k)),
                   tuple(f"f{j}" for j in range(X.shape[1])), (NUMERIC,) * X.shape[1],
                   name=name)


def stump(mult, leaf_of, n_classes=2, counts=None):
    """Depth-1 tree on feature 0 at threshold 0.5 with hand-set bookkeeping."""
    if counts is None:
        counts = np.zeros((3, n_classes))
    return Tree(np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([0, 0, 0]),
                np.array([0.5, -2.0, -2.0]), np.asarray(counts, float),
                np.asarray(mult, dtype=np.int64), np.asarray(leaf_of, dtype=np.int64))


def brute_gap(f: Forest, X):
    """Direct evaluation of the GAP formula over every (i, t, j) triple."""
    n = f.n
    K = np.zeros((n, n))
    S = np.zeros(n, dtype=np.int64)
    leaves = [t.apply(X) for t in f.trees]
    for i in range(n):
        for t, tree in enumerate(f.trees):
            c = tree.multiplicity
            if c[i] != 0:
                continue
            S[i] += 1
            leaf = leaves[t][i]
            M = sum(int(c[j]) for j in range(n) if leaves[t][j] == leaf)
            for j in range(n):
                if c[j] > 0 and leaves[t][j] == leaf:
                    K[i, j] += c[j] / M
        if S[i]:
            K[i] /= S[i]
    return K, S


# ---------------------------------------------------------------- GAP

def test_hand_fixture_multiset():
    # row 0 is out of bag and shares its leaf with the bagged multiset {1, 1, 2}
    tree = stump([0, 2, 1, 1], [1, 1, 1, 2])
    f = Forest((tree,), 2, 1, 1, None, 0)
    K, n_oob = _gap_dense(f)
    assert K[0, 1] == pytest.approx(2 / 3, abs=0)
    assert K[0, 2] == pytest.approx(1 / 3, abs=0)
    assert K[0, 3] == 0.0 and K[0, 0] == 0.0
    assert n_oob.tolist() == [1, 0, 0, 0]


def test_unshared_leaf_gives_zero():
    tree = stump([0, 2, 1, 1], [1, 1, 1, 2])
    K, _ = _gap_dense(Forest((tree,), 2, 1, 1, None, 0))
    assert K[0, 3] == 0.0


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("n_trees", [2, 3])
def test_gap_matches_brute_force(seed, n_trees):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 13))
    X = rng.normal(size=(n, 3))
    y = np.arange(n) % 2
    f = fit_forest(make_ds(X, y), n_trees, None, seed=seed)
    K, n_oob = _gap_dense(f)
    ref, S = brute_gap(f, X)
    assert np.array_equal(n_oob, S)
    assert np.array_equal(K, ref)


def test_row_sums_and_diagonal():
    ds = toy("wine", impute_zero=True)
    prox = gap_proximities(fit_forest(ds, 100, None, seed=0), ds)
    np.testing.assert_allclose(prox.K.sum(1), 1.0, atol=1e-8)
    assert np.all(np.diag(prox.K) == 0) and np.all(prox.K >= 0)


def test_refit_when_rows_never_out_of_bag(iris):
    prox = gap_proximities(fit_forest(iris, 4, None, seed=0), iris)
    assert prox.refits >= 1
    assert len(prox.forest.trees) > 4
    np.testing.assert_allclose(prox.K.sum(1), 1.0, atol=1e-8)


def test_never_out_of_bag_without_refit_is_error(iris):
    with pytest.raises(ValueError, match="never out of bag"):
        gap_proximities(fit_forest(iris, 2, None, seed=0), iris, refit=False)


# ---------------------------------------------------------------- forest

def test_oob_consistency_and_multiplicities(iris):
    f = fit_forest(iris, 20, None, seed=3)
    mask = f.oob_mask
    for t, tree in enumerate(f.trees):
        assert tree.multiplicity.sum() == iris.n
        assert np.array_equal(mask[t], tree.multiplicity == 0)
    for i, s in enumerate(f.oob_sets):
        assert all(f.trees[t].multiplicity[i] == 0 for t in s)


def test_node_weights_decrease_along_paths(iris):
    f = fit_forest(iris, 5, None, seed=1)
    for tree in f.trees:
        w = tree.leaf_counts.sum(1)
        assert w[0] == pytest.approx(iris.n)
        for k in range(tree.n_nodes):
            for child in (tree.children_left[k], tree.children_right[k]):
                if child != -1:
                    assert w[child] < w[k]


def test_determinism(iris):
    a, b = fit_forest(iris, 30, None, seed=7), fit_forest(iris, 30, None, seed=7)
    assert np.array_equal(predict(a, iris.X), predict(b, iris.X))
    assert np.array_equal(gap_proximities(a).K, gap_proximities(b).K)


def test_head_is_the_smaller_forest(iris):
    big, small = fit_forest(iris, 30, 5, seed=2), fit_forest(iris, 10, 5, seed=2)
    head = big.head(10)
    for t1, t2 in zip(head.trees, small.trees):
        assert np.array_equal(t1.multiplicity, t2.multiplicity)
        assert np.array_equal(t1.threshold, t2.threshold)


def test_memorizes_distinct_points():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    f = fit_forest(make_ds(X, y), 50, None, seed=0)
    assert np.array_equal(predict(f, X), y)


def test_single_tree_vote_is_the_tree(iris):
    f = fit_forest(iris, 1, None, seed=4)
    assert np.array_equal(predict(f, iris.X), f.trees[0].predict(iris.X))


def test_tie_goes_to_lower_class():
    votes_for = lambda c: stump([1, 1], [1, 2], 3, counts=np.eye(3)[[0, c, c]])  # noqa: E731
    f = Forest((votes_for(2), votes_for(0)), 3, 1, 2, None, 0)
    assert predict(f, np.array([[0.0], [1.0]])).tolist() == [0, 0]


def test_predict_dimension_mismatch(iris):
    f = fit_forest(iris, 3, None, seed=0)
    with pytest.raises(ValueError):
        predict(f, np.zeros((2, 3)))


def test_empty_dataset_and_single_class():
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), ("a",), ("x", "z"),
                    (NUMERIC, NUMERIC))
    with pytest.raises(ValueError):
        fit_forest(empty, 5)
    ds = make_ds(np.arange(10.0)[:, None], np.zeros(10))
    with pytest.warns(UserWarning):
        f = fit_forest(ds, 3, None, seed=0)
    assert all(t.n_nodes == 1 for t in f.trees)


def test_oob_accuracy_stable_in_forest_size(iris):
    acc = {}
    for n in (10, 200):
        pred = oob_predict(fit_forest(iris, n, None, seed=0), iris.X)
        ok = pred >= 0
        acc[n] = np.mean(pred[ok] == iris.y[ok])
    assert acc[200] >= acc[10] - 0.02


# ---------------------------------------------------------------- grid search

def test_grid_of_one_point(iris):
    res = grid_search_cv(iris, [(20, 3)], stratified_kfold(iris, 3, 0))
    assert res.best_params == (20, 3)
    best, cv = res
    assert set(cv) == {(20, 3)}


def test_dominant_grid_point_wins():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(120, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)   # needs depth >= 2
    ds = make_ds(X, y)
    res = grid_search_cv(ds, [(30, 1), (30, None)], stratified_kfold(ds, 3, 0))
    assert all(a > b for a, b in zip(res.fold_scores[(30, None)], res.fold_scores[(30, 1)]))
    assert res.best_params == (30, None)


def test_iris_grid_near_reference(iris):
    grid = [(n, d) for n in (100, 200, 500) for d in (None, 5, 10)]
    res = grid_search_cv(iris, grid, stratified_kfold(iris, 5, 0))
    # reference weighted F1 95.9; desk tolerance 3 points
    assert abs(100 * res.cv_scores[res.best_params] - 95.9) <= 3.0


def test_grid_ties_prefer_fewer_trees_then_shallower():
    X = np.r_[np.zeros((10, 1)), np.ones((10, 1))]
    ds = make_ds(X, np.r_[np.zeros(10), np.ones(10)])
    res = grid_search_cv(ds, [(20, None), (10, 5), (10, 2)], stratified_kfold(ds, 2, 0))
    assert res.best_params == (10, 2)


# ---------------------------------------------------------------- io

def test_save_load_round_trip(tmp_path, iris):
    f = fit_forest(iris, 25, 4, seed=9)
    p = tmp_path / "f.npz"
    save_forest(f, p)
    g = load_forest(p)
    assert (g.n_classes, g.n_features, g.n_estimators, g.max_depth, g.seed) == \
        (f.n_classes, f.n_features, f.n_estimators, f.max_depth, f.seed)
    for a, b in zip(f.trees, g.trees):
        for name in ("children_left", "children_right", "feature", "threshold",
                     "leaf_counts", "multiplicity", "leaf_of"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(gap_proximities(f).K, gap_proximities(g).K)


@given(st.integers(0, 2**20))
def test_row_sums_property(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    ds = make_ds(X, (X[:, 0] > 0).astype(int))
    prox = gap_proximities(fit_forest(ds, 25, None, seed=seed), ds)
    np.testing.assert_allclose(prox.K.sum(1), 1.0, atol=1e-8)
