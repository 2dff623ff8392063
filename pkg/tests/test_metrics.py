import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn import metrics as skm

from catclust.metrics import (METRICS, ScoreTable, calinski_harabasz, check_range,
                              classification_scores, clustering_accuracy, contingency,
                              davies_bouldin, elbow, external_scores, gap_statistic,
                              homogeneity_completeness_v, inertia, internal_scores, nmi_ami,
                              optimal_k, pearson, rand_ari_fm, silhouette)

pytestmark = pytest.mark.filterwarnings("ignore:The number of unique classes")

labelings = st.lists(st.integers(0, 4), min_size=2, max_size=10)


def brute_pairs(y, a):
    """Pair-by-pair enumeration: (rand, ari, fm, agreement fraction)."""
    tp = fp = fn = tn = 0
    for i, j in itertools.combinations(range(len(y)), 2):
        sy, sa = y[i] == y[j], a[i] == a[j]
        tp += sy and sa
        fp += sa and not sy
        fn += sy and not sa
        tn += not sy and not sa
    total = tp + fp + fn + tn
    rand = (tp + tn) / total
    pred_pos, true_pos = tp + fp, tp + fn
    expected = pred_pos * true_pos / total
    max_index = (pred_pos + true_pos) / 2
    ari = 1.0 if max_index == expected else (tp - expected) / (max_index - expected)
    fm = 0.0 if pred_pos * true_pos == 0 else tp / math.sqrt(pred_pos * true_pos)
    return rand, ari, fm, (tp + tn) / total


def random_partitions(count, seed=0, n_max=10):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, n_max + 1))
        yield rng.integers(0, int(rng.integers(1, n + 1)), n), \
            rng.integers(0, int(rng.integers(1, n + 1)), n)


# ---------------------------------------------------------------- pair counting

def test_pair_indices_equal_brute_force():
    for y, a in random_partitions(500):
        rand, ari, fm, agree = brute_pairs(y, a)
        assert rand_ari_fm(y, a) == (rand, ari, fm)
        assert clustering_accuracy(y, a) == agree == rand


@given(labelings, st.data())
def test_pair_indices_property(y, data):
    a = data.draw(st.lists(st.integers(0, 4), min_size=len(y), max_size=len(y)))
    rand, ari, fm, agree = brute_pairs(y, a)
    assert rand_ari_fm(y, a) == (rand, ari, fm)
    assert clustering_accuracy(y, a) == rand


def test_hand_example():
    y = [0, 0, 0, 1, 1, 1]
    a = [0, 0, 1, 1, 2, 2]
    # pairs: 15; tp = 2, same-cluster = 3, same-class = 6 -> tn = 15 - 2 - 1 - 4 = 8
    rand, ari, fm = rand_ari_fm(y, a)
    assert rand == 10 / 15
    assert fm == pytest.approx(2 / math.sqrt(18), abs=1e-15)
    assert clustering_accuracy(y, a) == 10 / 15


def test_identical_and_trivial_partitions():
    y = [0, 1, 1, 2, 2, 2]
    assert rand_ari_fm(y, [5, 3, 3, 9, 9, 9]) == (1.0, 1.0, 1.0)
    assert rand_ari_fm([0, 0, 0], [1, 1, 1])[:2] == (1.0, 1.0)
    assert rand_ari_fm([0, 1, 2], [0, 1, 2])[:2] == (1.0, 1.0)
    assert nmi_ami([0, 1, 2], [0, 1, 2]) == (1.0, 1.0)
    with pytest.raises(ValueError):
        rand_ari_fm([0], [0])
    with pytest.raises(ValueError):
        clustering_accuracy([0, 1], [0, 1, 1])


def test_chunked_accuracy_matches_unchunked():
    rng = np.random.default_rng(0)
    y, a = rng.integers(0, 3, 300), rng.integers(0, 5, 300)
    assert clustering_accuracy(y, a, chunk=7) == clustering_accuracy(y, a)


# ---------------------------------------------------------------- information

def test_cross_check_against_sklearn():
    for y, a in random_partitions(200, seed=1, n_max=40):
        h, c, v = homogeneity_completeness_v(y, a)
        hs, cs, vs = skm.homogeneity_completeness_v_measure(y, a)
        assert (h, c, v) == pytest.approx((hs, cs, vs), abs=1e-10)
        nmi, ami = nmi_ami(y, a)
        assert nmi == pytest.approx(skm.normalized_mutual_info_score(y, a), abs=1e-10)
        assert ami == pytest.approx(skm.adjusted_mutual_info_score(y, a), abs=1e-8)
        rand, ari, fm = rand_ari_fm(y, a)
        assert rand == pytest.approx(skm.rand_score(y, a), abs=1e-12)
        assert ari == pytest.approx(skm.adjusted_rand_score(y, a), abs=1e-12)
        assert fm == pytest.approx(skm.fowlkes_mallows_score(y, a), abs=1e-12)


def test_homogeneity_hand_values():
    # every cluster pure, but classes split: homogeneity 1, completeness < 1
    h, c, _ = homogeneity_completeness_v([0, 0, 1, 1], [0, 1, 2, 3])
    assert h == 1.0 and c == pytest.approx(0.5, abs=1e-12)


def test_contingency_table():
    ct = contingency(["b", "a", "a"], [2, 2, 7])
    assert ct.counts.tolist() == [[1, 1], [1, 0]]
    assert ct.n == 3
    with pytest.raises(ValueError):
        contingency([0, 1], [0])


@given(labelings, st.data())
def test_external_ranges(y, data):
    a = data.draw(st.lists(st.integers(0, 4), min_size=len(y), max_size=len(y)))
    out = external_scores(y, a)
    for k, v in out.items():
        check_range(k, v)


# ---------------------------------------------------------------- internal

def test_internal_cross_check_against_sklearn():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 3))
    a = rng.integers(0, 4, 120)
    assert silhouette(X, a) == pytest.approx(skm.silhouette_score(X, a), abs=1e-10)
    assert calinski_harabasz(X, a) == pytest.approx(skm.calinski_harabasz_score(X, a), rel=1e-10)
    assert davies_bouldin(X, a) == pytest.approx(skm.davies_bouldin_score(X, a), rel=1e-10)
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    assert silhouette(None, a, D=D, chunk=17) == pytest.approx(silhouette(X, a), abs=1e-10)


def test_inertia_and_singleton_silhouette():
    X = np.array([[0.0], [2.0], [10.0]])
    assert inertia(X, [0, 0, 1]) == 2.0
    # singleton scores 0; the pair members score 1 - 2/10 and 1 - 2/8
    s = silhouette(X, [0, 0, 1])
    ref = ((1 - 2 / 10) + (1 - 2 / 8) + 0) / 3
    assert s == pytest.approx(ref, abs=1e-15)
    with pytest.raises(ValueError):
        silhouette(X, [0, 0, 0])


def test_calinski_harabasz_perfect_clusters():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert calinski_harabasz(X, [0, 0, 1, 1]) == math.inf
    with pytest.raises(ValueError):
        calinski_harabasz(X, [0, 0, 0, 0])


def test_gap_statistic_prefers_true_k():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(c, 0.2, (40, 2)) for c in ((0, 0), (8, 0), (0, 8))])
    gaps = {K: gap_statistic(X, K, B=5, seed=0)[0] for K in (1, 2, 3)}
    assert gaps[3] > gaps[2] > gaps[1]
    g, s = gap_statistic(X, 3, B=5, seed=0)
    assert (g, s) == gap_statistic(X, 3, B=5, seed=0)
    assert s >= 0
    with pytest.raises(ValueError):
        gap_statistic(np.ones((5, 2)), 2)


def test_gap_near_zero_for_uniform_data():
    X = np.random.default_rng(4).uniform(size=(200, 2))
    for K in (2, 4):
        g, s = gap_statistic(X, K, B=50, seed=1)
        assert abs(g) <= 2 * s


def test_gap_with_one_reference():
    X = np.random.default_rng(5).normal(size=(40, 2))
    g, s = gap_statistic(X, 3, B=1, seed=0)
    assert math.isfinite(g) and s == 0.0
    with pytest.raises(ValueError):
        gap_statistic(X, 3, B=0)


def test_internal_scores_keys():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    out = internal_scores(X, np.arange(30) % 3)
    assert math.isnan(out["gap_statistic"])
    assert set(out) | {"homogeneity"} <= set(METRICS)


# ---------------------------------------------------------------- classifier / correlation

def test_classification_scores_against_sklearn():
    rng = np.random.default_rng(5)
    y, p = rng.integers(0, 3, 80), rng.integers(0, 3, 80)
    acc, f1 = classification_scores(y, p)
    assert acc == pytest.approx(skm.accuracy_score(y, p), abs=1e-15)
    assert f1 == pytest.approx(skm.f1_score(y, p, average="weighted"), abs=1e-12)


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=20), rng.normal(size=20)
    assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


# ---------------------------------------------------------------- K selection

def table(values, metric):
    return ScoreTable({k: {metric: v} for k, v in values.items()})


def test_optimal_k_directions_and_ties():
    assert optimal_k(table({3: 0.1, 4: 0.5, 5: 0.5}, "silhouette"), "silhouette") == 4
    assert optimal_k(table({3: 2.0, 4: 0.5, 5: 0.5}, "davies_bouldin"), "davies_bouldin") == 4
    assert optimal_k(table({3: math.nan, 4: 0.2}, "gap_statistic"), "gap_statistic") == 4
    with pytest.raises(ValueError):
        optimal_k(table({3: 0.1}, "silhouette"), "nonsense")
    with pytest.raises(ValueError):
        optimal_k(table({3: math.nan}, "gap_statistic"), "gap_statistic")


def test_inertia_uses_elbow():
    curve = {3: 100.0, 4: 40.0, 5: 35.0, 6: 31.0, 7: 28.0}
    assert optimal_k(table(curve, "inertia"), "inertia") == 4
    assert elbow([3, 4], [5.0, 1.0]) == 4
