import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from talentpred.errors import DimensionError, DomainError, UndefinedMetricError
from talentpred.metrics import (
    accuracy,
    binarize,
    binarize_top_n,
    clustering_report,
    entropy,
    mutual_information,
    per_type_auc,
    prediction_report,
    rand_index,
    roc_auc,
    roc_auc_multi,
    roc_auc_ranksum,
    roc_curve,
)

from oracles import auc_pairs, entropy_counts, mutual_information_counts, rand_index_pairs

labelings = st.integers(2, 12).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n),
                        st.lists(st.integers(0, 4), min_size=n, max_size=n)))


# --------------------------------------------------------------- Rand index

def test_rand_index_examples():
    assert rand_index([0, 0, 1, 1], [0, 1, 2, 3]) == pytest.approx(4 / 6, abs=1e-15)
    assert rand_index([0, 0, 1, 1], [0, 0, 1, 2]) == pytest.approx(5 / 6, abs=1e-15)
    assert rand_index([3, 1, 1, 2], [3, 1, 1, 2]) == 1.0


def test_rand_index_needs_two_points():
    with pytest.raises(DomainError):
        rand_index([0], [0])
    with pytest.raises(DomainError):
        rand_index([0, 1], [0, 1, 2])


@given(labelings)
def test_rand_index_matches_pair_enumeration(pair):
    t, p = pair
    assert abs(rand_index(t, p) - rand_index_pairs(t, p)) < 1e-12


@given(labelings, st.permutations(range(5)))
def test_rand_index_and_mi_relabel_invariant(pair, perm):
    t, p = pair
    p2 = [perm[v] for v in p]
    t2 = [perm[v] for v in t]
    assert rand_index(t, p) == rand_index(t2, p2)
    assert rand_index(t, p) == rand_index(p, t)
    assert mutual_information(t, p)[0] == pytest.approx(mutual_information(t2, p2)[0], abs=1e-12)


# ----------------------------------------------------------------- entropy

def test_entropy_examples():
    assert entropy([4, 4, 4]) == 0.0
    assert entropy([0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    assert entropy([0, 1, 2, 3] * 3) == pytest.approx(math.log(4), abs=1e-15)


def test_entropy_empty():
    with pytest.raises(DomainError):
        entropy([])


# -------------------------------------------------------- mutual information

def test_mi_constant_prediction():
    raw, _ = mutual_information([0, 1, 2, 0], [5, 5, 5, 5])
    assert raw == 0.0


def test_mi_self_equals_entropy():
    t = [0, 0, 1, 2, 2, 2]
    raw, norm = mutual_information(t, t)
    assert raw == pytest.approx(entropy(t), abs=1e-15)
    assert norm == pytest.approx(1.0, abs=1e-15)


def test_mi_independent():
    raw, norm = mutual_information([0, 0, 1, 1], [0, 1, 0, 1])
    assert abs(raw) < 1e-15 and abs(norm) < 1e-15


def test_mi_both_constant_normalises_to_one():
    assert mutual_information([1, 1, 1], [2, 2, 2]) == (0.0, 1.0)


def test_mi_errors():
    with pytest.raises(DomainError):
        mutual_information([0, 1], [0])
    with pytest.raises(DomainError):
        mutual_information([], [])


@given(labelings)
def test_mi_matches_count_oracle(pair):
    t, p = pair
    raw, norm = mutual_information(t, p)
    ref = mutual_information_counts(t, p)
    assert abs(raw - ref) < 1e-12
    denom = (entropy_counts(t) + entropy_counts(p)) / 2
    assert abs(norm - (ref / denom if denom else 1.0)) < 1e-12
    assert 0.0 <= norm <= 1.0


# ---------------------------------------------------------------- accuracy

def test_accuracy_examples():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([1, 0, 1], [1, 1, 1]) == pytest.approx(2 / 3)
    t = np.array([1, 0, 1, 1, 0])
    p = np.array([1, 1, 0, 1, 0])
    assert accuracy(t, 1 - p) == pytest.approx(1 - accuracy(t, p))


def test_accuracy_multilabel_is_cell_mean():
    t = np.array([[1, 0], [0, 0]])
    p = np.array([[1, 1], [0, 0]])
    assert accuracy(t, p) == 0.75


def test_accuracy_errors():
    with pytest.raises(DomainError):
        accuracy([], [])
    with pytest.raises(DimensionError):
        accuracy([1, 0], [1])


def test_binarize_threshold_and_top_n():
    assert binarize([0.2, 0.5, 0.9]).tolist() == [0, 1, 1]
    s = np.array([[0.1, 0.9], [0.8, 0.2], [0.5, 0.5]])
    assert binarize_top_n(s, 1).tolist() == [[0, 1], [1, 0], [0, 0]]


# ------------------------------------------------------------------ ROC AUC

def test_auc_examples():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert roc_auc([1, 0, 1, 0], [0.3] * 4) == 0.5
    assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1]) == 0.75


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(UndefinedMetricError):
        roc_auc_ranksum([0, 0], [0.1, 0.2])


def test_auc_rejects_nonbinary():
    with pytest.raises(DomainError):
        roc_auc([0, 2, 1], [0.1, 0.2, 0.3])


scored = st.integers(2, 25).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 6).map(lambda v: v / 6), min_size=n, max_size=n)))


@given(scored)
def test_auc_trapezoid_rank_sum_and_pairs_agree(case):
    t, s = case
    if len(set(t)) < 2:
        return
    a = roc_auc(t, s)
    assert abs(a - auc_pairs(t, s)) < 1e-12
    assert abs(a - roc_auc_ranksum(t, s)) < 1e-12


@given(scored)
def test_auc_symmetry_and_monotone_invariance(case):
    t, s = case
    if len(set(t)) < 2:
        return
    s = np.array(s)
    assert roc_auc(t, s) + roc_auc(t, -s) == 1.0
    assert roc_auc(t, np.exp(3 * s) - 7) == roc_auc(t, s)


def test_roc_curve_shape(rng):
    t = rng.integers(0, 2, size=40)
    t[:2] = [0, 1]
    c = roc_curve(t, rng.random(40).round(1))
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0)
    assert (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    auc, curve = roc_auc(t, rng.random(40), return_curve=True)
    assert 0 <= auc <= 1 and len(curve.points()) >= 2


# ------------------------------------------------------------- multi-label

def test_multi_identical_columns(rng):
    col_t = rng.integers(0, 2, size=15)
    col_t[:2] = [0, 1]
    col_s = rng.random(15)
    T = np.tile(col_t[:, None], (1, 7))
    S = np.tile(col_s[:, None], (1, 7))
    single = roc_auc(col_t, col_s)
    assert roc_auc_multi(T, S, "micro") == pytest.approx(single, abs=1e-15)
    assert roc_auc_multi(T, S, "macro") == pytest.approx(single, abs=1e-15)


def test_multi_perfect_scores(rng):
    T = rng.integers(0, 2, size=(20, 7))
    T[0], T[1] = 0, 1
    assert roc_auc_multi(T, T.astype(float), "micro") == 1.0
    assert roc_auc_multi(T, T.astype(float), "macro") == 1.0


def test_micro_matches_pooled_pair_oracle():
    for seed in range(10):
        r = np.random.default_rng(seed)
        T = r.integers(0, 2, size=(20, 7))
        S = r.random((20, 7)).round(2)
        assert abs(roc_auc_multi(T, S, "micro") - auc_pairs(T.ravel().tolist(), S.ravel().tolist())) < 1e-12


def test_macro_skips_degenerate_column(rng, caplog):
    T = rng.integers(0, 2, size=(12, 7))
    T[0], T[1] = 0, 1
    T[:, 3] = 0
    S = rng.random((12, 7))
    per = per_type_auc(T, S)
    assert per[3] is None
    assert "single-class" in caplog.text
    expect = np.mean([v for v in per if v is not None])
    assert roc_auc_multi(T, S, "macro") == pytest.approx(expect)


def test_macro_all_degenerate():
    with pytest.raises(UndefinedMetricError):
        roc_auc_multi(np.zeros((4, 7), int), np.zeros((4, 7)), "macro")


def test_multi_bad_mode_and_shape(rng):
    with pytest.raises(DomainError):
        roc_auc_multi(np.eye(7, dtype=int), np.eye(7), "weighted")
    with pytest.raises(DimensionError):
        roc_auc_multi(np.eye(7, dtype=int), np.eye(6), "micro")


# ----------------------------------------------------------------- reports

def test_report_key_names(rng):
    T = rng.integers(0, 2, size=(30, 7))
    rep = prediction_report(T, rng.random((30, 7)))
    assert {"accuracy", "rocauc_micro", "rocauc_macro", "per_type", "n"} <= set(rep)
    assert list(rep["per_type"]) == ["Academic", "Sport", "Art", "Leadership", "Service", "Technology", "Other"]
    assert set(clustering_report([0, 1, 1], [1, 0, 0])) == {"rand_index", "mi_raw", "mi_normalized"}
