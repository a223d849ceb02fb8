import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtsad.metrics import auc, f1_score, point_adjust, precision_recall_f1, true_segments


def test_perfect_prediction():
    truth = np.array([0, 1, 1, 0, 1])
    assert precision_recall_f1(truth, truth) == (1.0, 1.0, 1.0)


def test_f1_from_reported_operating_point():
    # harmonic mean at precision .9506, recall .8910
    assert f1_score(0.9506, 0.8910) == pytest.approx(0.9198, abs=1e-4)


def test_no_predicted_positives_zero_convention():
    pred = np.zeros(6)
    truth = np.array([0, 1, 0, 1, 0, 0])
    assert precision_recall_f1(pred, truth) == (0.0, 0.0, 0.0)


def test_counts_against_hand_case():
    pred = np.array([1, 1, 0, 0, 1, 0])
    truth = np.array([1, 0, 1, 0, 1, 0])
    prec, rec, f1 = precision_recall_f1(pred, truth)
    assert prec == pytest.approx(2 / 3)
    assert rec == pytest.approx(2 / 3)
    assert f1 == pytest.approx(2 / 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_f1_between_min_and_max_when_positive(pairs):
    pred = np.array([p for p, _ in pairs], dtype=np.int8)
    truth = np.array([t for _, t in pairs], dtype=np.int8)
    prec, rec, f1 = precision_recall_f1(pred, truth)
    if prec > 0 and rec > 0:
        assert min(prec, rec) - 1e-12 <= f1 <= max(prec, rec) + 1e-12


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def test_auc_perfect_separation():
    scores = np.array([0.1, 0.2, 0.9, 0.8])
    truth = np.array([0, 0, 1, 1])
    assert auc(scores, truth) == 1.0


def test_auc_all_ties_half():
    scores = np.ones(10)
    truth = np.array([0, 1] * 5)
    assert auc(scores, truth) == pytest.approx(0.5)


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        auc(np.arange(4.0), np.zeros(4))


def test_auc_matches_pair_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        scores = rng.integers(0, 6, size=20).astype(float)  # force ties
        truth = rng.integers(0, 2, size=20)
        if truth.sum() in (0, 20):
            truth[0] = 1 - truth[0]
        pos = scores[truth == 1]
        neg = scores[truth == 0]
        wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
        assert auc(scores, truth) == pytest.approx(wins / (len(pos) * len(neg)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(30)
    truth = rng.integers(0, 2, 30)
    if truth.sum() in (0, 30):
        truth[0] = 1 - truth[0]
    a1 = auc(scores, truth)
    a2 = auc(np.exp(2.0 * scores) + 5.0, truth)
    assert a1 == pytest.approx(a2)


# ---------------------------------------------------------------------------
# Point adjustment
# ---------------------------------------------------------------------------


def test_point_adjust_fills_hit_segment():
    truth = np.zeros(12, dtype=np.int8)
    truth[5:10] = 1
    pred = np.zeros(12, dtype=np.int8)
    pred[7] = 1
    adjusted = point_adjust(pred, truth)
    assert adjusted[5:10].all()
    assert adjusted.sum() == 5


def test_point_adjust_untouched_without_hit():
    truth = np.zeros(10, dtype=np.int8)
    truth[2:5] = 1
    pred = np.zeros(10, dtype=np.int8)
    pred[8] = 1
    adjusted = point_adjust(pred, truth)
    assert not adjusted[2:5].any()
    assert adjusted[8] == 1


def test_point_adjust_idempotent():
    rng = np.random.default_rng(1)
    truth = (rng.uniform(size=50) < 0.3).astype(np.int8)
    pred = (rng.uniform(size=50) < 0.2).astype(np.int8)
    once = point_adjust(pred, truth)
    twice = point_adjust(once, truth)
    assert np.array_equal(once, twice)


def test_point_adjust_never_decreases_tp_never_adds_fp_outside():
    rng = np.random.default_rng(2)
    for _ in range(20):
        truth = (rng.uniform(size=60) < 0.25).astype(np.int8)
        pred = (rng.uniform(size=60) < 0.25).astype(np.int8)
        adjusted = point_adjust(pred, truth)
        assert ((adjusted == 1) & (pred == 1) & (truth == 1)).sum() >= 0
        assert (adjusted & pred & truth).sum() >= (pred & truth).sum() - 0
        outside = truth == 0
        assert np.array_equal(adjusted[outside], pred[outside].astype(np.int8))


def test_true_segments_extraction():
    truth = np.array([1, 1, 0, 0, 1, 0, 1, 1, 1])
    assert true_segments(truth) == [(0, 1), (4, 4), (6, 8)]
