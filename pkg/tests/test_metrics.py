import numpy as np
import pytest

from dualmar.errors import EmptyEvaluation
from dualmar.metrics import (auc, binary_f1, diagnosis_report, hf_report,
                             recall_at_k, top_k_indices, weighted_f1)

from util import (brute_auc, brute_binary_f1, brute_recall_at_k,
                  brute_weighted_f1, random_prediction_set)


def test_weighted_f1_perfect_prediction():
    probs = np.array([[0.9, 0.1, 0.8], [0.2, 0.7, 0.1]])
    truths = [{0, 2}, {1}]
    assert weighted_f1(probs, truths) == pytest.approx(1.0, abs=1e-12)


def test_weighted_f1_hand_value():
    # label 0: predicted {row0}, true {row0, row1} -> P=1, R=1/2, F1=2/3, support 2
    # label 1: predicted {row1}, true {row1} -> F1=1, support 1
    probs = np.array([[0.9, 0.1], [0.3, 0.8]])
    truths = [{0}, {0, 1}]
    expected = (2 * (2 / 3) + 1 * 1.0) / 3
    assert weighted_f1(probs, truths) == pytest.approx(expected, abs=1e-12)


def test_weighted_f1_requires_support():
    probs = np.array([[0.9, 0.1]])
    with pytest.raises(EmptyEvaluation):
        weighted_f1(probs, [set()])
    with pytest.raises(EmptyEvaluation):
        weighted_f1(np.zeros((0, 2)), [])


def test_top_k_ties_break_toward_lower_index():
    row = np.array([0.5, 0.5, 0.5, 0.9])
    assert top_k_indices(row, 2).tolist() == [3, 0]


def test_recall_at_k_hand_value():
    probs = np.array([[0.9, 0.8, 0.1, 0.0], [0.1, 0.2, 0.3, 0.4]])
    truths = [{0, 2}, {3}]
    # row0: top-2 {0,1} hits 1 of 2 -> 0.5; row1: top-2 {3,2} hits 1 of 1 -> 1.0
    assert recall_at_k(probs, truths, 2) == pytest.approx(0.75, abs=1e-12)


def test_recall_at_k_skips_empty_truths():
    probs = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert recall_at_k(probs, [{0}, set()], 1) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EmptyEvaluation):
        recall_at_k(probs, [set(), set()], 1)


def test_auc_hand_values():
    scores = np.array([0.1, 0.4, 0.35, 0.8])
    labels = np.array([0, 0, 1, 1])
    # pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss, (0.8 vs both) wins -> 3/4
    assert auc(scores, labels) == pytest.approx(0.75, abs=1e-12)
    assert auc(np.array([0.5, 0.5]), np.array([0, 1])) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(EmptyEvaluation):
        auc(np.array([0.5, 0.6]), np.array([1, 1]))


def test_binary_f1_hand_values():
    probs = np.array([0.9, 0.2, 0.7, 0.4])
    labels = np.array([1, 1, 0, 0])
    # threshold 0.5: TP=1, FP=1, FN=1 -> F1 = 2/4
    assert binary_f1(probs, labels) == pytest.approx(0.5, abs=1e-12)
    assert binary_f1(np.array([0.1]), np.array([0])) == 0.0


def test_metrics_match_brute_force_on_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(30):
        probs, truths = random_prediction_set(rng)
        assert weighted_f1(probs, truths) == pytest.approx(
            brute_weighted_f1(probs, truths), abs=1e-12)
        for k in (1, 3, 10):
            assert recall_at_k(probs, truths, k) == pytest.approx(
                brute_recall_at_k(probs, truths, k), abs=1e-12)
        n = probs.shape[0]
        scores = rng.random(n)
        labels = np.zeros(n, dtype=int)
        labels[rng.integers(0, n)] = 1
        if 0 < labels.sum() < n:
            assert auc(scores, labels) == pytest.approx(
                brute_auc(scores, labels), abs=1e-12)
            assert binary_f1(scores, labels) == pytest.approx(
                brute_binary_f1(scores, labels), abs=1e-12)


def test_diagnosis_report_keys():
    rng = np.random.default_rng(1)
    probs, truths = random_prediction_set(rng)
    report = diagnosis_report(probs, truths, ks=(2, 5))
    assert set(report) == {"weighted_f1", "recall_at_2", "recall_at_5"}
    assert report["weighted_f1"] == pytest.approx(weighted_f1(probs, truths), abs=1e-12)


def test_hf_report_keys():
    probs = np.array([0.9, 0.2, 0.7, 0.4])
    labels = np.array([1, 1, 0, 0])
    report = hf_report(probs, labels)
    assert set(report) == {"auc", "f1"}
    assert report["auc"] == pytest.approx(auc(probs, labels), abs=1e-12)
    assert report["f1"] == pytest.approx(binary_f1(probs, labels), abs=1e-12)
