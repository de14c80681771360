"""Evaluation metrics: weighted F1 and recall@k for multi-label diagnosis,
rank-based AUC and F1 for the binary task.

Conventions: probability >= 0.5 counts as a positive prediction; top-k
ranking sorts by (-probability, label index) so ties break toward the lower
index, stably.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyEvaluation


def _as_multi_hot(truths, num_labels: int) -> np.ndarray:
    arr = np.zeros((len(truths), num_labels), dtype=bool)
    for i, t in enumerate(truths):
        for label in t:
            arr[i, int(label)] = True
    return arr


def weighted_f1(probs: np.ndarray, truths, threshold: float = 0.5) -> float:
    """Support-weighted mean of per-label F1 at the decision threshold.

    `truths` is either a boolean/0-1 matrix shaped like `probs` or a list of
    label-id collections.  Labels with zero truth support carry zero weight.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyEvaluation("no predictions to score")
    truth = np.asarray(truths, dtype=bool) if isinstance(truths, np.ndarray) \
        else _as_multi_hot(truths, probs.shape[1])
    if truth.shape != probs.shape:
        raise EmptyEvaluation(f"truth shape {truth.shape} != predictions {probs.shape}")
    pred = probs >= threshold
    tp = np.sum(pred & truth, axis=0, dtype=np.float64)
    fp = np.sum(pred & ~truth, axis=0, dtype=np.float64)
    fn = np.sum(~pred & truth, axis=0, dtype=np.float64)
    support = truth.sum(axis=0, dtype=np.float64)
    if support.sum() == 0:
        raise EmptyEvaluation("no positive labels in truth")
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)
    return float((f1 * support).sum() / support.sum())


def top_k_indices(row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest probabilities, ties toward lower index."""
    order = np.lexsort((np.arange(row.shape[0]), -row))
    return order[:k]


def recall_at_k(probs: np.ndarray, truths, k: int) -> float:
    """Mean over patients of |top-k predictions ∩ truth| / |truth|; patients
    with empty truth are skipped."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyEvaluation("no predictions to score")
    truth = np.asarray(truths, dtype=bool) if isinstance(truths, np.ndarray) \
        else _as_multi_hot(truths, probs.shape[1])
    scores = []
    for i in range(probs.shape[0]):
        t = np.flatnonzero(truth[i])
        if t.size == 0:
            continue
        top = top_k_indices(probs[i], k)
        scores.append(np.isin(top, t).sum() / t.size)
    if not scores:
        raise EmptyEvaluation("every patient had an empty truth set")
    return float(np.mean(scores))


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outranks a random negative, with tied
    scores at their mean rank (equivalently, ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape or scores.size == 0:
        raise EmptyEvaluation("scores and labels must be equal-length and non-empty")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EmptyEvaluation(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    rank = 1.0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        mean_rank = (rank + rank + (j - i)) / 2.0
        ranks[order[i:j + 1]] = mean_rank
        rank += j - i + 1
        i = j + 1
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def binary_f1(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape or scores.size == 0:
        raise EmptyEvaluation("scores and labels must be equal-length and non-empty")
    pred = scores >= threshold
    tp = float(np.sum(pred & labels))
    fp = float(np.sum(pred & ~labels))
    fn = float(np.sum(~pred & labels))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom > 0 else 0.0


def diagnosis_report(probs: np.ndarray, truths,
                     ks: tuple[int, ...] = (10, 20)) -> dict[str, float]:
    report = {"weighted_f1": weighted_f1(probs, truths)}
    for k in ks:
        report[f"recall_at_{k}"] = recall_at_k(probs, truths, k)
    return report


def hf_report(scores: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    return {"auc": auc(scores, labels), "f1": binary_f1(scores, labels)}
