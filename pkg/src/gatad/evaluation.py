"""Segment-aware detection metrics and root-cause ranking.

Anomalies in the labels come as contiguous segments. The adjusted
protocols treat a segment as one event: if the detector fires anywhere in
a segment (or, in the delayed variant, within the first `delay` steps of
it), the whole segment counts as detected; otherwise the segment counts as
fully missed and any late alarms inside it are discarded. Flags outside
labeled segments are left alone, so false alarms still hurt precision.
Precision, recall, and F1 are then computed pointwise on the adjusted
flags.

Root-cause diagnosis ranks features by their per-feature score at the
highest-scoring timestamp inside an event; ranking quality is summarized
by hit rate at a percentage of the true-cause count and by NDCG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

Array = np.ndarray


@dataclass(frozen=True)
class EvalReport:
    """Pointwise detection quality after any protocol adjustment.

    The protocol tag is attached by whoever ran the adjustment; prf1
    itself never knows which flags it is fed.
    """

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    protocol: str | None = None


def label_segments(truth: Array) -> list[tuple[int, int]]:
    """Contiguous True runs of a boolean vector as [start, stop) pairs."""
    truth = np.asarray(truth, dtype=bool)
    if truth.ndim != 1:
        raise DataError(f"labels must be a vector, got shape {truth.shape}")
    padded = np.concatenate([[False], truth, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2], edges[1::2]))


def _check_aligned(pred: Array, truth: Array) -> tuple[Array, Array]:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DataError(
            f"flag vectors must align, got {pred.shape} vs {truth.shape}")
    return pred, truth


def point_adjust(pred: Array, truth: Array) -> Array:
    """Spread any hit inside a labeled segment over the whole segment."""
    pred, truth = _check_aligned(pred, truth)
    adjusted = pred.copy()
    for start, stop in label_segments(truth):
        adjusted[start:stop] = pred[start:stop].any()
    return adjusted


def delay_adjust(pred: Array, truth: Array, delay: int) -> Array:
    """Credit a segment only if it is hit within its first `delay` steps.

    A credited segment turns fully True; a segment first hit later than
    `delay` steps after its onset counts as missed and turns fully False.
    Flags outside segments are unchanged. A delay at least as long as every
    segment reproduces the plain adjustment.
    """
    pred, truth = _check_aligned(pred, truth)
    if delay < 0:
        raise ConfigError(f"delay must be non-negative, got {delay}")
    adjusted = pred.copy()
    for start, stop in label_segments(truth):
        window_stop = min(start + delay + 1, stop)
        adjusted[start:stop] = pred[start:window_stop].any()
    return adjusted


def prf1(pred: Array, truth: Array) -> EvalReport:
    """Pointwise precision, recall, F1; empty denominators give zero."""
    pred, truth = _check_aligned(pred, truth)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0
    return EvalReport(precision=precision, recall=recall, f1=f1,
                      tp=tp, fp=fp, fn=fn)


def event_peak(total: Array, offsets: Array,
               event_start: int, event_stop: int) -> int:
    """Index of the highest-total scored timestamp inside an event.

    Returns a row index into the score arrays, not a timestamp; ties break
    toward the earlier row.
    """
    total = np.asarray(total, dtype=np.float64)
    offsets = np.asarray(offsets)
    if len(total) != len(offsets):
        raise DataError("total and offsets must align")
    inside = np.flatnonzero((offsets >= event_start) & (offsets < event_stop))
    if inside.size == 0:
        raise DataError(
            f"no scored timestamps inside event [{event_start}, {event_stop})")
    return int(inside[np.argmax(total[inside])])


def diagnose(scores: Array, total: Array, offsets: Array,
             event_start: int, event_stop: int, top_m: int) -> Array:
    """Rank likely root-cause features for one labeled event.

    Looks at scored timestamps inside [event_start, event_stop), takes the
    one with the highest total score, and returns the indices of its top_m
    per-feature scores, highest first; ties break toward the lower feature
    index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    offsets = np.asarray(offsets)
    if scores.ndim != 2 or not (len(scores) == len(total) == len(offsets)):
        raise DataError("scores, total, and offsets must align")
    k = scores.shape[1]
    if not (1 <= top_m <= k):
        raise ConfigError(f"top_m must be in [1, {k}], got {top_m}")
    row = scores[event_peak(total, offsets, event_start, event_stop)]
    order = np.lexsort((np.arange(k), -row))
    return order[:top_m]


def _check_ranking(ranked, truth_features) -> tuple[list[int], set[int]]:
    ranked = [int(r) for r in ranked]
    if len(set(ranked)) != len(ranked):
        raise DataError("ranked features contain duplicates")
    truth = {int(f) for f in truth_features}
    if not truth:
        raise DataError("no ground-truth root causes to rank against")
    return ranked, truth


def hitrate_at(ranked, truth_features, percent: float) -> float:
    """Fraction of true causes inside the top floor(percent% of them).

    percent is on a 100 scale; 150 inspects half again as many candidates
    as there are true causes.
    """
    if percent <= 0:
        raise ConfigError(f"percent must be positive, got {percent}")
    ranked, truth = _check_ranking(ranked, truth_features)
    n_top = int(math.floor(percent / 100.0 * len(truth)))
    hits = len(set(ranked[:n_top]) & truth)
    return hits / len(truth)


def ndcg_at(ranked, truth_features, cutoff: int = 5) -> float:
    """Binary-relevance NDCG of the ranking's first `cutoff` entries."""
    if cutoff < 1:
        raise ConfigError(f"cutoff must be positive, got {cutoff}")
    ranked, truth = _check_ranking(ranked, truth_features)
    dcg = sum(1.0 / math.log2(i + 2)
              for i, f in enumerate(ranked[:cutoff]) if f in truth)
    ideal = sum(1.0 / math.log2(i + 2)
                for i in range(min(cutoff, len(truth))))
    return dcg / ideal
