"""AUC and logloss on plain arrays."""

from __future__ import annotations

import numpy as np

CLIP_EPS = 1e-7


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.concatenate([[True], xs[1:] != xs[:-1]]))
    ends = np.concatenate([starts[1:], [xs.size]])
    run_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty_like(xs)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(labels, scores) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"labels {y.shape} and scores {s.shape} differ")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative example")
    r = average_ranks(s)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(labels, predictions) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(predictions, dtype=np.float64), CLIP_EPS, 1.0 - CLIP_EPS)
    if y.size == 0:
        raise ValueError("logloss of an empty set")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
