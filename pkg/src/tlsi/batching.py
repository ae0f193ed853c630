"""Padded array encoding of behavior sequences.

Histories are right-padded: position ``k < length`` holds the k-th oldest
behavior of the window, later positions are padding and are excluded by
``mask``. Because the recurrence is causal, padding after the last real step
never influences a real hidden state, so no state blending is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import BehaviorSequence
from .temporal import N_FEATURES, DatasetClock, features_many


@dataclass
class WindowArrays:
    items: np.ndarray      # [N, L] int
    cats: np.ndarray       # [N, L] int
    times: np.ndarray      # [N, L] int, padding repeats the last real timestamp
    mask: np.ndarray       # [N, L] bool
    lengths: np.ndarray    # [N]
    feat: np.ndarray       # [N, L, 8] normalized features
    adj_sim: np.ndarray    # [N, L, 8] sim(t_{k-1}, t_k); first step sim(t_1, t_1) = 0
    span_sim: np.ndarray   # [N, L, 8] sim(t_k, t_p)

    def take(self, rows) -> "WindowArrays":
        lengths = self.lengths[rows]
        L = int(lengths.max())
        return WindowArrays(self.items[rows, :L], self.cats[rows, :L], self.times[rows, :L],
                            self.mask[rows, :L], lengths, self.feat[rows, :L],
                            self.adj_sim[rows, :L], self.span_sim[rows, :L])


@dataclass
class Batch:
    long: WindowArrays
    short: WindowArrays
    target_item: np.ndarray
    target_cat: np.ndarray
    target_time: np.ndarray
    target_feat: np.ndarray   # [B, 8]
    recency: np.ndarray       # [B] (t_p - t_last) / span
    labels: np.ndarray        # [B] float
    example_ids: np.ndarray   # [B] row index in the encoded dataset

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


def _encode_window(histories: list[tuple], target_times: np.ndarray, clock: DatasetClock,
                   time_point: bool) -> WindowArrays:
    n = len(histories)
    lengths = np.array([len(h) for h in histories], dtype=np.int64)
    if n and lengths.min() < 1:
        raise ValueError("every history needs at least one behavior")
    L = int(lengths.max()) if n else 1
    items = np.zeros((n, L), dtype=np.int64)
    cats = np.zeros((n, L), dtype=np.int64)
    times = np.zeros((n, L), dtype=np.int64)
    for r, hist in enumerate(histories):
        k = len(hist)
        items[r, :k] = [e.item_id for e in hist]
        cats[r, :k] = [e.category_id for e in hist]
        times[r, :k] = [e.timestamp for e in hist]
        times[r, k:] = hist[-1].timestamp
    mask = np.arange(L)[None, :] < lengths[:, None]
    feat = features_many(times, clock, time_point) if n else np.zeros((0, L, N_FEATURES))
    tfeat = features_many(target_times, clock, time_point) if n else np.zeros((0, N_FEATURES))
    adj = np.zeros_like(feat)
    adj[:, 1:] = np.abs(feat[:, 1:] - feat[:, :-1])
    span = np.abs(feat - tfeat[:, None, :])
    return WindowArrays(items, cats, times, mask, lengths, feat, adj, span)


class EncodedDataset:
    """All examples of one split, encoded once and sliced into batches."""

    def __init__(self, seqs: Sequence[BehaviorSequence], clock: DatasetClock, max_len: int = 100,
                 max_len_long: int | None = None, time_point: bool = True):
        if not seqs:
            raise ValueError("cannot encode an empty example list")
        max_len_long = max_len if max_len_long is None else max_len_long
        self.sequences = list(seqs)
        self.clock = clock
        self.max_len, self.max_len_long = max_len, max_len_long
        self.time_point = time_point
        self.target_item = np.array([s.target_item for s in seqs], dtype=np.int64)
        self.target_cat = np.array([s.target_category for s in seqs], dtype=np.int64)
        self.target_time = np.array([s.target_time for s in seqs], dtype=np.int64)
        self.labels = np.array([s.label for s in seqs], dtype=np.float64)
        last = np.array([s.history[-1].timestamp for s in seqs], dtype=np.int64)
        if np.any(self.target_time < last):
            raise ValueError("target time precedes the last behavior")
        self.recency_seconds = self.target_time - last
        self.recency = self.recency_seconds / clock.span_seconds
        self.target_feat = features_many(self.target_time, clock, time_point)
        self.long = _encode_window([s.history[-max_len_long:] for s in seqs], self.target_time, clock, time_point)
        if max_len_long == max_len:
            self.short = self.long
        else:
            self.short = _encode_window([s.history[-max_len:] for s in seqs], self.target_time, clock, time_point)

    def __len__(self) -> int:
        return len(self.sequences)

    def batch(self, rows) -> Batch:
        rows = np.asarray(rows, dtype=np.int64)
        long = self.long.take(rows)
        short = long if self.short is self.long else self.short.take(rows)
        return Batch(long, short, self.target_item[rows], self.target_cat[rows], self.target_time[rows],
                     self.target_feat[rows], self.recency[rows], self.labels[rows], rows)

    def batches(self, batch_size: int, order=None):
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])
