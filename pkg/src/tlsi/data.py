"""Behavior-log ingestion, leave-last-out sequences and negative sampling."""

from __future__ import annotations

import csv
import json
import logging
import os
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .temporal import DatasetClock

log = logging.getLogger(__name__)

PAD = 0


@dataclass(frozen=True)
class BehaviorEvent:
    user_id: int
    item_id: int
    category_id: int
    timestamp: int


@dataclass(frozen=True)
class BehaviorSequence:
    user_id: int
    history: tuple[BehaviorEvent, ...]
    target_item: int
    target_category: int
    target_time: int
    label: int


class Vocabulary:
    """Raw-id <-> dense-index maps for users, items and categories.

    Index 0 is reserved for padding / unknown in every map, so the first raw id
    seen gets index 1.
    """

    KINDS = ("user", "item", "category")

    def __init__(self):
        self.forward: dict[str, dict] = {k: {} for k in self.KINDS}
        self.reverse: dict[str, list] = {k: [None] for k in self.KINDS}
        self.item_category: list[int] = [PAD]

    def add(self, kind: str, raw) -> int:
        fwd = self.forward[kind]
        idx = fwd.get(raw)
        if idx is None:
            idx = len(self.reverse[kind])
            fwd[raw] = idx
            self.reverse[kind].append(raw)
            if kind == "item":
                self.item_category.append(PAD)
        return idx

    def lookup(self, kind: str, raw) -> int:
        return self.forward[kind].get(raw, PAD)

    def raw(self, kind: str, idx: int):
        if idx <= 0 or idx >= len(self.reverse[kind]):
            raise KeyError(f"no raw {kind} id for index {idx}")
        return self.reverse[kind][idx]

    def size(self, kind: str) -> int:
        """Number of indices including the reserved 0."""
        return len(self.reverse[kind])

    @property
    def n_items(self) -> int:
        return self.size("item")

    @property
    def n_categories(self) -> int:
        return self.size("category")

    def to_dict(self) -> dict:
        return {"reverse": {k: self.reverse[k][1:] for k in self.KINDS},
                "item_category": self.item_category[1:]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        v = cls()
        for kind in cls.KINDS:
            for raw in d["reverse"][kind]:
                v.add(kind, raw)
        v.item_category = [PAD] + list(d["item_category"])
        return v


def _parse_id(x):
    if isinstance(x, bool) or x is None:
        raise ValueError("bad id")
    if isinstance(x, int):
        return x
    if isinstance(x, str) and x != "":
        return x
    raise ValueError("bad id")


def _parse_ts(x) -> int:
    if isinstance(x, bool):
        raise ValueError("bad ts")
    if isinstance(x, int):
        ts = x
    elif isinstance(x, float) and x.is_integer():
        ts = int(x)
    elif isinstance(x, str) and x.strip().lstrip("-").isdigit():
        ts = int(x)
    else:
        raise ValueError("bad ts")
    if ts < 0:
        raise ValueError("negative ts")
    return ts


def _read_records(path: str):
    with open(path, newline="") as fh:
        first = fh.readline()
        fh.seek(0)
        if path.endswith(".csv") or first.strip().replace(" ", "") == "user,item,category,ts":
            reader = csv.DictReader(fh)
            for row in reader:
                yield row
            return
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                rec = None
            yield rec


def load_behavior_log(path: str, max_malformed_fraction: float = 0.01):
    """Parse a JSONL (or CSV) behavior log.

    Returns ``(events, vocab, clock)``; ``clock`` is None for an empty file.
    Malformed records are skipped and counted. More than
    ``max_malformed_fraction`` of them means the file is probably not a
    behavior log at all, and a ValueError is raised.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    vocab = Vocabulary()
    events: list[BehaviorEvent] = []
    total = bad = conflicts = 0
    for rec in _read_records(path):
        total += 1
        try:
            if not isinstance(rec, dict):
                raise ValueError("not an object")
            user, item, cat = _parse_id(rec["user"]), _parse_id(rec["item"]), _parse_id(rec["category"])
            ts = _parse_ts(rec["ts"])
        except (KeyError, ValueError, TypeError):
            bad += 1
            continue
        u, i, c = vocab.add("user", user), vocab.add("item", item), vocab.add("category", cat)
        if vocab.item_category[i] == PAD:
            vocab.item_category[i] = c
        elif vocab.item_category[i] != c:
            conflicts += 1
        events.append(BehaviorEvent(u, i, c, ts))
    if bad:
        log.warning("%s: skipped %d malformed of %d records", path, bad, total)
    if total and bad / total > max_malformed_fraction:
        raise ValueError(f"{path}: {bad} of {total} records malformed; is this a behavior log?")
    if conflicts:
        log.warning("%s: %d events disagree with their item's first category", path, conflicts)
    clock = DatasetClock.from_timestamps([e.timestamp for e in events]) if events else None
    return events, vocab, clock


def dump_jsonl(events: Iterable[BehaviorEvent], vocab: Vocabulary, path: str) -> None:
    with open(path, "w") as fh:
        for e in events:
            rec = {"user": vocab.raw("user", e.user_id), "item": vocab.raw("item", e.item_id),
                   "category": vocab.raw("category", e.category_id), "ts": int(e.timestamp)}
            fh.write(json.dumps(rec) + "\n")


def events_from_raw(records: Iterable[tuple]) -> tuple[list[BehaviorEvent], Vocabulary, DatasetClock]:
    """Build events from in-memory ``(user, item, category, ts)`` tuples."""
    vocab = Vocabulary()
    events = []
    for user, item, cat, ts in records:
        u, i, c = vocab.add("user", user), vocab.add("item", item), vocab.add("category", cat)
        if vocab.item_category[i] == PAD:
            vocab.item_category[i] = c
        events.append(BehaviorEvent(u, i, c, int(ts)))
    clock = DatasetClock.from_timestamps([e.timestamp for e in events]) if events else None
    return events, vocab, clock


def user_timelines(events: Sequence[BehaviorEvent]) -> dict[int, list[BehaviorEvent]]:
    """Per-user chronological event lists; equal timestamps keep input order."""
    by_user: dict[int, list[BehaviorEvent]] = defaultdict(list)
    for e in events:
        by_user[e.user_id].append(e)
    # sorted() is stable, so ties stay in input order
    return {u: sorted(evs, key=lambda e: e.timestamp) for u, evs in by_user.items()}


def make_positive(timeline: Sequence[BehaviorEvent], target_pos: int, max_len: int) -> BehaviorSequence:
    target = timeline[target_pos]
    history = tuple(timeline[max(0, target_pos - max_len):target_pos])
    return BehaviorSequence(target.user_id, history, target.item_id, target.category_id, target.timestamp, 1)


def build_sequences(events: Sequence[BehaviorEvent], max_len: int = 100, min_len: int = 5) -> list[BehaviorSequence]:
    """Leave-last-out positives: each user's final event is the target."""
    if not events:
        raise ValueError("no events to build sequences from")
    if max_len < 1 or min_len < 1:
        raise ValueError("max_len and min_len must be positive")
    out, dropped = [], 0
    for user, tl in sorted(user_timelines(events).items()):
        if len(tl) < min_len + 1:
            dropped += 1
            continue
        out.append(make_positive(tl, len(tl) - 1, max_len))
    log.info("built %d sequences, dropped %d users with fewer than %d events", len(out), dropped, min_len + 1)
    return out


def sample_negative(positive: BehaviorSequence, vocab: Vocabulary, rng: np.random.Generator,
                    exclude: Iterable[int] | None = None) -> BehaviorSequence | None:
    """Replace the target with a uniformly drawn item the user never clicked.

    ``exclude`` defaults to the items of the positive's history. Returns None
    (with a warning) when no admissible item remains.
    """
    n = vocab.n_items
    if n - 1 < 2:
        raise ValueError("need at least two items to sample negatives")
    banned = set(e.item_id for e in positive.history) if exclude is None else set(exclude)
    banned.add(positive.target_item)
    banned.discard(PAD)
    if len(banned) >= n - 1:
        log.warning("user %d interacted with every item; no negative drawn", positive.user_id)
        return None
    if len(banned) * 2 < n:
        while True:
            item = int(rng.integers(1, n))
            if item not in banned:
                break
    else:
        allowed = np.setdiff1d(np.arange(1, n), np.fromiter(banned, dtype=np.int64))
        item = int(allowed[rng.integers(0, allowed.size)])
    return BehaviorSequence(positive.user_id, positive.history, item, vocab.item_category[item],
                            positive.target_time, 0)


def user_bucket(raw_user) -> float:
    """Stable pseudo-uniform number in [0, 1) derived from the raw user id."""
    return (zlib.crc32(str(raw_user).encode()) % 10000) / 10000.0


@dataclass
class DatasetSplits:
    train: list[BehaviorSequence] = field(default_factory=list)
    valid: list[BehaviorSequence] = field(default_factory=list)
    test: list[BehaviorSequence] = field(default_factory=list)
    n_dropped_users: int = 0


def make_splits(events: Sequence[BehaviorEvent], vocab: Vocabulary, *, max_len: int = 100,
                min_len: int = 5, train_targets: int = 1, valid_fraction: float = 0.1,
                seed: int = 0) -> DatasetSplits:
    """Leave-last-out splits with one sampled negative per positive.

    The final event of each user is the test target. The ``train_targets``
    events before it (each with at least ``min_len`` prior events) become
    training targets; users whose id hashes below ``valid_fraction`` have those
    routed to the validation split instead.
    """
    if not events:
        raise ValueError("no events to build sequences from")
    rng = np.random.default_rng([seed, 7919])
    splits = DatasetSplits()
    for user, tl in sorted(user_timelines(events).items()):
        if len(tl) < min_len + 1:
            splits.n_dropped_users += 1
            continue
        seen = set(e.item_id for e in tl[:-1])
        last = len(tl) - 1
        _append_pair(splits.test, make_positive(tl, last, max_len), vocab, rng, seen)
        dest = splits.valid if user_bucket(vocab.raw("user", user)) < valid_fraction else splits.train
        for j in range(last - 1, max(min_len, last - train_targets) - 1, -1):
            pos = make_positive(tl, j, max_len)
            _append_pair(dest, pos, vocab, rng, set(e.item_id for e in tl[:j]))
    log.info("splits: %d train, %d valid, %d test examples; %d users dropped",
             len(splits.train), len(splits.valid), len(splits.test), splits.n_dropped_users)
    return splits


def _append_pair(dest, pos, vocab, rng, exclude):
    neg = sample_negative(pos, vocab, rng, exclude)
    if neg is None:
        return
    dest.append(pos)
    dest.append(neg)
