"""Synthetic click logs with planted periodic and time-of-day interests.

Each user likes 2-4 categories. A category may recur with a period (every
``p`` days, each gap jittered within +-10% of ``p``), may only fire at given
hours of the day, or both. Noise events swap the item for one from a category
the user does not like, keeping the timestamp.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import BehaviorEvent
from .temporal import SECONDS_PER_DAY, decompose_many

JITTER = 0.1


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 400
    n_categories: int = 20
    # category index -> period in days / allowed hours of day
    period_days: dict[int, float] = field(default_factory=dict)
    active_hours: dict[int, tuple[int, ...]] = field(default_factory=dict)
    noise_rate: float = 0.1
    seed: int = 0
    horizon_days: float = 60.0
    start_ts: int = 1672531200  # 2023-01-01T00:00:00Z
    min_prefs: int = 2
    max_prefs: int = 4
    favorites: int = 0  # items a user draws from per liked category; 0 = the whole category
    popularity_skew: float = 1.0
    background_gap_days: float = 3.0

    def validate(self) -> None:
        if self.n_categories < 1:
            raise ValueError("spec needs at least one category")
        if self.n_users < 1:
            raise ValueError("spec needs at least one user")
        if self.n_items < self.n_categories:
            raise ValueError("need at least one item per category")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        if not 1 <= self.min_prefs <= self.max_prefs:
            raise ValueError("need 1 <= min_prefs <= max_prefs")
        if self.max_prefs > self.n_categories:
            raise ValueError("max_prefs exceeds the number of categories")
        if self.noise_rate > 0 and self.max_prefs >= self.n_categories:
            raise ValueError("noise needs at least one non-preferred category")
        if self.horizon_days <= 0 or self.background_gap_days <= 0:
            raise ValueError("horizon_days and background_gap_days must be positive")
        if self.favorites < 0:
            raise ValueError("favorites must be non-negative")
        for c, p in self.period_days.items():
            if not 0 <= c < self.n_categories:
                raise ValueError(f"period given for unknown category {c}")
            if p is not None and p <= 0:
                raise ValueError(f"period of category {c} must be positive")
        for c, hours in self.active_hours.items():
            if not 0 <= c < self.n_categories:
                raise ValueError(f"active hours given for unknown category {c}")
            if hours is not None and (not hours or any(not 0 <= h <= 23 for h in hours)):
                raise ValueError(f"active hours of category {c} must be a non-empty subset of 0..23")

    def to_json(self) -> str:
        d = asdict(self)
        d["period_days"] = {str(k): v for k, v in sorted(self.period_days.items())}
        d["active_hours"] = {str(k): list(v) for k, v in sorted(self.active_hours.items())}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["period_days"] = {int(k): float(v) for k, v in d.get("period_days", {}).items()}
        d["active_hours"] = {int(k): tuple(int(h) for h in v) for k, v in d.get("active_hours", {}).items()}
        return cls(**d)

    @classmethod
    def patterned(cls, n_users: int = 2000, n_categories: int = 50, n_items: int | None = None,
                  noise_rate: float = 0.1, seed: int = 0, **kw) -> "SyntheticSpec":
        """Every category gets an integer period of 2-14 days and 1-2 active hours.

        The horizon defaults to 30 days, which keeps histories near 25 events.
        """
        kw.setdefault("horizon_days", 30.0)
        rng = np.random.default_rng([seed, 31337])
        periods = {c: float(rng.choice([2, 3, 4, 5, 7, 10, 14])) for c in range(n_categories)}
        hours = {}
        for c in range(n_categories):
            k = int(rng.integers(1, 3))
            hours[c] = tuple(sorted(int(h) for h in rng.choice(24, size=k, replace=False)))
        return cls(n_users=n_users, n_categories=n_categories,
                   n_items=n_items if n_items is not None else 20 * n_categories,
                   period_days=periods, active_hours=hours, noise_rate=noise_rate, seed=seed, **kw)


def category_weights(spec: SyntheticSpec) -> np.ndarray:
    w = 1.0 / np.arange(1, spec.n_categories + 1) ** spec.popularity_skew
    return w / w.sum()


def allocate_items(spec: SyntheticSpec) -> list[np.ndarray]:
    """Split item ids 0..n_items-1 into contiguous per-category blocks sized by popularity."""
    w = category_weights(spec)
    extra = spec.n_items - spec.n_categories
    share = w * extra
    counts = np.floor(share).astype(int)
    rest = extra - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rest]] += 1
    counts += 1
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return [np.arange(bounds[c], bounds[c + 1]) for c in range(spec.n_categories)]


def _hour_windows(lo: int, hi: int, hours) -> list[tuple[int, int]]:
    """Sub-intervals of [lo, hi] (inclusive seconds) whose hour of day is in ``hours``."""
    out = []
    for day in range(lo // SECONDS_PER_DAY, hi // SECONDS_PER_DAY + 1):
        base = day * SECONDS_PER_DAY
        for h in sorted(hours):
            a, b = max(lo, base + h * 3600), min(hi, base + h * 3600 + 3599)
            if a <= b:
                out.append((a, b))
    return out


def _uniform_in(windows, rng) -> int:
    sizes = np.array([b - a + 1 for a, b in windows], dtype=np.int64)
    k = int(rng.integers(0, sizes.sum()))
    i = int(np.searchsorted(np.cumsum(sizes), k, side="right"))
    return windows[i][0] + k - int(sizes[:i].sum())


def _draw(lo: int, hi: int, hours, rng) -> int | None:
    if hours is None:
        return int(rng.integers(lo, hi + 1))
    windows = _hour_windows(lo, hi, hours)
    if not windows:
        return None
    return _uniform_in(windows, rng)


def _category_times(spec: SyntheticSpec, cat: int, rng) -> list[int]:
    start = spec.start_ts
    end = start + int(spec.horizon_days * SECONDS_PER_DAY)
    period = spec.period_days.get(cat)
    hours = spec.active_hours.get(cat)
    times: list[int] = []
    if period is not None:
        p = period * SECONDS_PER_DAY
        t = _draw(start, start + int(p) - 1 if p >= 1 else start, hours, rng)
        if t is None:
            t = _draw(start, start + SECONDS_PER_DAY - 1, hours, rng)
        while t is not None and t < end:
            times.append(t)
            lo = t + int(np.ceil((1 - JITTER) * p))
            hi = t + int(np.floor((1 + JITTER) * p))
            nxt = _draw(lo, hi, hours, rng)
            if nxt is None:
                raise ValueError(f"category {cat}: no time in hours {hours} within +-10% of a {period}-day period")
            t = nxt
        return times
    mean_gap = spec.background_gap_days * SECONDS_PER_DAY
    t = start + float(rng.exponential(mean_gap))
    while t < end:
        if hours is None:
            times.append(int(t))
        else:
            day = int(t) // SECONDS_PER_DAY * SECONDS_PER_DAY
            h = int(rng.choice(sorted(hours)))
            cand = day + h * 3600 + int(rng.integers(0, 3600))
            if cand < end and (not times or cand > times[-1]):
                times.append(cand)
        t += float(rng.exponential(mean_gap))
    return times


def generate_synthetic(spec: SyntheticSpec) -> list[BehaviorEvent]:
    """Generate a click log; ids in the returned events are the raw synthetic ids.

    Users are numbered 0..n_users-1, categories 0..n_categories-1 and items
    0..n_items-1. Every draw comes from one generator seeded by ``spec.seed``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    cat_items = allocate_items(spec)
    item_cat = np.empty(spec.n_items, dtype=np.int64)
    for c, items in enumerate(cat_items):
        item_cat[items] = c
    weights = category_weights(spec)
    events: list[BehaviorEvent] = []
    for user in range(spec.n_users):
        n_prefs = int(rng.integers(spec.min_prefs, spec.max_prefs + 1))
        prefs = rng.choice(spec.n_categories, size=n_prefs, replace=False, p=weights)
        others = np.setdiff1d(np.arange(spec.n_categories), prefs)
        other_w = weights[others] / weights[others].sum() if others.size else None
        user_events = []
        for cat in sorted(int(c) for c in prefs):
            pool = cat_items[cat]
            if 0 < spec.favorites < pool.size:
                favs = rng.choice(pool, size=spec.favorites, replace=False)
            else:
                favs = pool
            for t in _category_times(spec, cat, rng):
                if spec.noise_rate > 0 and rng.random() < spec.noise_rate:
                    nc = int(rng.choice(others, p=other_w))
                    item = int(rng.choice(cat_items[nc]))
                else:
                    item = int(favs[rng.integers(0, favs.size)])
                user_events.append(BehaviorEvent(user, item, int(item_cat[item]), int(t)))
        user_events.sort(key=lambda e: e.timestamp)
        events.extend(user_events)
    return events


def validate_synthetic(events, spec: SyntheticSpec) -> list[str]:
    """Check planted constraints on noise-free data; returns violation messages."""
    problems: list[str] = []
    if spec.noise_rate != 0:
        problems.append("validator only applies to noise_rate == 0")
        return problems
    ts = np.array([e.timestamp for e in events], dtype=np.int64)
    hours = decompose_many(ts)[:, 4] if ts.size else np.array([], dtype=np.int64)
    last: dict[tuple[int, int], int] = {}
    for e, h in zip(events, hours):
        allowed = spec.active_hours.get(e.category_id)
        if allowed is not None and int(h) not in allowed:
            problems.append(f"user {e.user_id} category {e.category_id} at hour {h} not in {allowed}")
        p = spec.period_days.get(e.category_id)
        key = (e.user_id, e.category_id)
        if p is not None and key in last:
            gap = (e.timestamp - last[key]) / SECONDS_PER_DAY
            if not (1 - JITTER) * p - 1e-9 <= gap <= (1 + JITTER) * p + 1e-9:
                problems.append(f"user {e.user_id} category {e.category_id} gap {gap:.3f}d outside period {p}")
        last[key] = e.timestamp
    return problems


def to_records(events):
    return [{"user": e.user_id, "item": e.item_id, "category": e.category_id, "ts": e.timestamp} for e in events]
