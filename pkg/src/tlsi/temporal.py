"""Timestamp decomposition and the 8-wide temporal feature vector.

A behavior at epoch second ``t`` is described by ``[t - t_s, year, month, day,
weekday, hour, minute, second]`` where ``t_s`` is the earliest timestamp of the
dataset. All calendar fields are proleptic Gregorian in UTC, weekday Monday=0.
The model never sees raw values; :func:`normalize` maps every component into
[0, 1] for timestamps inside the dataset range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CALENDAR = 7
N_FEATURES = N_CALENDAR + 1
FEATURE_NAMES = ("relative", "year", "month", "day", "weekday", "hour", "minute", "second")
SECONDS_PER_DAY = 86400

# month, day, weekday, hour, minute, second: (offset, divisor)
_CAL_SCALE = np.array([[1, 11], [1, 30], [0, 6], [0, 23], [0, 59], [0, 59]], dtype=np.float64)


def civil_from_days(days):
    """Days since 1970-01-01 -> (year, month, day), vectorized.

    Integer-only algorithm over 400-year eras, valid for the full int64 range
    of day counts that fit a Gregorian year.
    """
    z = np.asarray(days, dtype=np.int64) + 719468
    era = np.floor_divide(z, 146097)
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    day = doy - (153 * mp + 2) // 5 + 1
    month = np.where(mp < 10, mp + 3, mp - 9)
    year = yoe + era * 400 + (month <= 2)
    return year, month, day


def days_from_civil(year, month, day):
    """Inverse of :func:`civil_from_days`."""
    y = np.asarray(year, dtype=np.int64) - (np.asarray(month) <= 2)
    m = np.asarray(month, dtype=np.int64)
    era = np.floor_divide(y, 400)
    yoe = y - era * 400
    doy = (153 * np.where(m > 2, m - 3, m + 9) + 2) // 5 + np.asarray(day, dtype=np.int64) - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def decompose_many(ts) -> np.ndarray:
    """[N] epoch seconds -> [N, 7] int64 calendar components."""
    t = np.asarray(ts, dtype=np.int64)
    days = np.floor_divide(t, SECONDS_PER_DAY)
    sod = t - days * SECONDS_PER_DAY
    year, month, day = civil_from_days(days)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    return np.stack([year, month, day, weekday, sod // 3600, (sod // 60) % 60, sod % 60], axis=-1)


def decompose(t: int) -> list[int]:
    if t < 0:
        raise ValueError(f"timestamp must be non-negative, got {t}")
    return [int(v) for v in decompose_many(np.array([t]))[0]]


def recompose(components) -> int:
    year, month, day, _, hour, minute, second = (int(c) for c in components)
    return int(days_from_civil(year, month, day)) * SECONDS_PER_DAY + hour * 3600 + minute * 60 + second


@dataclass(frozen=True)
class DatasetClock:
    t_s: int
    span_seconds: int

    def __post_init__(self):
        if self.span_seconds < 1:
            raise ValueError("span_seconds must be >= 1")
        if self.t_s < 0:
            raise ValueError("t_s must be non-negative")

    @classmethod
    def from_timestamps(cls, ts) -> "DatasetClock":
        ts = np.asarray(ts, dtype=np.int64)
        if ts.size == 0:
            raise ValueError("cannot build a clock from no timestamps")
        lo, hi = int(ts.min()), int(ts.max())
        return cls(lo, max(1, hi - lo))

    @property
    def year_start(self) -> int:
        return decompose(self.t_s)[0]

    @property
    def year_span(self) -> int:
        return max(1, decompose(self.t_s + self.span_seconds)[0] - self.year_start)


@dataclass(frozen=True)
class TimeFeatures:
    raw: np.ndarray
    normalized: np.ndarray


def raw_features(ts, clock: DatasetClock) -> np.ndarray:
    t = np.asarray(ts, dtype=np.int64)
    if t.size and t.min() < clock.t_s:
        raise ValueError(f"timestamp {int(t.min())} precedes dataset start {clock.t_s}")
    rel = (t - clock.t_s).astype(np.float64)
    return np.concatenate([rel[..., None], decompose_many(t).astype(np.float64)], axis=-1)


def normalize(raw: np.ndarray, clock: DatasetClock) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = raw[..., 0] / clock.span_seconds
    out[..., 1] = (raw[..., 1] - clock.year_start) / clock.year_span
    out[..., 2:] = (raw[..., 2:] - _CAL_SCALE[:, 0]) / _CAL_SCALE[:, 1]
    return out


def features_many(ts, clock: DatasetClock, time_point: bool = True) -> np.ndarray:
    """Normalized [..., 8] features for an array of timestamps.

    With ``time_point=False`` the seven calendar components are replaced by a
    constant 1 so only the relative-time coordinate carries information.
    """
    feats = normalize(raw_features(ts, clock), clock)
    if not time_point:
        feats[..., 1:] = 1.0
    return feats


def time_features(t: int, clock: DatasetClock) -> TimeFeatures:
    raw = raw_features(np.array([t]), clock)[0]
    return TimeFeatures(raw=raw, normalized=normalize(raw, clock))


def sim(t1: int, t2: int, clock: DatasetClock) -> np.ndarray:
    """Elementwise |f(t1) - f(t2)| of the normalized feature vectors."""
    f = features_many(np.array([t1, t2]), clock)
    return np.abs(f[0] - f[1])
