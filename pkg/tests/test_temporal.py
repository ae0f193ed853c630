from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlsi.temporal import (N_FEATURES, DatasetClock, decompose, decompose_many, features_many, normalize,
                           raw_features, recompose, sim, time_features)

CLOCK = DatasetClock(1_600_000_000, 400 * 86400)


def datetime_oracle(t):
    d = datetime.fromtimestamp(int(t), tz=timezone.utc)
    return [d.year, d.month, d.day, d.weekday(), d.hour, d.minute, d.second]


def test_decompose_examples():
    assert decompose(0) == [1970, 1, 1, 3, 0, 0, 0]
    assert decompose(86400) == [1970, 1, 2, 4, 0, 0, 0]
    assert decompose(59) == [1970, 1, 1, 3, 0, 0, 59]
    with pytest.raises(ValueError):
        decompose(-1)


def test_decompose_matches_datetime_on_10k_timestamps():
    rng = np.random.default_rng(0)
    # up to year ~2400, including leap days and century rules
    ts = rng.integers(0, 13_500_000_000, 10_000)
    ts[:4] = [951782400, 951868800, 4107542400, 4107456000]  # 2000-02-29, 2000-03-01, 2100-03-01, 2100-02-28
    got = decompose_many(ts)
    want = np.array([datetime_oracle(t) for t in ts])
    np.testing.assert_array_equal(got, want)


def test_recompose_round_trip_10k():
    rng = np.random.default_rng(1)
    for t in rng.integers(0, 13_500_000_000, 10_000):
        assert recompose(decompose(int(t))) == t


def test_normalization_examples():
    assert time_features(CLOCK.t_s, CLOCK).normalized[0] == 0.0
    assert time_features(CLOCK.t_s + CLOCK.span_seconds, CLOCK).normalized[0] == 1.0
    noon = CLOCK.t_s - CLOCK.t_s % 86400 + 86400 + 12 * 3600
    f = time_features(noon, CLOCK)
    assert f.raw[5] == 12
    assert f.normalized[5] == pytest.approx(12 / 23)
    assert f.normalized.shape == (N_FEATURES,)


def test_timestamp_before_start_raises():
    with pytest.raises(ValueError):
        raw_features(np.array([CLOCK.t_s - 1]), CLOCK)


def test_features_stay_in_unit_interval():
    ts = np.linspace(CLOCK.t_s, CLOCK.t_s + CLOCK.span_seconds, 5000).astype(np.int64)
    f = features_many(ts, CLOCK)
    assert f.min() >= 0.0 and f.max() <= 1.0


def test_normalization_is_monotone():
    rng = np.random.default_rng(2)
    raw = raw_features(rng.integers(CLOCK.t_s, CLOCK.t_s + CLOCK.span_seconds, 2000), CLOCK)
    norm = normalize(raw, CLOCK)
    for j in range(N_FEATURES):
        order = np.argsort(raw[:, j], kind="stable")
        assert np.all(np.diff(norm[order, j]) >= 0)


def test_without_time_point_calendar_is_constant():
    f = features_many(np.array([CLOCK.t_s + 5, CLOCK.t_s + 99999]), CLOCK, time_point=False)
    assert np.all(f[:, 1:] == 1.0)
    assert f[1, 0] > f[0, 0]


def test_sim_24h_apart():
    t1 = CLOCK.t_s + 3 * 86400 + 5 * 3600 + 7 * 60 + 9
    s = sim(t1, t1 + 86400, CLOCK)
    assert s[5] == 0 and s[6] == 0 and s[7] == 0
    assert s[0] == pytest.approx(86400 / CLOCK.span_seconds, rel=0, abs=1e-15)


@given(st.integers(0, 400 * 86400), st.integers(0, 400 * 86400))
def test_sim_symmetric_and_zero_on_diagonal(a, b):
    t1, t2 = CLOCK.t_s + a, CLOCK.t_s + b
    assert np.array_equal(sim(t1, t2, CLOCK), sim(t2, t1, CLOCK))
    assert np.all(sim(t1, t1, CLOCK) == 0)
    assert sim(t1, t2, CLOCK).shape == (N_FEATURES,)


@given(st.integers(0, 200 * 86400), st.integers(0, 100 * 86400), st.integers(0, 100 * 86400))
def test_relative_coordinate_of_sim_is_shift_invariant(a, gap, shift):
    t1, t2 = CLOCK.t_s + a, CLOCK.t_s + a + gap
    assert sim(t1, t2, CLOCK)[0] == pytest.approx(sim(t1 + shift, t2 + shift, CLOCK)[0], rel=1e-12, abs=1e-15)


def test_clock_from_timestamps():
    clock = DatasetClock.from_timestamps([50, 10, 30])
    assert (clock.t_s, clock.span_seconds) == (10, 40)
    with pytest.raises(ValueError):
        DatasetClock.from_timestamps([])
