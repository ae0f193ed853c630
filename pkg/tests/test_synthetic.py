import json

import numpy as np
import pytest

from tlsi.synthetic import (SyntheticSpec, allocate_items, generate_synthetic, to_records,
                            validate_synthetic)
from tlsi.temporal import SECONDS_PER_DAY, decompose_many


def small_spec(**kw):
    base = dict(n_users=40, n_items=60, n_categories=6, noise_rate=0.0, seed=3, horizon_days=40)
    base.update(kw)
    return SyntheticSpec(**base)


def test_period_gaps_within_jitter():
    spec = small_spec(period_days={3: 7.0})
    events = generate_synthetic(spec)
    last = {}
    gaps = []
    for e in events:
        if e.category_id == 3:
            if e.user_id in last:
                gaps.append((e.timestamp - last[e.user_id]) / SECONDS_PER_DAY)
            last[e.user_id] = e.timestamp
    assert gaps, "no user picked category 3"
    assert min(gaps) >= 6.3 and max(gaps) <= 7.7


def test_active_hours_respected():
    spec = small_spec(active_hours={2: (20,)}, period_days={2: 3.0})
    events = [e for e in generate_synthetic(spec) if e.category_id == 2]
    assert events
    hours = decompose_many([e.timestamp for e in events])[:, 4]
    assert set(hours.tolist()) == {20}


def test_validator_passes_on_noise_free_patterned_data():
    spec = SyntheticSpec.patterned(n_users=50, n_categories=8, noise_rate=0.0, seed=1)
    events = generate_synthetic(spec)
    assert validate_synthetic(events, spec) == []


def test_validator_detects_violation():
    spec = small_spec(active_hours={1: (5,)})
    events = generate_synthetic(spec)
    bad = [e for e in events if e.category_id != 1][:1]
    assert bad
    forged = events + [type(bad[0])(bad[0].user_id, bad[0].item_id, 1, bad[0].timestamp - bad[0].timestamp % 86400)]
    assert validate_synthetic(forged, spec)


def test_deterministic_per_seed():
    spec = small_spec(period_days={0: 2.0}, active_hours={1: (8, 9)}, noise_rate=0.2)
    assert generate_synthetic(spec) == generate_synthetic(spec)
    other = small_spec(period_days={0: 2.0}, active_hours={1: (8, 9)}, noise_rate=0.2, seed=4)
    assert generate_synthetic(spec) != generate_synthetic(other)


def test_every_user_present_and_sorted():
    spec = SyntheticSpec.patterned(n_users=30, n_categories=10, seed=2)
    events = generate_synthetic(spec)
    assert {e.user_id for e in events} == set(range(30))
    for u in range(30):
        ts = [e.timestamp for e in events if e.user_id == u]
        assert ts == sorted(ts)


def test_noise_reaches_non_preferred_categories():
    def cats_per_user(events):
        seen = {}
        for e in events:
            seen.setdefault(e.user_id, set()).add(e.category_id)
        return [len(c) for c in seen.values()]

    clean = small_spec(n_users=60, n_categories=20, n_items=200)
    assert max(cats_per_user(generate_synthetic(clean))) <= clean.max_prefs
    noisy = small_spec(n_users=60, n_categories=20, n_items=200, noise_rate=0.3)
    assert np.mean(cats_per_user(generate_synthetic(noisy))) > noisy.max_prefs


def test_item_allocation_covers_catalog():
    spec = small_spec(n_items=100, n_categories=7)
    blocks = allocate_items(spec)
    assert sum(b.size for b in blocks) == 100
    assert all(b.size >= 1 for b in blocks)
    assert np.array_equal(np.concatenate(blocks), np.arange(100))
    # popularity decreases with the category index
    assert blocks[0].size >= blocks[-1].size


def test_spec_validation():
    with pytest.raises(ValueError):
        small_spec(noise_rate=1.5).validate()
    with pytest.raises(ValueError):
        small_spec(period_days={99: 3.0}).validate()
    with pytest.raises(ValueError):
        small_spec(active_hours={0: (24,)}).validate()
    with pytest.raises(ValueError):
        small_spec(n_items=3).validate()


def test_spec_json_round_trip():
    spec = SyntheticSpec.patterned(n_users=10, n_categories=5, seed=9)
    again = SyntheticSpec.from_dict(json.loads(spec.to_json()))
    assert again == spec


def test_records_shape():
    events = generate_synthetic(small_spec(n_users=3))
    recs = to_records(events)
    assert set(recs[0]) == {"user", "item", "category", "ts"}
    assert len(recs) == len(events)
