import json

import numpy as np
import pytest
from scipy import stats

from tlsi.data import (BehaviorEvent, BehaviorSequence, Vocabulary, build_sequences, events_from_raw,
                       load_behavior_log, make_splits, sample_negative)


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")


def timeline(user, n, start=1000, item_base=1):
    return [(user, item_base + k, "c", start + 10 * k) for k in range(n)]


def test_load_three_lines(tmp_path):
    p = tmp_path / "log.jsonl"
    write_jsonl(p, [{"user": "u", "item": i, "category": "c", "ts": t} for i, t in [(1, 500), (2, 100), (3, 300)]])
    events, vocab, clock = load_behavior_log(str(p))
    assert len(events) == 3
    assert (clock.t_s, clock.span_seconds) == (100, 400)
    assert vocab.n_items == 4  # three items plus the padding index


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    events, _, clock = load_behavior_log(str(p))
    assert events == [] and clock is None
    with pytest.raises(ValueError):
        build_sequences(events)


def test_malformed_lines_are_counted_and_skipped(tmp_path):
    p = tmp_path / "log.jsonl"
    good = [{"user": 1, "item": k, "category": 1, "ts": k} for k in range(200)]
    write_jsonl(p, good + [{"user": 1, "item": 5, "category": 1}])
    events, _, _ = load_behavior_log(str(p))
    assert len(events) == 200
    write_jsonl(p, good[:10] + ["not json", {"user": 1}])
    with pytest.raises(ValueError, match="malformed"):
        load_behavior_log(str(p))


def test_load_csv(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user,item,category,ts\na,x,c1,10\na,y,c2,20\n")
    events, vocab, _ = load_behavior_log(str(p))
    assert [vocab.raw("item", e.item_id) for e in events] == ["x", "y"]


def test_vocabulary_round_trip():
    events, vocab, _ = events_from_raw([("u1", "i1", "c1", 5), (7, 8, 9, 6), ("u1", "i2", "c1", 7)])
    for e, raw in zip(events, [("u1", "i1", "c1"), (7, 8, 9), ("u1", "i2", "c1")]):
        assert (vocab.raw("user", e.user_id), vocab.raw("item", e.item_id), vocab.raw("category", e.category_id)) == raw
    again = Vocabulary.from_dict(json.loads(json.dumps(vocab.to_dict())))
    assert again.to_dict() == vocab.to_dict()
    assert again.item_category == vocab.item_category


def test_leave_last_out_example():
    events, vocab, _ = events_from_raw([("u", "A", "c", 1), ("u", "B", "c", 2), ("u", "C", "c", 3)])
    (seq,) = build_sequences(events, max_len=100, min_len=1)
    assert [vocab.raw("item", e.item_id) for e in seq.history] == ["A", "B"]
    assert vocab.raw("item", seq.target_item) == "C" and seq.label == 1


def test_single_event_user_dropped():
    events, _, _ = events_from_raw([("u", "A", "c", 1), ("v", "A", "c", 1), ("v", "B", "c", 2)])
    seqs = build_sequences(events, min_len=1)
    assert len(seqs) == 1


def test_truncation_keeps_most_recent():
    events, vocab, _ = events_from_raw(timeline("u", 150))
    (seq,) = build_sequences(events, max_len=100)
    assert [vocab.raw("item", e.item_id) for e in seq.history] == list(range(50, 150))
    assert vocab.raw("item", seq.target_item) == 150


def test_histories_sorted_and_bounded():
    rng = np.random.default_rng(0)
    recs = [(int(u), int(i), 0, int(t)) for u, i, t in zip(rng.integers(0, 20, 3000), rng.integers(0, 50, 3000),
                                                             rng.integers(0, 10**6, 3000))]
    events, _, _ = events_from_raw(recs)
    for seq in build_sequences(events, max_len=30, min_len=3):
        ts = [e.timestamp for e in seq.history]
        assert ts == sorted(ts) and len(ts) <= 30 and ts[-1] <= seq.target_time


def test_negative_excludes_history():
    events, vocab, _ = events_from_raw([("u", "A", "c", 1), ("u", "C", "c", 2), ("z", "B", "c", 3)])
    pos = BehaviorSequence(1, (events[0],), vocab.lookup("item", "C"), 1, 2, 1)
    for s in range(20):
        neg = sample_negative(pos, vocab, np.random.default_rng(s))
        assert vocab.raw("item", neg.target_item) == "B" and neg.label == 0
    a = sample_negative(pos, vocab, np.random.default_rng(5))
    b = sample_negative(pos, vocab, np.random.default_rng(5))
    assert a == b


def test_negative_none_when_catalog_exhausted():
    events, vocab, _ = events_from_raw([("u", "A", "c", 1), ("u", "B", "c", 2)])
    pos = BehaviorSequence(1, (events[0],), events[1].item_id, 1, 2, 1)
    assert sample_negative(pos, vocab, np.random.default_rng(0)) is None


def test_negative_sampling_is_uniform():
    n_items = 200
    events, vocab, _ = events_from_raw([("u", k, "c", k) for k in range(n_items)])
    hist = tuple(events[:20])
    pos = BehaviorSequence(1, hist, events[20].item_id, 1, 100, 1)
    rng = np.random.default_rng(0)
    draws = [sample_negative(pos, vocab, rng).target_item for _ in range(10_000)]
    allowed = sorted(set(range(1, vocab.n_items)) - {e.item_id for e in hist} - {pos.target_item})
    counts = np.array([draws.count(i) for i in allowed])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_splits_balanced_and_negatives_unseen():
    rng = np.random.default_rng(1)
    recs = []
    for u in range(60):
        for k in range(int(rng.integers(3, 15))):
            recs.append((u, int(rng.integers(0, 80)), 0, 1000 * k + u))
    events, vocab, _ = events_from_raw(recs)
    splits = make_splits(events, vocab, max_len=10, min_len=2, train_targets=2, valid_fraction=0.2, seed=3)
    for part in (splits.train, splits.valid, splits.test):
        labels = [s.label for s in part]
        assert labels.count(1) == labels.count(0)
        for s in part:
            if s.label == 0:
                assert s.target_item not in {e.item_id for e in s.history}
    again = make_splits(events, vocab, max_len=10, min_len=2, train_targets=2, valid_fraction=0.2, seed=3)
    assert again.train == splits.train and again.test == splits.test
    # test targets are each user's last event; training targets come strictly earlier
    last = {}
    for e in events:
        last[e.user_id] = max(last.get(e.user_id, 0), e.timestamp)
    assert all(s.target_time == last[s.user_id] for s in splits.test)
    assert all(s.target_time < last[s.user_id] for s in splits.train + splits.valid)


def test_event_fields():
    e = BehaviorEvent(1, 2, 3, 4)
    with pytest.raises(AttributeError):
        e.user_id = 5
