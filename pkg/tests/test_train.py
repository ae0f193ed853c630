import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsi import autodiff as ad
from tlsi.batching import EncodedDataset
from tlsi.config import TrainConfig
from tlsi.data import events_from_raw, make_splits
from tlsi.metrics import auc, average_ranks, logloss
from tlsi.synthetic import SyntheticSpec, generate_synthetic, to_records
from tlsi.train import Adam, MissingGradient, epoch_batches, evaluate, prepare, train


def small_problem(n_users=40, seed=0, noise=0.1):
    spec = SyntheticSpec.patterned(n_users=n_users, n_categories=10, noise_rate=noise, seed=seed)
    recs = to_records(generate_synthetic(spec))
    return events_from_raw([(r["user"], r["item"], r["category"], r["ts"]) for r in recs])


def small_config(**kw):
    base = dict(epochs=2, batch_size=32, d_item=4, d_cat=4, d_hidden=8, mlp_hidden=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def pairwise_auc(y, s):
    pos = [v for v, t in zip(s, y) if t == 1]
    neg = [v for v, t in zip(s, y) if t == 0]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return credit / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert auc([1, 0], [0.5, 0.5]) == 0.5
    assert auc([1, 1, 0, 0], [0.9, 0.3, 0.5, 0.1]) == 0.75


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        auc([1, 1], [0.2, 0.3])


@settings(max_examples=1000, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31), st.integers(2, 12))
def test_auc_matches_pairwise(n, seed, levels):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[0], y[1] = 1, 0
    s = rng.integers(0, levels, n) / levels  # coarse grid forces ties
    assert auc(y, s) == pairwise_auc(y, s)


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


def test_metric_logloss_anchors():
    assert abs(logloss([1, 0, 1, 0], [0.5] * 4) - math.log(2)) <= 1e-9
    assert abs(logloss([1, 0], [0.8, 0.4]) - 0.36699) <= 1e-4
    assert np.isfinite(logloss([1, 0], [0.0, 1.0]))


def test_adam_first_step():
    p = ad.Parameter("theta", [1.0])
    p.node.grad = np.array([2.0])
    p.touched = True
    Adam(lr=0.001).step([p])
    assert p.value[0] == pytest.approx(0.999, abs=1e-8)
    assert not p.touched and p.grad[0] == 0.0


def test_adam_zero_gradient_and_zero_lr():
    p = ad.Parameter("theta", [1.0, -2.0])
    p.touched = True
    Adam(lr=0.001).step([p])
    np.testing.assert_array_equal(p.value, [1.0, -2.0])
    p.node.grad = np.array([5.0, -3.0])
    p.touched = True
    Adam(lr=0.0).step([p])
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_refuses_untouched_parameters():
    p = ad.Parameter("orphan", [1.0])
    with pytest.raises(MissingGradient, match="orphan"):
        Adam().step([p])
    frozen = ad.Parameter("stat", [1.0], trainable=False)
    Adam().step([frozen])


def test_adam_clip_norm():
    p = ad.Parameter("theta", [0.0, 0.0])
    p.node.grad = np.array([30.0, 40.0])
    p.touched = True
    opt = Adam(lr=0.1)
    opt.step([p], clip_norm=5.0)
    np.testing.assert_allclose(opt.m["theta"], 0.1 * np.array([3.0, 4.0]))


def test_epoch_batches_partition():
    rng = np.random.default_rng(0)
    lengths = rng.integers(1, 40, 1000)
    for pool in (1, 4):
        batches = epoch_batches(lengths, 64, rng, pool)
        rows = np.concatenate(batches)
        assert sorted(rows.tolist()) == list(range(1000))
        assert all(len(b) <= 64 for b in batches)
    a = epoch_batches(lengths, 64, np.random.default_rng(3), 4)
    b = epoch_batches(lengths, 64, np.random.default_rng(3), 4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.fixture(scope="module")
def problem():
    return small_problem()


def test_training_is_deterministic(problem):
    events, vocab, clock = problem
    cfg = small_config()
    exp = prepare(events, vocab, clock, cfg)
    r1 = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories)
    r2 = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories)
    assert r1.loss_trace == r2.loss_trace
    for name, arr in r1.model.state_arrays().items():
        assert np.array_equal(arr, r2.model.state_arrays()[name]), name


def test_loss_trace_decreases(problem):
    events, vocab, clock = problem
    cfg = small_config(epochs=8)
    exp = prepare(events, vocab, clock, cfg)
    res = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories)
    assert res.loss_trace[-1] < res.loss_trace[0]
    assert all(b <= a + 0.02 for a, b in zip(res.loss_trace, res.loss_trace[1:]))


def test_small_set_is_memorized(problem):
    events, vocab, clock = problem
    splits = make_splits(events, vocab, valid_fraction=0.0, seed=0)
    ds = EncodedDataset(splits.train[:32], clock)
    cfg = small_config(epochs=80, lr=0.005)
    res = train(ds, cfg, vocab.n_items, vocab.n_categories)
    assert res.loss_trace[-1] < 0.05


def test_eval_is_batch_invariant_and_dumps(problem):
    events, vocab, clock = problem
    cfg = small_config(epochs=1)
    exp = prepare(events, vocab, clock, cfg)
    model = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories).model
    big = evaluate(model, exp.test_set, cfg, dump_gates=True, dump_attention=True)
    small = evaluate(model, exp.test_set, small_config(eval_batch_size=1))
    np.testing.assert_allclose(small.predictions, big.predictions, rtol=1e-12)
    n = len(exp.test_set)
    assert len(big.gate_rows) == n
    assert all(0.0 < a < 1.0 for _, a, _ in big.gate_rows)
    assert len(big.attention_rows) == int(exp.test_set.long.lengths.sum())
    per_example = {}
    for ex, _, a_c, a_t in big.attention_rows:
        c, t = per_example.get(ex, (0.0, 0.0))
        per_example[ex] = (c + a_c, t + a_t)
    assert all(abs(c - 1) < 1e-9 and abs(t - 1) < 1e-9 for c, t in per_example.values())
    assert big.n_pos == big.n_neg == n // 2


def test_predictions_are_probabilities(problem):
    events, vocab, clock = problem
    for variant in ("lstm", "tlsi-l", "tlsi-l-c", "tlsi-l-t", "tlsi-s", "tlsi-f", "tlsi-wo-tp", "meanpool"):
        cfg = small_config(epochs=1, variant=variant)
        exp = prepare(events, vocab, clock, cfg)
        model = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories).model
        report = evaluate(model, exp.test_set, cfg, dump_gates=True)
        assert np.all((report.predictions > 0) & (report.predictions < 1)), variant
        assert 0.0 <= report.auc <= 1.0
