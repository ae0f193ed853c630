import dataclasses

import numpy as np
import pytest

from tlsi.batching import EncodedDataset
from tlsi.config import VARIANTS
from tlsi.data import make_splits
from tlsi.model import TlsiModel
from tlsi.temporal import DatasetClock

from test_train import small_config, small_problem


@pytest.fixture(scope="module")
def sequences():
    events, vocab, clock = small_problem(n_users=20, seed=7)
    splits = make_splits(events, vocab, valid_fraction=0.0, seed=0)
    return splits.test, vocab, clock


def names(variant):
    return set(TlsiModel(small_config(variant=variant), 10, 5).params)


def test_parameter_sets_follow_variant():
    full = names("tlsi")
    assert {"long.W_c", "long.W_t", "short.W_h", "short.W_tdelta", "fusion.W_g"} <= full
    assert not any(n.startswith(("short.", "fusion.")) for n in names("tlsi-l"))
    assert not any(n.startswith(("long.", "fusion.")) for n in names("tlsi-s"))
    lstm = names("lstm")
    assert "short.W_f" in lstm and "short.W_h" not in lstm
    assert not any("delta" in n or n.endswith(("_s", "_ts", "_xs", "_s_o")) for n in lstm)
    assert "long.W_t" not in names("tlsi-l-c") and "long.W_c" not in names("tlsi-l-t")
    assert {n.split(".")[0] for n in names("meanpool")} == {"emb", "head"}
    assert names("tlsi-wo-tp") == full


def test_without_time_point_features_are_placeholders(sequences):
    seqs, _, clock = sequences
    plain = EncodedDataset(seqs, clock, time_point=True)
    blind = EncodedDataset(seqs, clock, time_point=False)
    assert np.all(blind.long.feat[..., 1:] == 1.0)
    assert np.all(blind.target_feat[:, 1:] == 1.0)
    np.testing.assert_array_equal(blind.long.feat[..., 0], plain.long.feat[..., 0])
    assert np.any(plain.long.feat[..., 1:] != 1.0)


def shifted(seqs, seconds):
    out = []
    for s in seqs:
        hist = tuple(dataclasses.replace(e, timestamp=e.timestamp - seconds) for e in s.history)
        out.append(dataclasses.replace(s, history=hist))
    return out


@pytest.mark.parametrize("variant,time_blind", [("tlsi-l-c", True), ("meanpool", True), ("tlsi-l-t", False),
                                                ("tlsi", False), ("tlsi-s", False)])
def test_history_times_reach_only_time_aware_variants(sequences, variant, time_blind):
    seqs, vocab, clock = sequences
    clock = DatasetClock(clock.t_s - 86400, clock.span_seconds + 86400)
    model = TlsiModel(small_config(variant=variant), vocab.n_items, vocab.n_categories)
    rows = np.arange(len(seqs))
    preds = [model.forward(EncodedDataset(s, clock).batch(rows)).pred.value
             for s in (seqs, shifted(seqs, 5 * 3600 + 17))]
    assert np.array_equal(preds[0], preds[1]) == time_blind


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shapes_and_dumps(sequences, variant):
    seqs, vocab, clock = sequences
    model = TlsiModel(small_config(variant=variant), vocab.n_items, vocab.n_categories)
    batch = EncodedDataset(seqs, clock).batch(np.arange(len(seqs)))
    out = model.forward(batch)
    assert out.pred.shape == (len(seqs),)
    assert (out.alpha is not None) == (variant in ("tlsi", "tlsi-wo-tp", "tlsi-f"))
    assert (out.a_c is not None) == (variant in ("tlsi", "tlsi-wo-tp", "tlsi-f", "tlsi-l", "tlsi-l-c"))
    assert (out.a_t is not None) == (variant in ("tlsi", "tlsi-wo-tp", "tlsi-f", "tlsi-l", "tlsi-l-t"))


def test_fusion_requires_matching_widths():
    with pytest.raises(ValueError):
        small_config(variant="tlsi", d_hidden=5)
    small_config(variant="tlsi-l", d_hidden=5)
