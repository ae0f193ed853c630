import json
import os

import numpy as np
import pytest

from tlsi.checkpoint import MANIFEST, CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from tlsi.train import evaluate, prepare, train

from test_train import small_config, small_problem


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    events, vocab, clock = small_problem(n_users=30, seed=4)
    cfg = small_config(epochs=1, variant="tlsi")
    exp = prepare(events, vocab, clock, cfg)
    model = train(exp.train_set, cfg, vocab.n_items, vocab.n_categories).model
    path = str(tmp_path_factory.mktemp("ck") / "checkpoint")
    save_checkpoint(path, model, vocab, clock)
    return path, model, exp, cfg


def test_round_trip_is_bit_exact(trained):
    path, model, exp, cfg = trained
    ck = load_checkpoint(path)
    for name, arr in model.state_arrays().items():
        assert np.array_equal(ck.model.state_arrays()[name], arr), name
    before = evaluate(model, exp.test_set, cfg)
    after = evaluate(ck.model, exp.test_set, ck.config)
    assert before.to_dict() == after.to_dict()
    assert np.array_equal(before.predictions, after.predictions)
    assert ck.config == cfg


def test_manifest_layout(trained):
    path = trained[0]
    manifest = read_manifest(path)
    assert manifest["dtype"] == "<f8"
    for entry in manifest["parameters"]:
        size = os.path.getsize(os.path.join(path, entry["file"]))
        assert size == 8 * int(np.prod(entry["shape"]))


def test_save_replaces_existing_directory(trained, tmp_path):
    path, model, exp, _ = trained
    dest = str(tmp_path / "ck")
    os.makedirs(dest)
    with open(os.path.join(dest, "stale.bin"), "wb") as fh:
        fh.write(b"x")
    ck = load_checkpoint(path)
    save_checkpoint(dest, model, ck.vocab, ck.clock)
    assert not os.path.exists(os.path.join(dest, "stale.bin"))
    assert [p for p in os.listdir(tmp_path) if p.startswith(".")] == []


def copy_checkpoint(src, dest):
    os.makedirs(dest)
    for name in os.listdir(src):
        with open(os.path.join(src, name), "rb") as a, open(os.path.join(dest, name), "wb") as b:
            b.write(a.read())


def test_corrupt_manifest(trained, tmp_path):
    dest = str(tmp_path / "bad")
    copy_checkpoint(trained[0], dest)
    with open(os.path.join(dest, MANIFEST), "w") as fh:
        fh.write("{not json")
    with pytest.raises(CheckpointError, match="corrupt manifest"):
        load_checkpoint(dest)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing"))


def test_tampered_values_detected(trained, tmp_path):
    dest = str(tmp_path / "tampered")
    copy_checkpoint(trained[0], dest)
    entry = read_manifest(dest)["parameters"][0]
    with open(os.path.join(dest, entry["file"]), "r+b") as fh:
        fh.write(b"\x01")
    with pytest.raises(CheckpointError, match=entry["name"]):
        load_checkpoint(dest)


def test_unsupported_version(trained, tmp_path):
    dest = str(tmp_path / "v2")
    copy_checkpoint(trained[0], dest)
    p = os.path.join(dest, MANIFEST)
    manifest = json.load(open(p))
    manifest["format_version"] = 2
    json.dump(manifest, open(p, "w"))
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(dest)


def test_architecture_mismatch_names_parameter(trained):
    path, _, _, cfg = trained
    wider = small_config(epochs=1, variant="tlsi", mlp_hidden=cfg.mlp_hidden + 2)
    with pytest.raises(ValueError, match=r"parameter head\."):
        load_checkpoint(path, wider)
