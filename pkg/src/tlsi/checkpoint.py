"""Checkpoint directories: ``manifest.json`` plus one raw ``<f8`` file per parameter."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import Vocabulary
from .model import TlsiModel
from .temporal import DatasetClock

FORMAT_VERSION = 1
DTYPE_TAG = "<f8"
MANIFEST = "manifest.json"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: TlsiModel
    config: TrainConfig
    vocab: Vocabulary
    clock: DatasetClock


def _file_name(param_name: str) -> str:
    return param_name.replace("/", "_") + ".bin"


def atomic_dir(dest: str):
    """Return (tmp_dir, commit). Write into tmp_dir, then call commit() to swap it in."""
    parent = os.path.dirname(os.path.abspath(dest)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-", dir=parent)

    def commit():
        old = None
        if os.path.exists(dest):
            old = tempfile.mkdtemp(prefix=".old-", dir=parent)
            os.rmdir(old)
            os.rename(dest, old)
        os.rename(tmp, dest)
        if old:
            shutil.rmtree(old, ignore_errors=True)

    return tmp, commit


def save_checkpoint(path: str, model: TlsiModel, vocab: Vocabulary, clock: DatasetClock) -> None:
    tmp, commit = atomic_dir(path)
    try:
        entries = []
        for name, p in model.params.items():
            raw = np.ascontiguousarray(p.value, dtype=DTYPE_TAG).tobytes()
            fname = _file_name(name)
            with open(os.path.join(tmp, fname), "wb") as fh:
                fh.write(raw)
            entries.append({"name": name, "shape": list(p.shape), "file": fname,
                            "sha256": hashlib.sha256(raw).hexdigest()})
        manifest = {
            "format_version": FORMAT_VERSION,
            "dtype": DTYPE_TAG,
            "config": model.config.to_dict(),
            "parameters": entries,
            "vocab": vocab.to_dict(),
            "clock": {"t_s": clock.t_s, "span_seconds": clock.span_seconds},
        }
        with open(os.path.join(tmp, MANIFEST), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        commit()
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def read_manifest(path: str) -> dict:
    try:
        with open(os.path.join(path, MANIFEST)) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no {MANIFEST}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    if not isinstance(manifest, dict):
        raise CheckpointError(f"{path}: corrupt manifest")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    if manifest.get("dtype") != DTYPE_TAG:
        raise CheckpointError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    for key in ("config", "parameters", "vocab", "clock"):
        if key not in manifest:
            raise CheckpointError(f"{path}: manifest lacks {key!r}")
    return manifest


def load_checkpoint(path: str, config: TrainConfig | None = None) -> Checkpoint:
    """Rebuild the model saved at ``path``.

    A ``config`` that disagrees with the saved architecture surfaces as a
    shape error naming the offending parameter.
    """
    manifest = read_manifest(path)
    try:
        config = config or TrainConfig.from_dict(manifest["config"])
        vocab = Vocabulary.from_dict(manifest["vocab"])
        clock = DatasetClock(int(manifest["clock"]["t_s"]), int(manifest["clock"]["span_seconds"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    arrays = {}
    for entry in manifest["parameters"]:
        name, shape = entry["name"], tuple(entry["shape"])
        with open(os.path.join(path, entry["file"]), "rb") as fh:
            raw = fh.read()
        if "sha256" in entry and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"{path}: checksum mismatch for parameter {name}")
        values = np.frombuffer(raw, dtype=DTYPE_TAG)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: parameter {name} holds {values.size} values, manifest shape {shape}")
        arrays[name] = values.reshape(shape).astype(np.float64)
    model = TlsiModel(config, vocab.n_items, vocab.n_categories)
    model.load_arrays(arrays)
    return Checkpoint(model, config, vocab, clock)
