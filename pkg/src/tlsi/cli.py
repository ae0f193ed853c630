"""Command line: generate, train, eval, ablate, gradcheck.

Config file format (INI, every key optional)::

    [train]
    variant = tlsi
    epochs = 10
    seeds = 0,1,2

    [synthetic]
    n_users = 2000
    n_categories = 50
    noise_rate = 0.1
    patterned = true

    [paths]
    data = logs.jsonl
    out = runs/a

Precedence is command-line flag > config file > built-in default, and the
effective configuration is echoed into every output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys

import numpy as np

from . import checkpoint as ckpt
from .config import VARIANTS, TrainConfig, read_config_file, train_overrides
from .data import BehaviorEvent, Vocabulary, events_from_raw, load_behavior_log
from .gradcheck import run_gradcheck
from .model import TlsiModel
from .synthetic import SyntheticSpec, generate_synthetic, to_records, validate_synthetic
from .train import Experiment, MetricsReport, TrainingDiverged, evaluate, prepare, train

log = logging.getLogger("tlsi")

EXIT_USAGE = 2
EXIT_FAILED = 1
EXIT_DIVERGED = 3

# flag dest -> TrainConfig field
TRAIN_FLAGS = {
    "variant": ("--variant", str), "epochs": ("--epochs", int), "batch_size": ("--batch-size", int),
    "lr": ("--lr", float), "max_len": ("--max-len", int), "max_len_long": ("--max-len-long", int),
    "min_len": ("--min-len", int), "train_targets": ("--train-targets", int),
    "valid_fraction": ("--valid-fraction", float), "d_item": ("--d-item", int), "d_cat": ("--d-cat", int),
    "d_hidden": ("--d-hidden", int), "mlp_hidden": ("--mlp-hidden", int), "activation": ("--activation", str),
    "clip_norm": ("--clip-norm", float), "eval_batch_size": ("--eval-batch-size", int),
    "bucket_pool": ("--bucket-pool", int),
}

SYNTH_FLAGS = {
    "n_users": ("--users", int), "n_items": ("--items", int), "n_categories": ("--categories", int),
    "noise_rate": ("--noise", float), "seed": ("--seed", int), "horizon_days": ("--horizon-days", float),
    "popularity_skew": ("--skew", float),
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parsing helpers


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in str(text).replace(" ", "").split(",") if s != ""]
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _cat_key(text: str) -> int:
    text = text.strip()
    if text.startswith("cat"):
        text = text[3:]
    return int(text)


def _parse_period(items) -> dict[int, float]:
    out = {}
    for item in items or ():
        for part in str(item).split(","):
            if not part.strip():
                continue
            try:
                k, v = part.split("=")
                out[_cat_key(k)] = float(v)
            except ValueError:
                raise UsageError(f"bad period {part!r}; expected cat<idx>=<days>") from None
    return out


def _parse_hours(items) -> dict[int, tuple[int, ...]]:
    out = {}
    for item in items or ():
        for part in str(item).split(";"):
            if not part.strip():
                continue
            try:
                k, v = part.split("=")
                out[_cat_key(k)] = tuple(int(h) for h in v.split("|"))
            except ValueError:
                raise UsageError(f"bad hours {part!r}; expected cat<idx>=<h>|<h>...") from None
    return out


def _load_config_file(path: str | None) -> dict[str, dict[str, str]]:
    if not path:
        return {}
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    try:
        return read_config_file(path)
    except Exception as e:  # configparser raises a zoo of error types
        raise UsageError(f"cannot read config file {path}: {e}") from None


def _resolve_train_config(args, file_cfg: dict) -> tuple[TrainConfig, list[int]]:
    raw = dict(file_cfg.get("train", {}))
    seeds_raw = raw.pop("seeds", None)
    seed_raw = raw.pop("seed", None)
    try:
        merged = train_overrides(raw)
    except ValueError as e:
        raise UsageError(str(e)) from None
    for dest in TRAIN_FLAGS:
        val = getattr(args, dest, None)
        if val is not None:
            merged[dest] = val
    if getattr(args, "no_standardize", False):
        merged["standardize"] = False
    if getattr(args, "seeds", None) is not None:
        seeds = _seed_list(args.seeds)
    elif getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    elif seeds_raw is not None:
        seeds = _seed_list(seeds_raw)
    elif seed_raw is not None:
        seeds = _seed_list(seed_raw)
    else:
        seeds = [0]
    try:
        cfg = TrainConfig.from_dict({**merged, "seed": seeds[0]})
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid configuration: {e}") from None
    return cfg, seeds


def _resolve_path(args, file_cfg: dict, key: str, required: bool = True) -> str | None:
    val = getattr(args, key, None)
    if val is None:
        val = file_cfg.get("paths", {}).get(key)
    if val is None and required:
        raise UsageError(f"--{key} is required")
    return val


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _resolve_spec(args, file_cfg: dict) -> SyntheticSpec:
    raw = dict(file_cfg.get("synthetic", {}))
    patterned = raw.pop("patterned", "false").strip().lower() in ("1", "true", "yes", "on")
    periods = _parse_period([raw.pop("period")]) if "period" in raw else {}
    hours = _parse_hours([raw.pop("hours")]) if "hours" in raw else {}
    kw = {}
    types = {f.name: f.type for f in dataclasses.fields(SyntheticSpec)}
    for key, value in raw.items():
        if key not in types or key in ("period_days", "active_hours"):
            raise UsageError(f"unknown [synthetic] key {key!r}")
        kw[key] = float(value) if types[key] in (float, "float") else int(value)
    for dest in SYNTH_FLAGS:
        val = getattr(args, dest, None)
        if val is not None:
            kw[dest] = val
    patterned = patterned or args.patterned
    periods.update(_parse_period(args.period))
    hours.update(_parse_hours(args.hours))
    try:
        if patterned:
            base = SyntheticSpec.patterned(**{k: kw.pop(k) for k in ("n_users", "n_categories", "n_items",
                                                                     "noise_rate", "seed") if k in kw})
            spec = dataclasses.replace(base, **kw)
            spec.period_days.update(periods)
            spec.active_hours.update(hours)
        else:
            spec = SyntheticSpec(period_days=periods, active_hours=hours, **kw)
        spec.validate()
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid synthetic spec: {e}") from None
    return spec


# ---------------------------------------------------------------------------
# output helpers


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_data(path: str):
    try:
        events, vocab, clock = load_behavior_log(path)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if not events:
        raise UsageError(f"{path}: no events")
    return events, vocab, clock


def _reindex(events, src: Vocabulary, dst: Vocabulary):
    """Map events indexed by ``src`` onto the (checkpoint) vocabulary ``dst``.

    Items or categories the checkpoint never saw fall back to the padding row;
    users are appended since no parameter depends on them.
    """
    merged = Vocabulary.from_dict(dst.to_dict())
    out, unknown = [], 0
    for e in events:
        u = merged.add("user", src.raw("user", e.user_id))
        i = merged.lookup("item", src.raw("item", e.item_id))
        c = merged.lookup("category", src.raw("category", e.category_id))
        unknown += i == 0
        out.append(BehaviorEvent(u, i, c, e.timestamp))
    if unknown:
        log.warning("%d events reference items unknown to the checkpoint", unknown)
    return out, merged


def _metrics_payload(report: MetricsReport, config: TrainConfig, extra: dict | None = None) -> dict:
    out = report.to_dict()
    out["config"] = config.to_dict()
    if extra:
        out.update(extra)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    out = _resolve_path(args, file_cfg, "out")
    spec = _resolve_spec(args, file_cfg)
    events = generate_synthetic(spec)
    if spec.noise_rate == 0:
        problems = validate_synthetic(events, spec)
        if problems:
            for p in problems[:20]:
                print(p, file=sys.stderr)
            print(f"validator: {len(problems)} violations", file=sys.stderr)
            return EXIT_FAILED
        print("validator: planted constraints hold")
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")
    sidecar = out + ".spec.json"
    tmp_data, tmp_spec = out + ".tmp", sidecar + ".tmp"
    try:
        with open(tmp_data, "w") as fh:
            for rec in to_records(events):
                fh.write(json.dumps(rec) + "\n")
        with open(tmp_spec, "w") as fh:
            fh.write(spec.to_json() + "\n")
        os.replace(tmp_data, out)
        os.replace(tmp_spec, sidecar)
    except OSError as e:
        for p in (tmp_data, tmp_spec):
            if os.path.exists(p):
                os.remove(p)
        raise UsageError(f"cannot write {out}: {e}") from None
    print(f"wrote {len(events)} events for {spec.n_users} users to {out}")
    return 0


def _train_one(exp: Experiment, cfg: TrainConfig, n_items: int, n_categories: int):
    if exp.train_set is None and cfg.epochs > 0:
        raise UsageError("no training examples; lower --min-len or supply more data")
    if cfg.epochs > 0:
        result = train(exp.train_set, cfg, n_items, n_categories, exp.valid_set)
        model, trace, vtrace = result.model, result.loss_trace, result.valid_trace
    else:
        model, trace, vtrace = TlsiModel(cfg, n_items, n_categories), [], []
    report = evaluate(model, exp.test_set, cfg)
    return model, trace, vtrace, report


def _train_into(root: str, events, vocab, clock, cfg: TrainConfig, data_path: str) -> MetricsReport:
    exp = prepare(events, vocab, clock, cfg)
    model, trace, vtrace, report = _train_one(exp, cfg, vocab.n_items, vocab.n_categories)
    ckpt.save_checkpoint(os.path.join(root, "checkpoint"), model, vocab, clock)
    _write_json(os.path.join(root, "metrics.json"),
                _metrics_payload(report, cfg, {"split": "test", "data": data_path, "loss_trace": trace}))
    rows = [(e + 1, trace[e], vtrace[e] if e < len(vtrace) else "") for e in range(len(trace))]
    _write_csv(os.path.join(root, "loss_trace.csv"), ("epoch", "train_loss", "valid_loss"), rows)
    return report


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _resolve_path(args, file_cfg, "data")
    out = _resolve_path(args, file_cfg, "out")
    _require_file(data_path, "dataset")
    cfg, seeds = _resolve_train_config(args, file_cfg)
    events, vocab, clock = _load_data(data_path)
    tmp, commit = ckpt.atomic_dir(out)
    try:
        if len(seeds) == 1:
            report = _train_into(tmp, events, vocab, clock, cfg, data_path)
            print(f"{cfg.variant} seed {cfg.seed}: test auc {report.auc:.6f} logloss {report.logloss:.6f}")
        else:
            per_seed = []
            for s in seeds:
                scfg = cfg.replace(seed=s)
                sub = os.path.join(tmp, f"seed-{s}")
                os.makedirs(sub)
                rep = _train_into(sub, events, vocab, clock, scfg, data_path)
                per_seed.append({"seed": s, **rep.to_dict()})
                print(f"{cfg.variant} seed {s}: test auc {rep.auc:.6f} logloss {rep.logloss:.6f}")
            summary = {
                "auc": float(np.mean([r["auc"] for r in per_seed])),
                "logloss": float(np.mean([r["logloss"] for r in per_seed])),
                "seeds": seeds, "per_seed": per_seed, "config": cfg.to_dict(), "data": data_path,
            }
            _write_json(os.path.join(tmp, "metrics.json"), summary)
            print(f"{cfg.variant} mean over {len(seeds)} seeds: auc {summary['auc']:.6f} "
                  f"logloss {summary['logloss']:.6f}")
        commit()
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    data_path = _resolve_path(args, file_cfg, "data")
    out = _resolve_path(args, file_cfg, "out")
    _require_file(data_path, "dataset")
    if not os.path.isdir(args.checkpoint):
        raise UsageError(f"checkpoint directory not found: {args.checkpoint}")
    loaded = ckpt.load_checkpoint(args.checkpoint)
    cfg = loaded.config
    events, vocab, _ = _load_data(data_path)
    if vocab.to_dict() != loaded.vocab.to_dict():
        events, vocab = _reindex(events, vocab, loaded.vocab)
    else:
        vocab = loaded.vocab
    exp = prepare(events, vocab, loaded.clock, cfg)
    dataset = {"test": exp.test_set, "valid": exp.valid_set, "train": exp.train_set}[args.split]
    if dataset is None:
        raise UsageError(f"the {args.split} split is empty")
    report = evaluate(loaded.model, dataset, cfg, dump_gates=args.dump_gates, dump_attention=args.dump_attention)
    tmp, commit = ckpt.atomic_dir(out)
    try:
        _write_json(os.path.join(tmp, "metrics.json"),
                    _metrics_payload(report, cfg, {"split": args.split, "data": data_path}))
        if args.dump_gates:
            _write_csv(os.path.join(tmp, "gates.csv"), ("example_id", "alpha_mean", "recency_seconds"),
                       report.gate_rows)
        if args.dump_attention:
            _write_csv(os.path.join(tmp, "attention.csv"), ("example_id", "position", "a_c", "a_t"),
                       report.attention_rows)
        commit()
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"{args.split}: auc {report.auc:.6f} logloss {report.logloss:.6f} ({report.n_pos} pos, {report.n_neg} neg)")
    return 0


def cmd_ablate(args) -> int:
    file_cfg = _load_config_file(args.config)
    out = _resolve_path(args, file_cfg, "out")
    data_path = _resolve_path(args, file_cfg, "data", required=False)
    cfg, seeds = _resolve_train_config(args, file_cfg)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"unknown variants {bad}; choose from {', '.join(VARIANTS)}")
    if data_path:
        _require_file(data_path, "dataset")
        events, vocab, clock = _load_data(data_path)
    rows = []
    for s in seeds:
        if not data_path:
            # a fresh planted-pattern dataset per seed
            spec = SyntheticSpec.patterned(n_users=args.users, n_categories=args.categories,
                                           noise_rate=args.noise, seed=s)
            events, vocab, clock = events_from_raw((e.user_id, e.item_id, e.category_id, e.timestamp)
                                                   for e in generate_synthetic(spec))
        for v in variants:
            vcfg = cfg.replace(variant=v, seed=s)
            exp = prepare(events, vocab, clock, vcfg)
            _, _, _, rep = _train_one(exp, vcfg, vocab.n_items, vocab.n_categories)
            rows.append({"variant": v, "seed": s, "auc": rep.auc, "logloss": rep.logloss})
            print(f"{v:<11} seed {s}: auc {rep.auc:.6f} logloss {rep.logloss:.6f}", flush=True)
    means = {v: {"auc": float(np.mean([r["auc"] for r in rows if r["variant"] == v])),
                 "logloss": float(np.mean([r["logloss"] for r in rows if r["variant"] == v]))} for v in variants}
    print("mean over seeds:")
    for v in variants:
        print(f"  {v:<11} auc {means[v]['auc']:.6f} logloss {means[v]['logloss']:.6f}")
    tmp, commit = ckpt.atomic_dir(out)
    try:
        _write_json(os.path.join(tmp, "ablation.json"),
                    {"runs": rows, "mean": means, "seeds": seeds, "config": cfg.to_dict(), "data": data_path})
        _write_csv(os.path.join(tmp, "ablation.csv"), ("variant", "seed", "auc", "logloss"),
                   [(r["variant"], r["seed"], r["auc"], r["logloss"]) for r in rows])
        commit()
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


def _parse_sizes(text: str) -> dict[str, int]:
    out = {"d": 4, "n": 3}
    for part in text.split(","):
        if not part.strip():
            continue
        try:
            k, v = part.split("=")
            k = k.strip()
            if k not in out:
                raise ValueError
            out[k] = int(v)
        except ValueError:
            raise UsageError(f"bad size {part!r}; expected d=<int> or n=<int>") from None
    return out


def cmd_gradcheck(args) -> int:
    sizes = _parse_sizes(args.sizes)
    try:
        results = run_gradcheck(d=sizes["d"], n=sizes["n"], seed=args.seed, step=args.step, rtol=args.rtol,
                                variant=args.variant)
    except ValueError as e:
        raise UsageError(str(e)) from None
    for r in results:
        print(r.line())
    failed = [r.group for r in results if not r.passed]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} groups pass")
    return EXIT_FAILED if failed else 0


# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for dest, (flag, typ) in TRAIN_FLAGS.items():
        kw = {"choices": VARIANTS} if dest == "variant" else {}
        if dest == "activation":
            kw = {"choices": ("dice", "prelu")}
        p.add_argument(flag, dest=dest, type=typ, default=None, **kw)
    p.add_argument("--no-standardize", action="store_true", help="drop the input standardization layer")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", default=None, help="comma-separated seed list; metrics are averaged")
    p.add_argument("--config", default=None, help="INI config file ([train], [synthetic], [paths])")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlsi", description="Click models over timestamped behavior sequences.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic click log (JSONL) and a spec sidecar")
    g.add_argument("--out", default=None)
    for dest, (flag, typ) in SYNTH_FLAGS.items():
        g.add_argument(flag, dest=dest, type=typ, default=None)
    g.add_argument("--patterned", action="store_true",
                   help="give every category a random period and active hours")
    g.add_argument("--period", action="append", help="cat<idx>=<days>, repeatable or comma-separated")
    g.add_argument("--hours", action="append", help="cat<idx>=<h>|<h>..., repeatable")
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train, save a checkpoint and report test metrics")
    t.add_argument("--data", default=None)
    t.add_argument("--out", default=None)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--split", choices=("test", "valid", "train"), default="test")
    e.add_argument("--dump-gates", action="store_true", help="write gates.csv (example_id, alpha_mean, recency_seconds)")
    e.add_argument("--dump-attention", action="store_true",
                   help="write attention.csv (example_id, position, a_c, a_t)")
    e.add_argument("--config", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train several variants over a seed list and tabulate test AUC")
    a.add_argument("--data", default=None, help="dataset; omitted means a planted-pattern set per seed")
    a.add_argument("--out", default=None)
    a.add_argument("--variants", default="tlsi,tlsi-wo-tp,tlsi-f,tlsi-l,tlsi-s,lstm")
    a.add_argument("--users", type=int, default=2000)
    a.add_argument("--categories", type=int, default=50)
    a.add_argument("--noise", type=float, default=0.1)
    _add_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sizes", default="d=4,n=3", help="d=<width>,n=<examples>")
    c.add_argument("--step", type=float, default=1e-3)
    c.add_argument("--rtol", type=float, default=1e-4)
    c.add_argument("--variant", choices=VARIANTS, default="tlsi")
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"tlsi {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"tlsi {args.command}: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ckpt.CheckpointError as e:
        print(f"tlsi {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
