"""Finite-difference verification of every parameter group of a tiny model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .batching import EncodedDataset
from .config import TrainConfig
from .data import BehaviorEvent, BehaviorSequence
from .head import STAT_MOMENTUM
from .model import TlsiModel
from .temporal import DatasetClock

WARM_ROWS = 32
VAR_FLOOR = 0.01

# (group, predicate on parameter name)
GROUPS = (
    ("embeddings", lambda n: n.startswith("emb.")),
    ("W_c", lambda n: n == "long.W_c"),
    ("W_t", lambda n: n == "long.W_t"),
    ("lstm", lambda n: n.split(".", 1)[-1] in {f"{m}_{g}" for m in "WUb" for g in "fico"}
        and n.startswith("short.")),
    ("W_delta/W_s", lambda n: n in ("short.W_delta", "short.b_delta", "short.W_s", "short.b_s")),
    ("T-gates", lambda n: n in ("short.W_xdelta", "short.W_tdelta", "short.b_tdelta",
                                "short.W_xs", "short.W_ts", "short.b_ts")),
    ("W_delta_o/W_s_o", lambda n: n in ("short.W_delta_o", "short.W_s_o")),
    ("W_h", lambda n: n == "short.W_h"),
    ("W_g", lambda n: n.startswith("fusion.")),
    ("head", lambda n: n.startswith("head.")),
)


@dataclass
class GroupResult:
    group: str
    n_values: int
    rel_error: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.group:<16} values={self.n_values:<5} rel_err={self.rel_error:.3e}"


def group_of(name: str) -> str:
    for group, pred in GROUPS:
        if pred(name):
            return group
    raise KeyError(f"parameter {name} belongs to no gradcheck group")


def tiny_problem(d: int = 4, n: int = 3, seed: int = 0, variant: str = "tlsi", max_hist: int = 5,
                 n_items: int = 8, n_categories: int = 4):
    """A random model with d_b = d_h = d and a batch of ``n`` random examples."""
    if d < 2 or d % 2:
        raise ValueError("d must be an even number >= 2 (item and category halves)")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(variant=variant, seed=seed, d_item=d // 2, d_cat=d // 2, d_hidden=d, mlp_hidden=2 * d,
                      max_len=max_hist, max_len_long=max_hist, batch_size=n)
    t0 = 1_700_000_000
    item_cat = rng.integers(1, n_categories, n_items)
    seqs = []
    # extra rows only serve to warm the running moments with a non-degenerate spread
    for r in range(max(n, WARM_ROWS)):
        length = int(rng.integers(2, max_hist + 1))
        ts = t0 + np.sort(rng.integers(0, 90 * 86400, length + 1))
        items = rng.integers(1, n_items, length + 1)
        hist = tuple(BehaviorEvent(r + 1, int(i), int(item_cat[i]), int(t)) for i, t in zip(items[:-1], ts[:-1]))
        seqs.append(BehaviorSequence(r + 1, hist, int(items[-1]), int(item_cat[items[-1]]), int(ts[-1]), r % 2))
    clock = DatasetClock(t0, 90 * 86400)
    data = EncodedDataset(seqs, clock, max_hist, max_hist)
    model = TlsiModel(cfg, n_items, n_categories)
    # larger weights than the training init so every nonlinearity is exercised away from 0
    for p in model.trainable():
        p.value = rng.uniform(-0.5, 0.5, p.shape)
    # fold one batch into the running moments, then hold them fixed
    model.forward(data.batch(np.arange(len(data))), training=True, update_stats=True)
    # a near-constant feature would otherwise be scaled by ~1/sqrt(eps), and the
    # resulting curvature swamps a 1e-3 central difference
    for stats in (model.head.input_stats, model.head.act_stats):
        corr = 1.0 - STAT_MOMENTUM ** float(stats.steps.value[0])
        stats.var.value = np.maximum(stats.var.value, VAR_FLOOR * corr)
    return model, data.batch(np.arange(n))


def _loss_value(model, batch) -> float:
    loss, _ = model.loss(batch, training=True, update_stats=False)
    return float(loss.value)


def numeric_gradient(model, batch, param: ad.Parameter, step: float) -> np.ndarray:
    grad = np.zeros(param.shape)
    flat = param.value.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        up = _loss_value(model, batch)
        flat[j] = orig - step
        down = _loss_value(model, batch)
        flat[j] = orig
        grad.reshape(-1)[j] = (up - down) / (2 * step)
    return grad


def run_gradcheck(d: int = 4, n: int = 3, seed: int = 0, step: float = 1e-3, rtol: float = 1e-4,
                  variant: str = "tlsi") -> list[GroupResult]:
    """Compare analytic and central-difference gradients, one result per group.

    The error of a group is ||analytic - numeric|| / max(||analytic||, ||numeric||)
    over all of its values; an all-zero pair counts as exact.
    """
    model, batch = tiny_problem(d, n, seed, variant)
    params = model.trainable()
    for p in params:
        p.zero_grad()
    loss, _ = model.loss(batch, training=True, update_stats=False)
    ad.backward(loss, params)
    sums: dict[str, list[float]] = {}
    for p in params:
        num = numeric_gradient(model, batch, p, step)
        ana = p.grad
        acc = sums.setdefault(group_of(p.name), [0.0, 0.0, 0.0, 0])
        acc[0] += float(np.sum((ana - num) ** 2))
        acc[1] += float(np.sum(ana * ana))
        acc[2] += float(np.sum(num * num))
        acc[3] += p.value.size
    out = []
    for group, _ in GROUPS:
        if group not in sums:
            continue
        diff, a2, n2, count = sums[group]
        scale = max(np.sqrt(a2), np.sqrt(n2))
        rel = 0.0 if scale == 0 else float(np.sqrt(diff) / scale)
        out.append(GroupResult(group, count, rel, rel < rtol))
    return out
