"""The full click model and its ablation variants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .batching import Batch
from .config import TrainConfig
from .head import FusionParameters, HeadParameters, context_vector, final_interest, fuse, logloss, predict
from .longterm import INIT_SCALE, LongTermParameters, long_term_interest
from .shortterm import ShortTermParameters, last_hidden, short_term_interest, unroll
from .temporal import N_FEATURES


@dataclass(frozen=True)
class VariantSpec:
    long_mode: str | None      # "both" | "content" | "temporal" | None
    short: str | None          # "time" | "vanilla" | None
    fusion: bool
    final: str                 # which vectors reach the head
    time_point: bool = True


VARIANT_SPECS = {
    "tlsi": VariantSpec("both", "time", True, "concat"),
    "tlsi-wo-tp": VariantSpec("both", "time", True, "concat", time_point=False),
    "tlsi-l": VariantSpec("both", None, False, "long"),
    "tlsi-l-c": VariantSpec("content", None, False, "long"),
    "tlsi-l-t": VariantSpec("temporal", None, False, "long"),
    "tlsi-s": VariantSpec(None, "time", False, "short"),
    "tlsi-f": VariantSpec("both", "time", True, "fused"),
    "lstm": VariantSpec(None, "vanilla", False, "last_hidden"),
    "meanpool": VariantSpec(None, None, False, "mean"),
}


@dataclass
class ForwardResult:
    logit: ad.Node
    pred: ad.Node
    alpha: np.ndarray | None = None
    a_c: np.ndarray | None = None
    a_t: np.ndarray | None = None
    a_s: np.ndarray | None = None


class TlsiModel:
    def __init__(self, config: TrainConfig, n_items: int, n_categories: int, seed: int | None = None):
        self.config = config
        self.spec = VARIANT_SPECS[config.variant]
        rng = np.random.default_rng(config.seed if seed is None else seed)
        d_b, d_h = config.d_behavior, config.d_hidden
        self.item_emb = ad.Parameter("emb.item", rng.uniform(-INIT_SCALE, INIT_SCALE, (n_items, config.d_item)))
        self.cat_emb = ad.Parameter("emb.category", rng.uniform(-INIT_SCALE, INIT_SCALE, (n_categories, config.d_cat)))
        s = self.spec
        self.long = LongTermParameters.create(d_b, rng) if s.long_mode else None
        self.short = ShortTermParameters.create(d_b, d_h, rng) if s.short else None
        self.fusion = FusionParameters.create(d_h, d_b + N_FEATURES + 1, rng) if s.fusion else None
        self.head = HeadParameters.create(self.final_width + d_b, config.mlp_hidden, rng)
        self.params: dict[str, ad.Parameter] = {}
        for p in self._collect():
            if p.name in self.params:
                raise ValueError(f"duplicate parameter name {p.name}")
            self.params[p.name] = p

    @property
    def final_width(self) -> int:
        d_b, d_h = self.config.d_behavior, self.config.d_hidden
        return {"concat": d_b + 2 * d_h, "long": d_b, "short": d_h, "fused": d_h,
                "last_hidden": d_h, "mean": d_b}[self.spec.final]

    def _collect(self) -> list[ad.Parameter]:
        out = [self.item_emb, self.cat_emb]
        if self.long:
            out += self.long.parameters(self.spec.long_mode)
        if self.short:
            out += self.short.parameters(vanilla=self.spec.short == "vanilla", pooled=self.spec.final != "last_hidden")
        if self.fusion:
            out += self.fusion.parameters()
        return out + self.head.parameters()

    def trainable(self) -> list[ad.Parameter]:
        return [p for p in self.params.values() if p.trainable]

    def embed(self, items, cats) -> ad.Node:
        return ad.concat([ad.gather_embedding(self.item_emb, items), ad.gather_embedding(self.cat_emb, cats)],
                         axis=-1)

    def forward(self, batch: Batch, training: bool = False, update_stats: bool | None = None,
                vanilla_short: bool = False) -> ForwardResult:
        """Build the graph for one batch.

        ``update_stats`` defaults to ``training``; gradient checks pass False so
        repeated forwards see identical running moments. ``vanilla_short``
        swaps the time-aware LSTM for the plain one (T gates fixed at 1, no
        time terms in the output gate).
        """
        if update_stats is None:
            update_stats = training
        s, cfg = self.spec, self.config
        target = self.embed(batch.target_item, batch.target_cat)
        res = {}
        p_long = p_short = None
        if s.long_mode or s.final == "mean":
            w = batch.long
            hist = self.embed(w.items, w.cats)
        if s.long_mode:
            p_long, a_c, a_t = long_term_interest(hist, ad.const(w.feat), target, ad.const(batch.target_feat),
                                                  self.long, mask=w.mask, mode=s.long_mode)
            res["a_c"] = None if a_c is None else a_c.value
            res["a_t"] = None if a_t is None else a_t.value
        if s.short:
            w = batch.short
            hist_s = self.embed(w.items, w.cats)
            vanilla = vanilla_short or s.short == "vanilla"
            hidden = unroll(hist_s, w.adj_sim, w.span_sim, self.short, vanilla=vanilla)
            if s.final == "last_hidden":
                p_short = last_hidden(hidden, w.lengths)
            else:
                p_short, a_s = short_term_interest(hidden, target, self.short.W_h, mask=w.mask)
                res["a_s"] = a_s.value
        if s.final == "concat" or s.final == "fused":
            ctx = context_vector(target, batch.target_feat, batch.recency)
            alpha, p_fused = fuse(p_long, p_short, ctx, self.fusion)
            res["alpha"] = alpha.value
            p_final = final_interest(p_long, p_short, p_fused) if s.final == "concat" else p_fused
        elif s.final == "long":
            p_final = p_long
        elif s.final in ("short", "last_hidden"):
            p_final = p_short
        else:  # mean of history embeddings
            m = batch.long.mask.astype(np.float64)
            p_final = ad.reshape(ad.matmul(ad.const((m / m.sum(axis=1, keepdims=True))[:, None, :]), hist),
                                 (batch.size, cfg.d_behavior))
        logit, pred = predict(p_final, target, self.head, training=training, update_stats=update_stats,
                              activation=cfg.activation, use_standardize=cfg.standardize)
        return ForwardResult(logit, pred, **res)

    def loss(self, batch: Batch, training: bool = True, update_stats: bool | None = None, **kw):
        out = self.forward(batch, training=training, update_stats=update_stats, **kw)
        return logloss(batch.labels, out.pred), out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in arrays.items():
            p = self.params[name]
            if tuple(value.shape) != p.shape:
                raise ValueError(f"parameter {name}: checkpoint shape {tuple(value.shape)} != model shape {p.shape}")
            p.value = value
