"""Gated fusion of long/short interests, the MLP head and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

INIT_SCALE = 0.05
CLIP_EPS = 1e-7
STAT_MOMENTUM = 0.99
DICE_EPS = 1e-8
STANDARDIZE_EPS = 1e-5
ACTIVATIONS = ("dice", "prelu")


@dataclass
class FusionParameters:
    W_g: ad.Parameter  # [d, 2d + d_ctx]
    b_g: ad.Parameter  # [d]

    @classmethod
    def create(cls, d: int, d_ctx: int, rng: np.random.Generator, prefix: str = "fusion.") -> "FusionParameters":
        return cls(ad.Parameter(prefix + "W_g", rng.uniform(-INIT_SCALE, INIT_SCALE, (d, 2 * d + d_ctx))),
                   ad.Parameter(prefix + "b_g", np.zeros(d)))

    def parameters(self) -> list[ad.Parameter]:
        return [self.W_g, self.b_g]


def context_vector(target, target_feat, recency) -> ad.Node:
    """[x_p, features(t_p), (t_p - t_last) / span] -> [B, d_b + 9]."""
    target = ad.as_node(target)
    B = target.shape[0]
    return ad.concat([target, ad.const(target_feat), ad.const(np.asarray(recency).reshape(B, 1))], axis=-1)


def fuse(p_long, p_short, ctx, params: FusionParameters):
    """alpha = sigmoid(W_g [p_long, p_short, ctx] + b_g); returns (alpha, p_fused)."""
    p_long, p_short = ad.as_node(p_long), ad.as_node(p_short)
    if p_long.shape != p_short.shape:
        raise ad.ShapeError(f"fuse: long {p_long.shape} and short {p_short.shape} interests differ")
    alpha = ad.sigmoid(ad.linear(ad.concat([p_long, p_short, ctx], axis=-1), params.W_g, params.b_g))
    # alpha * long + (1 - alpha) * short, written as short + alpha * (long - short)
    fused = ad.add(p_short, ad.mul(alpha, ad.sub(p_long, p_short)))
    return alpha, fused


def final_interest(p_long, p_short, p_fused) -> ad.Node:
    return ad.concat([p_long, p_short, p_fused], axis=-1)


class RunningMoments:
    """Bias-corrected exponential moving mean/variance kept as untrainable parameters."""

    def __init__(self, prefix: str, width: int):
        self.mean = ad.Parameter(prefix + "ema_mean", np.zeros(width), trainable=False)
        self.var = ad.Parameter(prefix + "ema_var", np.zeros(width), trainable=False)
        self.steps = ad.Parameter(prefix + "ema_steps", np.zeros(1), trainable=False)

    def parameters(self) -> list[ad.Parameter]:
        return [self.mean, self.var, self.steps]

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = STAT_MOMENTUM
        self.mean.value = m * self.mean.value + (1 - m) * batch_mean
        self.var.value = m * self.var.value + (1 - m) * batch_var
        self.steps.value = self.steps.value + 1

    def estimate(self) -> tuple[np.ndarray, np.ndarray]:
        n = float(self.steps.value[0])
        if n == 0:
            return np.zeros_like(self.mean.value), np.ones_like(self.var.value)
        corr = 1.0 - STAT_MOMENTUM ** n
        return self.mean.value / corr, self.var.value / corr


@dataclass
class HeadParameters:
    W1: ad.Parameter      # [h1, d_in]
    b1: ad.Parameter
    act_alpha: ad.Parameter  # per-unit slope of the adaptive activation
    W2: ad.Parameter      # [1, h1]
    b2: ad.Parameter
    input_stats: RunningMoments
    act_stats: RunningMoments

    @classmethod
    def create(cls, d_in: int, h1: int, rng: np.random.Generator, prefix: str = "head.") -> "HeadParameters":
        def glorot(n_out, n_in):
            lim = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-lim, lim, (n_out, n_in))

        return cls(ad.Parameter(prefix + "W1", glorot(h1, d_in)), ad.Parameter(prefix + "b1", np.zeros(h1)),
                   ad.Parameter(prefix + "act_alpha", np.zeros(h1)),
                   ad.Parameter(prefix + "W2", glorot(1, h1)), ad.Parameter(prefix + "b2", np.zeros(1)),
                   RunningMoments(prefix + "input_", d_in), RunningMoments(prefix + "act_", h1))

    def parameters(self) -> list[ad.Parameter]:
        return ([self.W1, self.b1, self.act_alpha, self.W2, self.b2]
                + self.input_stats.parameters() + self.act_stats.parameters())


def dice_activation(x, alpha, stats: RunningMoments | None = None, training: bool = True,
                    update_stats: bool = False) -> ad.Node:
    """Data-adaptive rectifier: p*x + (1-p)*alpha*x with p = sigmoid(standardized x).

    Training standardizes with the statistics of the current batch (and
    differentiates through them); evaluation uses the running moments. A batch
    of one has zero variance, so p = 0.5 there.
    """
    x = ad.as_node(x)
    if training or stats is None:
        mu = ad.mean(x, axis=0, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.mean(ad.mul(centered, centered), axis=0, keepdims=True)
        if update_stats and stats is not None:
            stats.update(mu.value[0], var.value[0])
        p = ad.sigmoid(ad.div(centered, ad.sqrt(ad.add(var, DICE_EPS))))
    else:
        m, v = stats.estimate()
        p = ad.sigmoid(ad.div(ad.sub(x, m), np.sqrt(v + DICE_EPS)))
    # p*x + (1-p)*alpha*x == x * (alpha + p*(1-alpha))
    return ad.mul(x, ad.add(alpha, ad.mul(p, ad.sub(1.0, alpha))))


def prelu_activation(x, alpha) -> ad.Node:
    x = ad.as_node(x)
    p = (x.value > 0).astype(np.float64)
    return ad.mul(x, ad.add(alpha, ad.mul(p, ad.sub(1.0, alpha))))


def standardize(z, stats: RunningMoments, update_stats: bool = False) -> ad.Node:
    """Per-feature (z - mean) / sqrt(var + eps) with running moments as constants.

    When ``update_stats`` is set the current batch is folded into the moments
    before they are applied.
    """
    z = ad.as_node(z)
    if update_stats:
        stats.update(z.value.mean(axis=0), z.value.var(axis=0))
    m, v = stats.estimate()
    return ad.div(ad.sub(z, m), np.sqrt(v + STANDARDIZE_EPS))


def predict(p_final, target, params: HeadParameters, *, training: bool = False, update_stats: bool = False,
            activation: str = "dice", use_standardize: bool = True):
    """Two-layer MLP on [p_final, x_p]; returns (logit [B], prediction [B])."""
    z = ad.concat([p_final, target], axis=-1)
    if use_standardize:
        z = standardize(z, params.input_stats, update_stats and training)
    hidden = ad.linear(z, params.W1, params.b1)
    if activation == "dice":
        hidden = dice_activation(hidden, params.act_alpha, params.act_stats, training, update_stats and training)
    elif activation == "prelu":
        hidden = prelu_activation(hidden, params.act_alpha)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    logit = ad.linear(hidden, params.W2, params.b2)
    B = logit.shape[0]
    logit = ad.reshape(logit, (B,))
    return logit, ad.sigmoid(logit)


def logloss(labels, predictions) -> ad.Node:
    """Mean binary negative log-likelihood with predictions clipped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=np.float64)
    pred = ad.as_node(predictions)
    if y.size == 0:
        raise ValueError("logloss of an empty batch")
    if y.shape != pred.shape:
        raise ad.ShapeError(f"labels {y.shape} and predictions {pred.shape} differ")
    p = ad.clip(pred, CLIP_EPS, 1.0 - CLIP_EPS)
    ll = ad.add(ad.mul(y, ad.log(p)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, p))))
    return ad.neg(ad.mean(ll))
