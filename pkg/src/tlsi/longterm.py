"""Long-term interest: content and temporal bilinear attention over the history.

Shapes use a leading batch axis ``B`` and history axis ``L``; padded history
positions are excluded through ``mask``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .temporal import N_FEATURES

INIT_SCALE = 0.05


@dataclass
class LongTermParameters:
    W_c: ad.Parameter  # [d_b, d_b]
    W_t: ad.Parameter  # [8, 8]

    @classmethod
    def create(cls, d_b: int, rng: np.random.Generator, prefix: str = "long.") -> "LongTermParameters":
        return cls(
            ad.Parameter(prefix + "W_c", rng.uniform(-INIT_SCALE, INIT_SCALE, (d_b, d_b))),
            ad.Parameter(prefix + "W_t", rng.uniform(-INIT_SCALE, INIT_SCALE, (N_FEATURES, N_FEATURES))),
        )

    def parameters(self, mode: str = "both") -> list[ad.Parameter]:
        """The matrices ``mode`` actually reads; an unused one would never see a gradient."""
        return {"both": [self.W_c, self.W_t], "content": [self.W_c], "temporal": [self.W_t]}[mode]


def bilinear_scores(keys, W, query) -> ad.Node:
    """``keys[b, k] . W . query[b]`` for keys [B, L, d], W [d, d'], query [B, d']."""
    keys = ad.as_node(keys)
    B, _, d = keys.shape
    wq = ad.linear(query, W)  # rows are (W q_b)^T
    return ad.reshape(ad.matmul(keys, ad.reshape(wq, (B, d, 1))), keys.shape[:2])


def content_attention(history, target, W_c, mask=None) -> ad.Node:
    """a^c over the history: softmax_k(x_k W_c x_p). history [B, L, d_b], target [B, d_b]."""
    return ad.softmax(bilinear_scores(history, W_c, target), mask)


def temporal_attention(history_times, target_time, W_t, mask=None) -> ad.Node:
    """a^t over the history from normalized time features [B, L, 8] and [B, 8]."""
    if ad.as_node(history_times).shape[-1] != N_FEATURES or ad.as_node(target_time).shape[-1] != N_FEATURES:
        raise ValueError("temporal attention expects 8-wide time features")
    return ad.softmax(bilinear_scores(history_times, W_t, target_time), mask)


def weighted_sum(weights, values) -> ad.Node:
    """sum_k w[b, k] * v[b, k, :] for weights [B, L] and values [B, L, d]."""
    values = ad.as_node(values)
    B, L, d = values.shape
    return ad.reshape(ad.matmul(ad.reshape(weights, (B, 1, L)), values), (B, d))


def long_term_interest(history, history_times, target, target_time, params: LongTermParameters,
                       mask=None, mode: str = "both"):
    """p_long = sum_j (a^c_j + a^t_j) x_j; ``mode`` selects one attention for ablations.

    Returns ``(p_long, a_c, a_t)``; the unused attention is None.
    """
    a_c = a_t = None
    if mode in ("both", "content"):
        a_c = content_attention(history, target, params.W_c, mask)
    if mode in ("both", "temporal"):
        a_t = temporal_attention(history_times, target_time, params.W_t, mask)
    if mode == "both":
        weights = ad.add(a_c, a_t)
    elif mode == "content":
        weights = a_c
    elif mode == "temporal":
        weights = a_t
    else:
        raise ValueError(f"unknown long-term mode {mode!r}")
    return weighted_sum(weights, history), a_c, a_t
