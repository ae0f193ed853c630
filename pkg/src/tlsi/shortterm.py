"""Short-term interest: an LSTM whose memory is gated by time features.

Per behavior k the adjacent-time feature ``delta = tanh(W_delta sim(t_{k-1}, t_k) + b)``
and span feature ``s = tanh(W_s sim(t_k, t_p) + b)`` drive two extra gates

    T_delta = sigmoid(W_xdelta x + W_tdelta delta + b_tdelta)
    T_s     = sigmoid(W_xs x + W_ts s + b_ts)

which scale the retained cell and the written candidate respectively, while
delta and s also enter the output gate. Everything that does not depend on
the recurrent state is computed for all steps up front; only ``U h`` is
evaluated inside the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .longterm import bilinear_scores, weighted_sum
from .temporal import N_FEATURES, DatasetClock, sim

INIT_SCALE = 0.05


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class ShortTermParameters:
    W_f: ad.Parameter
    W_i: ad.Parameter
    W_c: ad.Parameter
    W_o: ad.Parameter
    U_f: ad.Parameter
    U_i: ad.Parameter
    U_c: ad.Parameter
    U_o: ad.Parameter
    b_f: ad.Parameter
    b_i: ad.Parameter
    b_c: ad.Parameter
    b_o: ad.Parameter
    W_delta: ad.Parameter
    b_delta: ad.Parameter
    W_s: ad.Parameter
    b_s: ad.Parameter
    W_xdelta: ad.Parameter
    W_tdelta: ad.Parameter
    b_tdelta: ad.Parameter
    W_xs: ad.Parameter
    W_ts: ad.Parameter
    b_ts: ad.Parameter
    W_delta_o: ad.Parameter
    W_s_o: ad.Parameter
    W_h: ad.Parameter

    # parameters a vanilla LSTM (no time gates) does not read
    TIME_ONLY = ("W_delta", "b_delta", "W_s", "b_s", "W_xdelta", "W_tdelta", "b_tdelta",
                 "W_xs", "W_ts", "b_ts", "W_delta_o", "W_s_o")

    @classmethod
    def create(cls, d_b: int, d_h: int, rng: np.random.Generator, prefix: str = "short.") -> "ShortTermParameters":
        def w(shape):
            return rng.uniform(-INIT_SCALE, INIT_SCALE, shape)

        vals = {}
        for g in "fico":
            vals[f"W_{g}"] = w((d_h, d_b))
        for g in "fico":
            vals[f"U_{g}"] = orthogonal(rng, d_h)
        for g in "fico":
            vals[f"b_{g}"] = np.ones(d_h) if g == "f" else np.zeros(d_h)
        vals["W_delta"], vals["b_delta"] = w((d_h, N_FEATURES)), np.zeros(d_h)
        vals["W_s"], vals["b_s"] = w((d_h, N_FEATURES)), np.zeros(d_h)
        vals["W_xdelta"], vals["W_tdelta"], vals["b_tdelta"] = w((d_h, d_b)), w((d_h, d_h)), np.zeros(d_h)
        vals["W_xs"], vals["W_ts"], vals["b_ts"] = w((d_h, d_b)), w((d_h, d_h)), np.zeros(d_h)
        vals["W_delta_o"], vals["W_s_o"] = w((d_h, d_h)), w((d_h, d_h))
        vals["W_h"] = w((d_h, d_b))
        return cls(**{k: ad.Parameter(prefix + k, v) for k, v in vals.items()})

    def parameters(self, vanilla: bool = False, pooled: bool = True) -> list[ad.Parameter]:
        """Parameters read by the chosen configuration (``pooled``: attention over hidden states)."""
        return [getattr(self, f.name) for f in fields(self)
                if not (vanilla and f.name in self.TIME_ONLY) and (pooled or f.name != "W_h")]

    @property
    def d_h(self) -> int:
        return self.W_f.shape[0]


@dataclass
class LstmState:
    h: ad.Node
    c: ad.Node

    @classmethod
    def zeros(cls, batch: int, d_h: int) -> "LstmState":
        return cls(ad.const(np.zeros((batch, d_h))), ad.const(np.zeros((batch, d_h))))


def adjacent_feature(t_prev: int, t_k: int, params: ShortTermParameters, clock: DatasetClock) -> ad.Node:
    """delta for one behavior, shape [1, d_h]."""
    return ad.tanh(ad.linear(ad.const(sim(t_prev, t_k, clock)[None]), params.W_delta, params.b_delta))


def span_feature(t_k: int, t_p: int, params: ShortTermParameters, clock: DatasetClock) -> ad.Node:
    """s for one behavior relative to the prediction time, shape [1, d_h]."""
    return ad.tanh(ad.linear(ad.const(sim(t_k, t_p, clock)[None]), params.W_s, params.b_s))


def _stacked(params, names):
    return ad.concat([getattr(params, n) for n in names], axis=0)


def precompute(X, adj_sim, span_sim, params: ShortTermParameters, vanilla: bool = False):
    """State-independent parts of every step.

    X [..., d_b], sims [..., 8] (any leading layout). Returns
    ``(pre, T_delta, T_s)`` where ``pre`` [..., 4 d_h] holds the
    f/i/candidate/o pre-activations without the ``U h`` term; the T gates are
    None in vanilla mode.
    """
    if vanilla:
        pre = ad.linear(X, _stacked(params, ("W_f", "W_i", "W_c", "W_o")),
                        _stacked(params, ("b_f", "b_i", "b_c", "b_o")))
        return pre, None, None
    pre_fic = ad.linear(X, _stacked(params, ("W_f", "W_i", "W_c")), _stacked(params, ("b_f", "b_i", "b_c")))
    delta = ad.tanh(ad.linear(adj_sim, params.W_delta, params.b_delta))
    span = ad.tanh(ad.linear(span_sim, params.W_s, params.b_s))
    t_delta = ad.sigmoid(ad.add(ad.add(ad.linear(X, params.W_xdelta), ad.linear(delta, params.W_tdelta)),
                                params.b_tdelta))
    t_span = ad.sigmoid(ad.add(ad.add(ad.linear(X, params.W_xs), ad.linear(span, params.W_ts)), params.b_ts))
    pre_o = ad.add(ad.add(ad.linear(X, params.W_o, params.b_o), ad.linear(delta, params.W_delta_o)),
                   ad.linear(span, params.W_s_o))
    return ad.concat([pre_fic, pre_o], axis=-1), t_delta, t_span


def cell(pre_k, t_delta_k, t_span_k, state: LstmState, U_T) -> LstmState:
    """One recurrence step given the precomputed pre-activations of step k."""
    d_h = state.h.shape[-1]
    z = ad.add(pre_k, ad.matmul(state.h, U_T))
    gates = ad.sigmoid(z)
    f = ad.take_slice(gates, -1, 0, d_h)
    i = ad.take_slice(gates, -1, d_h, 2 * d_h)
    o = ad.take_slice(gates, -1, 3 * d_h, 4 * d_h)
    cand = ad.tanh(ad.take_slice(z, -1, 2 * d_h, 3 * d_h))
    if t_delta_k is not None:
        f = ad.mul(f, t_delta_k)
        i = ad.mul(i, t_span_k)
    c = ad.add(ad.mul(f, state.c), ad.mul(i, cand))
    h = ad.mul(o, ad.tanh(c))
    return LstmState(h, c)


def _recurrent_matrix(params):
    return ad.transpose(_stacked(params, ("U_f", "U_i", "U_c", "U_o")))


def step(x_k, adj_sim_k, span_sim_k, state: LstmState, params: ShortTermParameters,
         vanilla: bool = False) -> LstmState:
    """Advance one behavior. x_k [B, d_b], sims [B, 8]."""
    x_k = ad.as_node(x_k)
    if state.h.shape != (x_k.shape[0], params.d_h):
        raise ad.ShapeError(f"state shape {state.h.shape} does not match batch/hidden width")
    B = x_k.shape[0]
    pre, td, ts = precompute(ad.reshape(x_k, (B, 1, -1)), np.asarray(adj_sim_k).reshape(B, 1, -1),
                             np.asarray(span_sim_k).reshape(B, 1, -1), params, vanilla)
    k0 = (slice(None), 0)
    return cell(ad.index(pre, k0), None if td is None else ad.index(td, k0),
                None if ts is None else ad.index(ts, k0), state, _recurrent_matrix(params))


def unroll(X, adj_sim, span_sim, params: ShortTermParameters, vanilla: bool = False) -> ad.Node:
    """Hidden states [B, L, d_h] from a zero initial state."""
    X = ad.as_node(X)
    B, L, _ = X.shape
    if L < 1:
        raise ValueError("cannot unroll an empty history")
    # time-major so each step reads a contiguous [B, .] block
    pre, td, ts = precompute(ad.permute(X, (1, 0, 2)), np.swapaxes(adj_sim, 0, 1),
                             np.swapaxes(span_sim, 0, 1), params, vanilla)
    U_T = _recurrent_matrix(params)
    state = LstmState.zeros(B, params.d_h)
    hs = []
    for k in range(L):
        state = cell(ad.index(pre, k), None if td is None else ad.index(td, k),
                     None if ts is None else ad.index(ts, k), state, U_T)
        hs.append(state.h)
    return ad.stack(hs, axis=1)


def short_term_interest(hidden, target, W_h, mask=None):
    """Attention pooling of hidden states [B, L, d_h] against the target [B, d_b].

    Returns ``(p_short, a_s)``.
    """
    a_s = ad.softmax(bilinear_scores(hidden, W_h, target), mask)
    return weighted_sum(a_s, hidden), a_s


def last_hidden(hidden, lengths) -> ad.Node:
    """h at the last real position of each row."""
    hidden = ad.as_node(hidden)
    B, L, _ = hidden.shape
    onehot = np.zeros((B, L))
    onehot[np.arange(B), np.asarray(lengths) - 1] = 1.0
    return weighted_sum(ad.const(onehot), hidden)
