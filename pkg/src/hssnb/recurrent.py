"""Peephole-capable LSTM with explicit backpropagation through time.

Gate names: ``ib`` block input (tanh), ``ig`` input gate, ``fg`` forget gate,
``og`` output gate (all logistic).  One step::

    ib = tanh(W_ib x + R_ib o_prev + b_ib)
    ig = sig(W_ig x + R_ig o_prev + p_ig * c_prev + b_ig)
    fg = sig(W_fg x + R_fg o_prev + p_fg * c_prev + b_fg)
    c  = ib * ig + c_prev * fg
    og = sig(W_og x + R_og o_prev + p_og * c + b_og)
    o  = tanh(c) * og

The output-gate peephole looks at the *current* cell ``c``.  Peephole terms
only exist when ``peepholes`` is on.  Sequences are batched as ``(B, T, in)``;
unbatched ``(T, in)`` input is accepted and returned unbatched.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, glorot_init, sigmoid

GATES = ("ib", "ig", "fg", "og")
PEEPHOLES = ("ig", "fg", "og")


@dataclass
class LstmParams:
    W: dict  # gate -> (hidden, input_dim)
    R: dict  # gate -> (hidden, hidden)
    b: dict  # gate -> (hidden,)
    p: dict = field(default_factory=dict)  # gate -> (hidden,), only when peepholes are on

    @property
    def peepholes(self):
        return bool(self.p)

    @property
    def hidden(self):
        return self.b["ib"].shape[0]

    @property
    def input_dim(self):
        return self.W["ib"].shape[1]

    @property
    def parameter_count(self):
        return sum(a.size for a in self.params().values())

    def params(self):
        """Flat name -> array view, in a fixed declaration order."""
        out = {}
        for g in GATES:
            out[f"W_{g}"] = self.W[g]
            out[f"R_{g}"] = self.R[g]
            out[f"b_{g}"] = self.b[g]
        for g in PEEPHOLES:
            if g in self.p:
                out[f"p_{g}"] = self.p[g]
        return out


def init_lstm(input_dim, hidden, rng, peepholes=False, dtype=np.float64):
    W, R, b, p = {}, {}, {}, {}
    for g in GATES:
        W[g] = glorot_init((hidden, input_dim), input_dim, hidden, rng, dtype)
        R[g] = glorot_init((hidden, hidden), hidden, hidden, rng, dtype)
        b[g] = np.zeros(hidden, dtype=dtype)
    if peepholes:
        for g in PEEPHOLES:
            p[g] = np.zeros(hidden, dtype=dtype)
    return LstmParams(W, R, b, p)


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.params().items()}


def _check_step(params, x, o_prev, c_prev):
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input width {x.shape[-1]} != input_dim {params.input_dim}")
    h = params.hidden
    if o_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise ShapeError(f"state widths {o_prev.shape}, {c_prev.shape} != hidden {h}")


def lstm_step(params, x, o_prev, c_prev):
    """One time step.  Returns ``(o, c, step_cache)``."""
    _check_step(params, x, o_prev, c_prev)
    W, R, b, p = params.W, params.R, params.b, params.p
    pre = {g: x @ W[g].T + o_prev @ R[g].T + b[g] for g in GATES}
    if p:
        pre["ig"] = pre["ig"] + p["ig"] * c_prev
        pre["fg"] = pre["fg"] + p["fg"] * c_prev
    ib = np.tanh(pre["ib"])
    ig = sigmoid(pre["ig"])
    fg = sigmoid(pre["fg"])
    c = ib * ig + c_prev * fg
    if p:
        pre["og"] = pre["og"] + p["og"] * c
    og = sigmoid(pre["og"])
    tc = np.tanh(c)
    o = tc * og
    step = {"x": x, "pre": pre, "ib": ib, "ig": ig, "fg": fg, "og": og,
            "c": c, "tanh_c": tc, "o": o, "c_prev": c_prev, "o_prev": o_prev}
    return o, c, step


def lstm_forward(params, sequence):
    """Run from zero state.  Returns ``(outputs, cache)`` with outputs ``(B, T, hidden)``."""
    seq = np.asarray(sequence)
    unbatched = seq.ndim == 2
    if unbatched:
        seq = seq[None]
    if seq.ndim != 3:
        raise ShapeError(f"sequence must be (B, T, in) or (T, in), got {np.shape(sequence)}")
    bsz, T, _ = seq.shape
    if T < 1:
        raise ValueError("sequence must have at least one timestep")
    o = np.zeros((bsz, params.hidden), dtype=seq.dtype)
    c = np.zeros_like(o)
    steps = []
    outs = np.empty((bsz, T, params.hidden), dtype=np.result_type(seq, params.W["ib"]))
    for t in range(T):
        o, c, st = lstm_step(params, seq[:, t], o, c)
        steps.append(st)
        outs[:, t] = o
    cache = {"steps": steps, "unbatched": unbatched}
    return (outs[0] if unbatched else outs), cache


def lstm_bptt(params, cache, upstream):
    """Gradients of ``sum(upstream * outputs)``.

    Returns ``(param_grads, input_grads)``; ``param_grads`` uses the same keys
    as :meth:`LstmParams.params`.
    """
    steps = cache["steps"]
    up = np.asarray(upstream)
    if cache["unbatched"]:
        up = up[None]
    T = len(steps)
    if up.ndim != 3 or up.shape[1] != T or up.shape[2] != params.hidden:
        raise ShapeError(f"upstream {np.shape(upstream)} does not match {T} steps x {params.hidden}")

    W, R, p = params.W, params.R, params.p
    grads = zeros_like_params(params)
    dx = np.zeros((up.shape[0], T, params.input_dim), dtype=up.dtype)

    zero = np.zeros_like(up[:, 0])
    d_next = {g: zero for g in GATES}  # gate deltas at t+1
    dc_next = zero
    fg_next = zero

    for t in reversed(range(T)):
        st = steps[t]
        dy = up[:, t].copy()
        for g in GATES:
            dy += d_next[g] @ R[g]
        og, ig, fg, ib = st["og"], st["ig"], st["fg"], st["ib"]
        d_og = dy * st["tanh_c"] * og * (1 - og)
        dc = dy * og * (1 - st["tanh_c"] ** 2) + dc_next * fg_next
        if p:
            dc = dc + p["og"] * d_og + p["ig"] * d_next["ig"] + p["fg"] * d_next["fg"]
        d_fg = dc * st["c_prev"] * fg * (1 - fg)
        d_ig = dc * ib * ig * (1 - ig)
        d_ib = dc * ig * (1 - ib ** 2)
        d = {"ib": d_ib, "ig": d_ig, "fg": d_fg, "og": d_og}

        x, o_prev = st["x"], st["o_prev"]
        for g in GATES:
            dx[:, t] += d[g] @ W[g]
            grads[f"W_{g}"] += d[g].T @ x
            grads[f"R_{g}"] += d[g].T @ o_prev
            grads[f"b_{g}"] += d[g].sum(axis=0)
        if p:
            grads["p_ig"] += (st["c_prev"] * d_ig).sum(axis=0)
            grads["p_fg"] += (st["c_prev"] * d_fg).sum(axis=0)
            grads["p_og"] += (st["c"] * d_og).sum(axis=0)

        d_next, dc_next, fg_next = d, dc, fg

    return grads, (dx[0] if cache["unbatched"] else dx)


# ---------------------------------------------------------------- bidirectional


@dataclass
class BiLstmLayer:
    forward_params: LstmParams
    backward_params: LstmParams
    mode: str = "sequence"  # or "last"

    def __post_init__(self):
        if self.mode not in ("sequence", "last"):
            raise ValueError(f"mode must be 'sequence' or 'last', got {self.mode!r}")

    @property
    def hidden(self):
        return self.forward_params.hidden

    @property
    def parameter_count(self):
        return self.forward_params.parameter_count + self.backward_params.parameter_count

    def params(self):
        out = {f"fw.{k}": v for k, v in self.forward_params.params().items()}
        out.update({f"bw.{k}": v for k, v in self.backward_params.params().items()})
        return out


def init_bilstm(input_dim, hidden, rng, mode="sequence", peepholes=False, dtype=np.float64):
    fw = init_lstm(input_dim, hidden, rng, peepholes, dtype)
    bw = init_lstm(input_dim, hidden, rng, peepholes, dtype)
    return BiLstmLayer(fw, bw, mode)


def bilstm_forward(layer, sequence):
    """``mode='sequence'`` -> ``(B, T, 2h)``; ``mode='last'`` -> ``(B, 2h)``."""
    seq = np.asarray(sequence)
    unbatched = seq.ndim == 2
    if unbatched:
        seq = seq[None]
    out_f, cache_f = lstm_forward(layer.forward_params, seq)
    out_b, cache_b = lstm_forward(layer.backward_params, seq[:, ::-1])
    if layer.mode == "sequence":
        out = np.concatenate([out_f, out_b[:, ::-1]], axis=-1)
    else:
        out = np.concatenate([out_f[:, -1], out_b[:, -1]], axis=-1)
    cache = {"fw": cache_f, "bw": cache_b, "T": seq.shape[1], "unbatched": unbatched}
    return (out[0] if unbatched else out), cache


def bilstm_backward(layer, cache, upstream):
    """Returns ``(param_grads, input_grads)``; grads keyed like :meth:`BiLstmLayer.params`."""
    up = np.asarray(upstream)
    if cache["unbatched"]:
        up = up[None]
    h, T = layer.hidden, cache["T"]
    if layer.mode == "sequence":
        if up.shape[1:] != (T, 2 * h):
            raise ShapeError(f"upstream {up.shape[1:]} does not match ({T}, {2 * h})")
        up_f = up[..., :h]
        up_b = up[:, ::-1, h:]
    else:
        if up.shape[1:] != (2 * h,):
            raise ShapeError(f"upstream {up.shape[1:]} does not match ({2 * h},)")
        up_f = np.zeros((up.shape[0], T, h), dtype=up.dtype)
        up_b = np.zeros_like(up_f)
        up_f[:, -1] = up[:, :h]
        up_b[:, -1] = up[:, h:]
    g_f, dx_f = lstm_bptt(layer.forward_params, cache["fw"], up_f)
    g_b, dx_b = lstm_bptt(layer.backward_params, cache["bw"], up_b)
    grads = {f"fw.{k}": v for k, v in g_f.items()}
    grads.update({f"bw.{k}": v for k, v in g_b.items()})
    dx = dx_f + dx_b[:, ::-1]
    return grads, (dx[0] if cache["unbatched"] else dx)


# ---------------------------------------------------------------- dropout


@dataclass
class DropoutLayer:
    rate: float = 0.25

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


def dropout_forward(layer, x, training, rng=None):
    """Inverted dropout.  Returns ``(output, mask)``; the mask already carries the 1/(1-rate) scale."""
    if not training or layer.rate == 0:
        return x, None
    keep = rng.random(x.shape) >= layer.rate
    mask = keep.astype(x.dtype) / (1.0 - layer.rate)
    return x * mask, mask


def dropout_backward(mask, upstream):
    return upstream if mask is None else upstream * mask
