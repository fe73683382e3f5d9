import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hssnb.recurrent import (BiLstmLayer, DropoutLayer, LstmParams, bilstm_backward, bilstm_forward,
                             dropout_backward, dropout_forward, init_bilstm, init_lstm, lstm_bptt,
                             lstm_forward, lstm_step)
from hssnb.tensor import ShapeError, make_rng

from conftest import central_diff, rel_err


def random_params(input_dim, hidden, peepholes, seed, scale=0.7):
    r = make_rng(seed)
    p = init_lstm(input_dim, hidden, r, peepholes)
    for v in p.params().values():
        v[...] = r.normal(0, scale, v.shape)
    return p


def cast(p, dtype):
    f = lambda d: {k: v.astype(dtype) for k, v in d.items()}
    return LstmParams(f(p.W), f(p.R), f(p.b), f(p.p))


def scalar_step(p, x, o_prev, c_prev):
    """Unit-by-unit transcription using only ``math``; an independent oracle."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    H = p.hidden

    def pre(g, j):
        s = float(p.b[g][j])
        s += sum(float(p.W[g][j, k]) * float(x[k]) for k in range(len(x)))
        s += sum(float(p.R[g][j, k]) * float(o_prev[k]) for k in range(H))
        return s

    c, o = [0.0] * H, [0.0] * H
    for j in range(H):
        peep = lambda g: float(p.p[g][j]) if p.p else 0.0
        zb = math.tanh(pre("ib", j))
        ig = sig(pre("ig", j) + peep("ig") * c_prev[j])
        fg = sig(pre("fg", j) + peep("fg") * c_prev[j])
        c[j] = zb * ig + c_prev[j] * fg
    for j in range(H):
        peep = float(p.p["og"][j]) if p.p else 0.0
        og = sig(pre("og", j) + peep * c[j])
        o[j] = math.tanh(c[j]) * og
    return np.array(o), np.array(c)


# ------------------------------------------------------------ step / forward

def test_zero_weights_zero_state():
    p = init_lstm(3, 4, make_rng(0))
    for v in p.params().values():
        v[...] = 0
    o, c, st_ = lstm_step(p, np.ones(3), np.zeros(4), np.zeros(4))
    for g in ("ig", "fg", "og"):
        assert np.all(st_[g] == 0.5)
    assert not c.any() and not o.any()


def test_zero_weights_halves_cell():
    p = init_lstm(3, 4, make_rng(0))
    for v in p.params().values():
        v[...] = 0
    cprev = np.array([1.0, -2.0, 0.5, 3.0])
    _, c, _ = lstm_step(p, np.ones(3), np.zeros(4), cprev)
    assert np.array_equal(c, 0.5 * cprev)


@pytest.mark.parametrize("peepholes", [False, True])
def test_step_matches_scalar_oracle(peepholes):
    p = random_params(3, 4, peepholes, seed=1)
    r = make_rng(2)
    x, o_prev, c_prev = r.normal(size=3), r.normal(size=4), r.normal(size=4)
    o, c, _ = lstm_step(p, x, o_prev, c_prev)
    o_ref, c_ref = scalar_step(p, x, o_prev, c_prev)
    assert np.abs(o - o_ref).max() < 1e-12
    assert np.abs(c - c_ref).max() < 1e-12


def test_step_shape_errors():
    p = init_lstm(3, 4, make_rng(0))
    with pytest.raises(ShapeError):
        lstm_step(p, np.ones(2), np.zeros(4), np.zeros(4))
    with pytest.raises(ShapeError):
        lstm_step(p, np.ones(3), np.zeros(5), np.zeros(4))


def test_forward_single_step_equals_step():
    p = random_params(3, 4, True, seed=3)
    x = make_rng(4).normal(size=(1, 3))
    out, _ = lstm_forward(p, x)
    o, _, _ = lstm_step(p, x[0], np.zeros(4), np.zeros(4))
    assert np.array_equal(out[0], o)


def test_constant_input_no_recurrence_gives_constant_preactivations():
    p = random_params(3, 4, False, seed=5)
    for g in p.R:
        p.R[g][...] = 0
    x = np.tile(make_rng(6).normal(size=3), (6, 1))
    _, cache = lstm_forward(p, x)
    first = cache["steps"][0]["pre"]
    for st_ in cache["steps"][1:]:
        for g in first:
            assert np.array_equal(st_["pre"][g], first[g])


@pytest.mark.parametrize("peepholes", [False, True])
def test_forward_matches_loop_oracle(peepholes):
    p = random_params(3, 4, peepholes, seed=7)
    seq = make_rng(8).normal(size=(5, 3))
    out, _ = lstm_forward(p, seq)
    o, c = np.zeros(4), np.zeros(4)
    for t in range(5):
        o, c = scalar_step(p, seq[t], o, c)
    assert np.abs(out[-1] - o).max() < 1e-12


def test_forward_rejects_empty_sequence():
    with pytest.raises(ValueError):
        lstm_forward(init_lstm(3, 2, make_rng(0)), np.zeros((0, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.booleans())
def test_activation_ranges(seed, peepholes):
    p = random_params(3, 5, peepholes, seed, scale=2.0)
    _, cache = lstm_forward(p, make_rng(seed + 1).normal(size=(6, 3)) * 3)
    for s in cache["steps"]:
        for g in ("ig", "fg", "og"):
            assert np.all((s[g] >= 0) & (s[g] <= 1))
        assert np.all(np.abs(s["ib"]) <= 1) and np.all(np.abs(s["tanh_c"]) <= 1)


def test_parameter_count_formula():
    for peep in (False, True):
        p = init_lstm(7, 5, make_rng(0), peep)
        assert p.parameter_count == 4 * (5 * 7 + 5 * 5 + 5) + (3 * 5 if peep else 0)


# ------------------------------------------------------------ BPTT

def test_bptt_zero_upstream():
    p = random_params(3, 4, True, seed=9)
    out, cache = lstm_forward(p, make_rng(1).normal(size=(4, 3)))
    grads, dx = lstm_bptt(p, cache, np.zeros_like(out))
    assert not dx.any()
    assert all(not g.any() for g in grads.values())


def test_bptt_single_step_has_no_recurrent_grad():
    p = random_params(3, 4, False, seed=10)
    out, cache = lstm_forward(p, make_rng(1).normal(size=(1, 3)))
    grads, _ = lstm_bptt(p, cache, np.ones_like(out))
    for g in ("ib", "ig", "fg", "og"):
        assert not grads[f"R_{g}"].any()
    # c_prev = 0 at the first step, so only the forget gate sees no signal
    for g in ("ib", "ig", "og"):
        assert grads[f"W_{g}"].any()
    assert not grads["W_fg"].any()


def test_bptt_length_mismatch():
    p = random_params(3, 4, False, seed=10)
    out, cache = lstm_forward(p, np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        lstm_bptt(p, cache, np.zeros((4, 4)))


def lstm_fd_errors(p, seq, upstream=None):
    out, cache = lstm_forward(p, seq)
    up = np.ones_like(out) if upstream is None else upstream
    grads, dx = lstm_bptt(p, cache, up)
    lp = cast(p, np.longdouble)
    lseq = seq.astype(np.longdouble)
    lup = up.astype(np.longdouble)
    loss = lambda: np.sum(lstm_forward(lp, lseq)[0] * lup)
    names = list(lp.params())
    numeric = central_diff(loss, [lp.params()[k] for k in names] + [lseq], eps=1e-5)
    errs = {k: rel_err(grads[k], n) for k, n in zip(names, numeric)}
    errs["input"] = rel_err(dx, numeric[-1])
    return errs


@pytest.mark.parametrize("peepholes", [False, True])
def test_bptt_finite_differences(peepholes):
    p = random_params(3, 5, peepholes, seed=21)
    errs = lstm_fd_errors(p, make_rng(22).normal(size=(4, 3)))
    assert max(errs.values()) < 1e-6, errs


@pytest.mark.parametrize("peepholes", [False, True])
def test_bptt_batched_weighted_upstream(peepholes):
    p = random_params(2, 3, peepholes, seed=23)
    r = make_rng(24)
    errs = lstm_fd_errors(p, r.normal(size=(3, 6, 2)), r.normal(size=(3, 6, 3)))
    assert max(errs.values()) < 1e-6, errs


# ------------------------------------------------------------ bidirectional

def test_full_size_bilstm_shapes_and_counts():
    r = make_rng(0)
    l1 = init_bilstm(1920, 64, r, "sequence")
    out, _ = bilstm_forward(l1, r.normal(size=(15, 1920)))
    assert out.shape == (15, 128) and l1.parameter_count == 1016320
    l2 = init_bilstm(128, 64, r, "last")
    out2, _ = bilstm_forward(l2, out)
    assert out2.shape == (128,) and l2.parameter_count == 98816


def test_palindrome_mirror():
    p = random_params(3, 4, True, seed=30)
    half = make_rng(31).normal(size=(3, 3))
    seq = np.concatenate([half, half[::-1]])
    layer = BiLstmLayer(p, p, "sequence")
    out, _ = bilstm_forward(layer, seq)
    fw_only, _ = lstm_forward(p, seq)
    assert np.allclose(out[:, :4], fw_only)
    assert np.allclose(out[:, 4:], out[::-1, :4], atol=1e-14)


def test_reversal_consistency():
    fw = random_params(3, 4, False, seed=32)
    bw = random_params(3, 4, False, seed=33)
    seq = make_rng(34).normal(size=(5, 3))
    out, _ = bilstm_forward(BiLstmLayer(fw, bw, "sequence"), seq)
    rev, _ = lstm_forward(bw, seq[::-1])
    assert np.array_equal(out[:, 4:], rev[::-1])
    last, _ = bilstm_forward(BiLstmLayer(fw, bw, "last"), seq)
    assert np.array_equal(last[:4], out[-1, :4])
    assert np.array_equal(last[4:], out[0, 4:])


def test_bilstm_zero_upstream():
    layer = init_bilstm(3, 4, make_rng(0), "sequence", peepholes=True)
    out, cache = bilstm_forward(layer, make_rng(1).normal(size=(5, 3)))
    grads, dx = bilstm_backward(layer, cache, np.zeros_like(out))
    assert not dx.any() and all(not g.any() for g in grads.values())


def test_last_mode_forward_half_only():
    layer = init_bilstm(3, 4, make_rng(0), "last")
    out, cache = bilstm_forward(layer, make_rng(1).normal(size=(5, 3)))
    up = np.zeros_like(out)
    up[:4] = 1.0
    grads, _ = bilstm_backward(layer, cache, up)
    assert all(not v.any() for k, v in grads.items() if k.startswith("bw."))
    assert any(v.any() for k, v in grads.items() if k.startswith("fw."))


@pytest.mark.parametrize("mode", ["sequence", "last"])
@pytest.mark.parametrize("peepholes", [False, True])
def test_bilstm_finite_differences(mode, peepholes):
    layer = BiLstmLayer(random_params(3, 4, peepholes, 40), random_params(3, 4, peepholes, 41), mode)
    r = make_rng(42)
    seq = r.normal(size=(2, 5, 3))
    out, cache = bilstm_forward(layer, seq)
    up = r.normal(size=out.shape)
    grads, dx = bilstm_backward(layer, cache, up)

    ll = BiLstmLayer(cast(layer.forward_params, np.longdouble), cast(layer.backward_params, np.longdouble), mode)
    lseq, lup = seq.astype(np.longdouble), up.astype(np.longdouble)
    loss = lambda: np.sum(bilstm_forward(ll, lseq)[0] * lup)
    names = list(ll.params())
    numeric = central_diff(loss, [ll.params()[k] for k in names] + [lseq])
    errs = {k: rel_err(grads[k], n) for k, n in zip(names, numeric)}
    errs["input"] = rel_err(dx, numeric[-1])
    assert max(errs.values()) < 1e-6, errs


def test_bilstm_upstream_shape_error():
    layer = init_bilstm(3, 4, make_rng(0), "last")
    _, cache = bilstm_forward(layer, np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        bilstm_backward(layer, cache, np.zeros(4))


# ------------------------------------------------------------ dropout

def test_dropout_inference_identity(rng):
    x = rng.normal(size=(4, 5))
    out, mask = dropout_forward(DropoutLayer(0.25), x, False, rng)
    assert out is x and mask is None


def test_dropout_rate_zero(rng):
    x = rng.normal(size=(4, 5))
    for training in (True, False):
        out, _ = dropout_forward(DropoutLayer(0.0), x, training, rng)
        assert np.array_equal(out, x)


def test_dropout_expectation():
    out, _ = dropout_forward(DropoutLayer(0.25), np.ones(10**6), True, make_rng(5))
    assert abs(out.mean() - 1.0) < 0.005
    assert set(np.unique(out)) <= {0.0, 1 / 0.75}


def test_dropout_backward_uses_same_mask(rng):
    x = rng.normal(size=(3, 7))
    out, mask = dropout_forward(DropoutLayer(0.5), x, True, rng)
    up = rng.normal(size=x.shape)
    assert np.array_equal(dropout_backward(mask, up), up * (out / np.where(x == 0, 1, x)))
    assert np.array_equal(dropout_backward(mask, up), up * mask)


def test_dropout_rate_validation():
    with pytest.raises(ValueError):
        DropoutLayer(1.0)
