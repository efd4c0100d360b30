import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsds import nn
from dsds.nn import (BiEncoderParams, BiLSTMRun, ConfigurationError, LstmCellParams, RowGrad,
                     bi_encode, clip_grads, grad_check, grad_check_tensors, lstm_cell_step,
                     sgd_step, softmax_xent)


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_step(x, h, c, p: LstmCellParams):
    """Oracle: gate equations written out element by element."""
    H, D = p.hidden, p.input_size
    z = [p.b[k] + sum(x[d] * p.W[d, k] for d in range(D)) + sum(h[j] * p.U[j, k] for j in range(H))
         for k in range(4 * H)]
    h_new, c_new = [], []
    for j in range(H):
        i, f, o = _sig(z[j]), _sig(z[H + j]), _sig(z[2 * H + j])
        g = math.tanh(z[3 * H + j])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return np.array(h_new), np.array(c_new)


def scalar_encode(xs, p: BiEncoderParams):
    """Oracle: two independent unidirectional passes, composed per position."""
    H = p.hidden
    n = len(xs)
    fw, bw = [None] * n, [None] * n
    h, c = np.zeros(H), np.zeros(H)
    for t in range(n):
        h, c = scalar_step(xs[t], h, c, p.forward)
        fw[t] = h
    h, c = np.zeros(H), np.zeros(H)
    for t in reversed(range(n)):
        h, c = scalar_step(xs[t], h, c, p.backward)
        bw[t] = h
    return np.array([np.concatenate([f, b]) for f, b in zip(fw, bw)])


def rand_cell(rng, D, H, scale=0.5):
    return LstmCellParams(rng.normal(0, scale, (D, 4 * H)), rng.normal(0, scale, (H, 4 * H)),
                          rng.normal(0, scale, 4 * H))


def rand_bi(rng, D, H, scale=0.5):
    return BiEncoderParams.from_cells(rand_cell(rng, D, H, scale), rand_cell(rng, D, H, scale))


# -- cell -------------------------------------------------------------------

def test_zero_weights_give_zero_state():
    p = LstmCellParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    h, c = lstm_cell_step(np.array([0.3, -1.0, 2.0]), np.zeros(2), np.zeros(2), p)
    assert np.all(h == 0) and np.all(c == 0)


def test_scalar_hand_computation():
    b = np.zeros(4)
    b[1] = 10.0
    p = LstmCellParams(np.zeros((1, 4)), np.zeros((1, 4)), b)
    h, c = lstm_cell_step([1.0], [0.0], [1.0], p)
    assert c[0] == pytest.approx(_sig(10.0), abs=1e-15)
    assert c[0] == pytest.approx(0.99995, abs=1e-5)
    assert h[0] == pytest.approx(0.5 * math.tanh(c[0]), abs=1e-15)
    assert h[0] == pytest.approx(0.3808, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_cell_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    p = rand_cell(rng, 4, 3)
    x, h0, c0 = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
    h, c = lstm_cell_step(x, h0, c0, p)
    ho, co = scalar_step(x, h0, c0, p)
    np.testing.assert_allclose(h, ho, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c, co, rtol=0, atol=1e-12)


def test_cell_dimension_mismatch():
    p = LstmCellParams.init(np.random.default_rng(0), 3, 2)
    with pytest.raises(ConfigurationError):
        lstm_cell_step(np.zeros(4), np.zeros(2), np.zeros(2), p)


def test_forget_bias_init():
    p = LstmCellParams.init(np.random.default_rng(0), 3, 2)
    assert np.all(p.gate("f")[2] == 1.0)
    assert np.all(p.gate("i")[2] == 0.0)


# -- bidirectional encoder ----------------------------------------------------

def test_length_one_is_forward_and_backward_state():
    rng = np.random.default_rng(1)
    p = rand_bi(rng, 3, 2)
    x = rng.normal(size=(1, 3))
    hf, _ = lstm_cell_step(x[0], np.zeros(2), np.zeros(2), p.forward)
    hb, _ = lstm_cell_step(x[0], np.zeros(2), np.zeros(2), p.backward)
    np.testing.assert_allclose(bi_encode(x, p)[0], np.concatenate([hf, hb]), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 7])
def test_bi_encode_matches_composition_oracle(n):
    rng = np.random.default_rng(n)
    p = rand_bi(rng, 4, 3)
    xs = rng.normal(size=(n, 4))
    np.testing.assert_allclose(bi_encode(xs, p), scalar_encode(xs, p), rtol=0, atol=1e-12)


def test_reversal_swaps_halves():
    rng = np.random.default_rng(2)
    f, b = rand_cell(rng, 3, 2), rand_cell(rng, 3, 2)
    xs = rng.normal(size=(5, 3))
    out = bi_encode(xs, BiEncoderParams.from_cells(f, b))
    swapped = bi_encode(xs[::-1], BiEncoderParams.from_cells(b, f))[::-1]
    np.testing.assert_allclose(out[:, :2], swapped[:, 2:], atol=1e-12)
    np.testing.assert_allclose(out[:, 2:], swapped[:, :2], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 8), i=st.integers(0, 7), seed=st.integers(0, 10 ** 6))
def test_causality(n, i, seed):
    i = i % n
    rng = np.random.default_rng(seed)
    p = rand_bi(rng, 3, 2)
    xs = rng.normal(size=(n, 3))
    base = bi_encode(xs, p)
    later, earlier = xs.copy(), xs.copy()
    later[i + 1:] += rng.normal(size=later[i + 1:].shape)
    earlier[:i] += rng.normal(size=earlier[:i].shape)
    assert np.array_equal(bi_encode(later, p)[i, :2], base[i, :2])
    assert np.array_equal(bi_encode(earlier, p)[i, 2:], base[i, 2:])


def test_empty_sequence_rejected():
    p = BiEncoderParams.init(np.random.default_rng(0), 3, 2)
    with pytest.raises(ValueError):
        bi_encode(np.zeros((0, 3)), p)


@pytest.mark.parametrize("kernel", ["compiled", "numpy"])
def test_padded_batch_equals_single_sequences(kernel):
    rng = np.random.default_rng(3)
    p = rand_bi(rng, 3, 2)
    lens = [4, 1, 3]
    X = np.zeros((4, 3, 3))
    seqs = [rng.normal(size=(n, 3)) for n in lens]
    for b, s in enumerate(seqs):
        X[:len(s), b] = s
    run = BiLSTMRun(p, X, lens, kernel=kernel)
    out = run.outputs()
    for b, s in enumerate(seqs):
        ref = scalar_encode(s, p)
        np.testing.assert_allclose(out[:len(s), b], ref, atol=1e-12)
        np.testing.assert_allclose(run.final[b], np.concatenate([ref[-1, :2], ref[0, 2:]]), atol=1e-12)


def test_compiled_and_numpy_kernels_agree():
    rng = np.random.default_rng(4)
    p = rand_bi(rng, 5, 4)
    X = rng.normal(size=(6, 3, 5))
    lens = [6, 2, 5]
    a = BiLSTMRun(p, X, lens, kernel="compiled")
    b = BiLSTMRun(p, X, lens, kernel="numpy")
    np.testing.assert_allclose(a.outputs(), b.outputs(), atol=1e-13)
    d_out, d_fin = rng.normal(size=(6, 3, 8)), rng.normal(size=(3, 8))
    for ga, gb in zip(a.backward(d_out, d_fin), b.backward(d_out, d_fin)):
        np.testing.assert_allclose(ga, gb, atol=1e-12)


@pytest.mark.parametrize("kernel", ["compiled", "numpy"])
def test_encoder_gradients_finite_difference(kernel):
    rng = np.random.default_rng(5)
    p = rand_bi(rng, 3, 2)
    X = rng.normal(size=(4, 2, 3))
    lens = [4, 3]
    Wo, Wf = rng.normal(size=(4, 2, 4)), rng.normal(size=(2, 4))
    params = {"W": p.W, "U": p.U, "b": p.b, "X": X}

    def loss_and_grad():
        run = BiLSTMRun(BiEncoderParams(params["W"], params["U"], params["b"]), params["X"], lens, kernel)
        out = run.outputs() * run.mask[..., None]
        loss = float((out * Wo).sum() + (run.final * Wf).sum())
        dX, dW, dU, db = run.backward(Wo, Wf)
        return loss, {"W": dW, "U": dU, "b": db, "X": dX * run.mask[..., None]}

    assert max(grad_check_tensors(loss_and_grad, params).values()) < 1e-8


# -- loss, optimizer, checker -----------------------------------------------------

def test_uniform_logits_loss_is_ln12():
    loss, _ = softmax_xent(np.zeros(12), 3)
    assert loss == pytest.approx(math.log(12), abs=1e-12)


def test_dominant_gold_logit_loss_vanishes():
    z = np.zeros(12)
    z[4] = 50.0
    assert softmax_xent(z, 4)[0] < 1e-20


@pytest.mark.parametrize("seed", range(5))
def test_softmax_gradient(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 2, size=12)
    gold = int(rng.integers(12))
    _, g = softmax_xent(z, gold)
    assert abs(g.sum()) < 1e-12
    num = np.empty(12)
    for k in range(12):
        e = np.zeros(12)
        e[k] = 1e-5
        num[k] = (softmax_xent(z + e, gold)[0] - softmax_xent(z - e, gold)[0]) / 2e-5
    assert np.max(np.abs(num - g)) < 1e-7


def test_softmax_bad_gold():
    with pytest.raises(IndexError):
        softmax_xent(np.zeros(12), 12)


def test_sgd_examples():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([2.0])}, 0.1)
    assert p["w"][0] == pytest.approx(0.8, abs=1e-15)
    q = {"w": np.array([1.0, 2.0])}
    sgd_step(q, {"w": np.array([5.0, -3.0])}, 0.0)
    assert q["w"].tolist() == [1.0, 2.0]


def test_sgd_converges_on_quadratic():
    p = {"w": np.array([3.0, -2.0])}
    for _ in range(200):
        sgd_step(p, {"w": 2 * p["w"]}, 0.1)
    assert np.all(np.abs(p["w"]) < 1e-12)


def test_sgd_shape_mismatch():
    with pytest.raises(ConfigurationError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)


def test_row_grad_sparse_update_equals_dense():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(6, 3))
    idx, vals = [1, 4, 1], rng.normal(size=(3, 3))
    g = RowGrad(idx, vals)
    dense = np.zeros_like(E)
    np.add.at(dense, idx, vals)
    np.testing.assert_allclose(g.dense(E.shape), dense)
    a, b = {"E": E.copy()}, {"E": E.copy()}
    sgd_step(a, {"E": g}, 0.1)
    sgd_step(b, {"E": dense}, 0.1)
    np.testing.assert_allclose(a["E"], b["E"], atol=1e-15)


def test_clip_grads_global_norm():
    grads = {"a": np.array([3.0]), "b": RowGrad([0], [[4.0]])}
    assert clip_grads(grads, 1.0) == pytest.approx(5.0)
    assert nn.grad_norm(grads) == pytest.approx(1.0)
    with pytest.raises(nn.NumericalError):
        clip_grads({"a": np.array([np.nan])}, 1.0)


def test_grad_check_linear_loss():
    params = {"w": np.random.default_rng(0).normal(size=(3, 2))}
    assert grad_check(lambda: (float(params["w"].sum()), {"w": np.ones((3, 2))}), params) < 1e-10


def test_grad_check_restores_parameters():
    w = np.random.default_rng(0).normal(size=4)
    params = {"w": w.copy()}
    grad_check(lambda: (float((params["w"] ** 2).sum()), {"w": 2 * params["w"]}), params)
    assert np.array_equal(params["w"], w)


def test_grad_check_detects_wrong_gradient():
    params = {"w": np.ones(3)}
    assert grad_check(lambda: (float((params["w"] ** 2).sum()), {"w": params["w"]}), params) > 0.1


@pytest.mark.parametrize("eps", [0.0, -1e-5])
def test_grad_check_rejects_nonpositive_eps(eps):
    params = {"w": np.ones(2)}
    with pytest.raises(ConfigurationError):
        grad_check(lambda: (0.0, {"w": np.zeros(2)}), params, eps)
