"""Dense float64 building blocks: LSTM cells, a bidirectional encoder with
hand-written backpropagation, softmax cross-entropy, SGD and a gradient checker.

Row-vector convention throughout: a gate pre-activation is ``x @ W + h @ U + b``
with ``W`` of shape (input, 4*hidden) and gates stacked in the order
input, forget, output, candidate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ConfigurationError(ValueError):
    """Raised on inconsistent dimensions or invalid hyper-parameters."""


class NumericalError(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape or (fan_in, fan_out)).astype(DTYPE)


@dataclass
class LstmCellParams:
    W: np.ndarray  # (input, 4H)
    U: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str):
        """Return (W, U, b) slices for one of ``i``, ``f``, ``o``, ``g``."""
        k = "ifog".index(name)
        H = self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]

    def validate(self):
        H = self.hidden
        if self.U.shape != (H, 4 * H) or self.W.shape[1] != 4 * H or self.b.shape != (4 * H,):
            raise ConfigurationError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @classmethod
    def init(cls, rng, input_size: int, hidden: int, forget_bias: float = 1.0):
        W = np.concatenate([glorot(rng, input_size, hidden) for _ in range(4)], axis=1)
        U = np.concatenate([glorot(rng, hidden, hidden) for _ in range(4)], axis=1)
        b = np.zeros(4 * hidden, dtype=DTYPE)
        b[hidden:2 * hidden] = forget_bias
        return cls(W, U, b)


@dataclass
class BiEncoderParams:
    """Forward and backward cells stored stacked along a leading axis of size 2."""
    W: np.ndarray  # (2, input, 4H)
    U: np.ndarray  # (2, H, 4H)
    b: np.ndarray  # (2, 4H)

    @property
    def forward(self) -> LstmCellParams:
        return LstmCellParams(self.W[0], self.U[0], self.b[0])

    @property
    def backward(self) -> LstmCellParams:
        return LstmCellParams(self.W[1], self.U[1], self.b[1])

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @classmethod
    def from_cells(cls, fwd: LstmCellParams, bwd: LstmCellParams):
        if fwd.W.shape != bwd.W.shape or fwd.U.shape != bwd.U.shape:
            raise ConfigurationError("forward and backward cells differ in size")
        return cls(np.stack([fwd.W, bwd.W]), np.stack([fwd.U, bwd.U]), np.stack([fwd.b, bwd.b]))

    @classmethod
    def init(cls, rng, input_size: int, hidden: int, forget_bias: float = 1.0):
        return cls.from_cells(LstmCellParams.init(rng, input_size, hidden, forget_bias),
                              LstmCellParams.init(rng, input_size, hidden, forget_bias))


def lstm_cell_step(x, h_prev, c_prev, params: LstmCellParams):
    """One LSTM step; returns ``(h, c)``."""
    x, h_prev, c_prev = (np.asarray(v, dtype=DTYPE) for v in (x, h_prev, c_prev))
    H = params.hidden
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ConfigurationError(
            f"expected input {params.input_size} / hidden {H}, got "
            f"{x.shape[-1]} / {h_prev.shape[-1]} / {c_prev.shape[-1]}")
    z = x @ params.W + h_prev @ params.U + params.b
    i, f, o = sigmoid(z[..., :H]), sigmoid(z[..., H:2 * H]), sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """(T, B) time indices reversing each column within its own length."""
    t = np.arange(T)[:, None]
    L = lengths[None, :]
    return np.where(t < L, L - 1 - t, t)


def _recur_forward_numpy(A, U, mask, S, G, C, Hs, TC):
    H = U.shape[1]
    for t in range(A.shape[1]):
        h, c = Hs[:, t], C[:, t]
        z = A[:, t] + np.matmul(h, U)
        s = sigmoid(z[..., :3 * H])
        g = np.tanh(z[..., 3 * H:])
        c_new = s[..., H:2 * H] * c + s[..., :H] * g
        tc = np.tanh(c_new)
        h_new = s[..., 2 * H:] * tc
        m = mask[t][None, :, None]
        S[:, t], G[:, t], TC[:, t] = s, g, tc
        C[:, t + 1] = m * c_new + (1.0 - m) * c
        Hs[:, t + 1] = m * h_new + (1.0 - m) * h


def _recur_backward_numpy(dHt, dh, U, mask, S, G, C, TC, dZ):
    H = U.shape[1]
    UT = np.swapaxes(U, 1, 2)
    dc = np.zeros_like(dh)
    for t in range(dHt.shape[1] - 1, -1, -1):
        m = mask[t][None, :, None]
        dh_tot = dh + dHt[:, t]
        dh_carry, dc_carry = (1.0 - m) * dh_tot, (1.0 - m) * dc
        dh_tot, dc = m * dh_tot, m * dc
        s, g, tc = S[:, t], G[:, t], TC[:, t]
        i, f, o = s[..., :H], s[..., H:2 * H], s[..., 2 * H:]
        dc = dc + dh_tot * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[..., :H] = dc * g
        dz[..., H:2 * H] = dc * C[:, t]
        dz[..., 2 * H:3 * H] = dh_tot * tc
        dz[..., :3 * H] *= s * (1.0 - s)
        dz[..., 3 * H:] = dc * i * (1.0 - g * g)
        dc = dc * f + dc_carry
        dh = np.matmul(dz, UT) + dh_carry


def _recur_forward_loops(A, U, mask, S, G, C, Hs, TC):
    _, T, B, H4 = A.shape
    H = H4 // 4
    z = np.empty(H4)
    for d in range(2):
        for t in range(T):
            for b in range(B):
                m = mask[t, b]
                for k in range(H4):
                    z[k] = A[d, t, b, k]
                for j in range(H):
                    hj = Hs[d, t, b, j]
                    for k in range(H4):
                        z[k] += hj * U[d, j, k]
                for j in range(H):
                    # exp-based forms; libm tanh is several times slower here
                    i_ = 1.0 / (1.0 + math.exp(-z[j]))
                    f_ = 1.0 / (1.0 + math.exp(-z[H + j]))
                    o_ = 1.0 / (1.0 + math.exp(-z[2 * H + j]))
                    g_ = 2.0 / (1.0 + math.exp(-2.0 * z[3 * H + j])) - 1.0
                    c_new = f_ * C[d, t, b, j] + i_ * g_
                    tc = 2.0 / (1.0 + math.exp(-2.0 * c_new)) - 1.0
                    S[d, t, b, j] = i_
                    S[d, t, b, H + j] = f_
                    S[d, t, b, 2 * H + j] = o_
                    G[d, t, b, j] = g_
                    TC[d, t, b, j] = tc
                    C[d, t + 1, b, j] = m * c_new + (1.0 - m) * C[d, t, b, j]
                    Hs[d, t + 1, b, j] = m * (o_ * tc) + (1.0 - m) * Hs[d, t, b, j]


def _recur_backward_loops(dHt, dh, U, mask, S, G, C, TC, dZ):
    _, T, B, H = dHt.shape
    dh = dh.copy()
    dc = np.zeros_like(dh)
    for d in range(2):
        for b in range(B):
            for t in range(T - 1, -1, -1):
                m = mask[t, b]
                for j in range(H):
                    dh_tot = dh[d, b, j] + dHt[d, t, b, j]
                    carry_h = (1.0 - m) * dh_tot
                    carry_c = (1.0 - m) * dc[d, b, j]
                    dh_tot *= m
                    i_ = S[d, t, b, j]
                    f_ = S[d, t, b, H + j]
                    o_ = S[d, t, b, 2 * H + j]
                    g_ = G[d, t, b, j]
                    tc = TC[d, t, b, j]
                    dcj = m * dc[d, b, j] + dh_tot * o_ * (1.0 - tc * tc)
                    dZ[d, t, b, j] = dcj * g_ * i_ * (1.0 - i_)
                    dZ[d, t, b, H + j] = dcj * C[d, t, b, j] * f_ * (1.0 - f_)
                    dZ[d, t, b, 2 * H + j] = dh_tot * tc * o_ * (1.0 - o_)
                    dZ[d, t, b, 3 * H + j] = dcj * i_ * (1.0 - g_ * g_)
                    dc[d, b, j] = dcj * f_ + carry_c
                    dh[d, b, j] = carry_h
                for j in range(H):
                    acc = 0.0
                    for k in range(4 * H):
                        acc += dZ[d, t, b, k] * U[d, j, k]
                    dh[d, b, j] += acc


try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

if numba is not None:
    _recur_forward = numba.njit(cache=True, nogil=True)(_recur_forward_loops)
    _recur_backward = numba.njit(cache=True, nogil=True)(_recur_backward_loops)
else:  # pragma: no cover
    _recur_forward, _recur_backward = _recur_forward_numpy, _recur_backward_numpy


class BiLSTMRun:
    """Forward pass of a bidirectional LSTM over a padded batch, keeping the
    activations needed by :meth:`backward`.

    ``X`` has shape (T, B, D); sequence ``b`` occupies ``X[:lengths[b], b]``.
    Both directions are run left-aligned (the backward direction on a
    per-sequence reversed copy), so padding is handled by one mask.
    """

    def __init__(self, params: BiEncoderParams, X: np.ndarray, lengths=None, kernel=None):
        X = np.asarray(X, dtype=DTYPE)
        if X.ndim != 3 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError("bidirectional encoder needs a non-empty sequence")
        T, B, D = X.shape
        if D != params.W.shape[1]:
            raise ConfigurationError(f"input dimension {D} != encoder input {params.W.shape[1]}")
        H = params.hidden
        self.params, self.T, self.B, self.H = params, T, B, H
        self.kernel = kernel or "compiled"
        if lengths is None:
            lengths = np.full(B, T)
        else:
            lengths = np.asarray(lengths)
            if lengths.min() < 1:
                raise ValueError("bidirectional encoder needs non-empty sequences")
        self.mask = (np.arange(T)[:, None] < lengths[None, :]).astype(DTYPE)
        self.lengths = lengths
        self.rev = _reverse_index(lengths, T)
        cols = np.arange(B)[None, :]
        self.Xs = np.stack([X, X[self.rev, cols]])  # (2, T, B, D)
        A = np.matmul(self.Xs.reshape(2, T * B, D), params.W).reshape(2, T, B, 4 * H)
        A += params.b[:, None, None, :]

        self.S = np.empty((2, T, B, 3 * H))   # sigmoid gates i, f, o
        self.G = np.empty((2, T, B, H))       # candidate
        self.C = np.zeros((2, T + 1, B, H))   # cell, C[:, t] is the state before step t
        self.Hs = np.zeros((2, T + 1, B, H))  # hidden, same offset
        self.TC = np.empty((2, T, B, H))      # tanh(c_new)
        fwd = _recur_forward if self.kernel == "compiled" else _recur_forward_numpy
        fwd(A, np.ascontiguousarray(params.U), self.mask, self.S, self.G, self.C, self.Hs, self.TC)

    @property
    def final(self) -> np.ndarray:
        """(B, 2H): last forward state concatenated with last backward state."""
        return np.concatenate([self.Hs[0, -1], self.Hs[1, -1]], axis=-1)

    def outputs(self) -> np.ndarray:
        """(T, B, 2H) per-position states in original order (padding rows unspecified)."""
        cols = np.arange(self.B)[None, :]
        fwd = self.Hs[0, 1:]
        bwd = self.Hs[1, 1:][self.rev, cols]
        return np.concatenate([fwd, bwd], axis=-1)

    def backward(self, d_outputs=None, d_final=None):
        """Backpropagate. ``d_outputs``: (T, B, 2H) or None; ``d_final``: (B, 2H) or None.

        Returns ``(dX, dW, dU, db)``.
        """
        T, B, H = self.T, self.B, self.H
        dHt = np.zeros((2, T, B, H))
        if d_outputs is not None:
            d_outputs = np.asarray(d_outputs, dtype=DTYPE)
            dHt[0] = d_outputs[..., :H]
            cols = np.arange(B)[None, :]
            # rev is a per-column involution, so scatter == gather
            dHt[1] = d_outputs[..., H:][self.rev, cols]
            dHt *= self.mask[None, :, :, None]
        dh = np.zeros((2, B, H))
        if d_final is not None:
            d_final = np.asarray(d_final, dtype=DTYPE)
            dh[0] += d_final[:, :H]
            dh[1] += d_final[:, H:]
        dZ = np.empty((2, T, B, 4 * H))
        bwd = _recur_backward if self.kernel == "compiled" else _recur_backward_numpy
        bwd(dHt, dh, np.ascontiguousarray(self.params.U), self.mask, self.S, self.G, self.C, self.TC, dZ)
        Hprev = self.Hs[:, :T].reshape(2, T * B, H)
        dZf = dZ.reshape(2, T * B, 4 * H)
        D = self.Xs.shape[-1]
        dU = np.matmul(np.swapaxes(Hprev, 1, 2), dZf)
        dW = np.matmul(np.swapaxes(self.Xs.reshape(2, T * B, D), 1, 2), dZf)
        db = dZf.sum(axis=1)
        dXs = np.matmul(dZf, np.swapaxes(self.params.W, 1, 2)).reshape(2, T, B, D)
        cols = np.arange(B)[None, :]
        dX = dXs[0] + dXs[1][self.rev, cols]
        return dX, dW, dU, db


def bi_encode(xs, params: BiEncoderParams) -> np.ndarray:
    """Encode a sequence of vectors; returns (n, 2H) forward∘backward states."""
    X = np.asarray(xs, dtype=DTYPE)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("bi_encode needs a non-empty sequence of vectors")
    return BiLSTMRun(params, X[:, None, :]).outputs()[:, 0]


def softmax_xent(logits, gold: int):
    """Cross-entropy of a softmax over ``logits``; returns ``(loss, dloss/dlogits)``."""
    z = np.asarray(logits, dtype=DTYPE)
    if not 0 <= gold < z.shape[-1]:
        raise IndexError(f"gold index {gold} out of range for {z.shape[-1]} classes")
    shifted = z - z.max()
    logsum = np.log(np.exp(shifted).sum())
    p = np.exp(shifted - logsum)
    p[gold] -= 1.0
    return float(logsum - shifted[gold]), p


def softmax_xent_rows(logits: np.ndarray, gold: np.ndarray):
    """Row-wise :func:`softmax_xent` for a (n, K) matrix; returns per-row losses and grads."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    grad = np.exp(shifted - logsum[:, None])
    rows = np.arange(len(gold))
    loss = logsum - shifted[rows, gold]
    grad[rows, gold] -= 1.0
    return loss, grad


class RowGrad:
    """Sparse gradient of an embedding table: accumulated rows only."""

    def __init__(self, indices, values):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        vals = np.asarray(values, dtype=DTYPE).reshape(len(idx), -1)
        self.indices, inverse = np.unique(idx, return_inverse=True)
        self.values = np.zeros((len(self.indices), vals.shape[1]))
        np.add.at(self.values, inverse, vals)

    def dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.indices] = self.values
        return out

    def sq_norm(self) -> float:
        return float((self.values ** 2).sum())

    def scale(self, factor: float):
        self.values *= factor


def dense_grad(g, shape) -> np.ndarray:
    return g.dense(shape) if isinstance(g, RowGrad) else g


def grad_norm(grads: Mapping[str, object]) -> float:
    total = 0.0
    for g in grads.values():
        total += g.sq_norm() if isinstance(g, RowGrad) else float((g ** 2).sum())
    return float(np.sqrt(total))


def sgd_step(params: dict, grads: Mapping[str, object], lr: float) -> dict:
    """In-place ``p -= lr * g`` for every gradient; returns ``params``."""
    if lr < 0:
        raise ConfigurationError("learning rate must be non-negative")
    for name, g in grads.items():
        p = params[name]
        if isinstance(g, RowGrad):
            if len(g.indices) and (g.values.shape[1] != p.shape[1] or g.indices.max() >= len(p)):
                raise ConfigurationError(f"gradient for {name} does not match {p.shape}")
            p[g.indices] -= lr * g.values
        else:
            if g.shape != p.shape:
                raise ConfigurationError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            p -= lr * g
    return params


def clip_grads(grads: Mapping[str, object], max_norm: float) -> float:
    """Rescale gradients to a global norm of at most ``max_norm``; returns the pre-clip norm."""
    norm = grad_norm(grads)
    if not np.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if max_norm and norm > max_norm:
        f = max_norm / norm
        for name, g in grads.items():
            if isinstance(g, RowGrad):
                g.scale(f)
            else:
                grads[name] = g * f
    return norm


LossAndGrad = Callable[[], tuple]


def grad_check_tensors(loss_and_grad: Callable, params: dict, eps: float = 1e-5,
                       names=None) -> dict:
    """Per-tensor max relative error between analytic and central-difference gradients.

    ``loss_and_grad()`` evaluates the loss at the current contents of ``params``
    and returns ``(loss, grads)``. Parameters are perturbed in place and restored.
    Relative error is ``|a - n| / max(1, |a|, |n|)``.
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    loss, grads = loss_and_grad()
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    report = {}
    for name in names or sorted(params):
        p = params[name]
        analytic = dense_grad(grads[name], p.shape) if name in grads else np.zeros_like(p)
        flat = p.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_and_grad()[0]
            flat[j] = orig - eps
            lm = loss_and_grad()[0]
            flat[j] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(f"non-finite loss while perturbing {name}")
            num = (lp - lm) / (2 * eps)
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
        report[name] = worst
    return report


def grad_check(loss_and_grad: Callable, params: dict, eps: float = 1e-5) -> float:
    """Max relative gradient error over all parameters (see :func:`grad_check_tensors`)."""
    return max(grad_check_tensors(loss_and_grad, params, eps).values(), default=0.0)
