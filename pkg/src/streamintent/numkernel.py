"""Dense numpy layers with hand-written backward passes.

Shapes are batch-major: sequences are ``(B, T, D)`` with a boolean validity
mask ``(B, T)``.  Padded steps carry the recurrent state through unchanged,
so the state after the last valid step is the sequence's final state.

Gate layout inside the fused LSTM matrices is ``[input, forget, cell, output]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

FORGET_BIAS = 1.0
INIT_SCALE = 0.1


class NumericError(FloatingPointError):
    """Non-finite value encountered in a forward or backward pass."""


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        if value.ndim != 2:
            raise ValueError(f"{name}: parameters are 2-d, got shape {value.shape}")
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


def uniform(rng: np.random.Generator, shape, dtype, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


# ----------------------------------------------------------- activations


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid_backward(p: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * p * (1.0 - p)


def softmax_backward(p: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of softmax given its output ``p``."""
    return p * (grad - (grad * p).sum(axis=axis, keepdims=True))


# ------------------------------------------------------------- embedding


class Embedding:
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator, dtype=np.float32, name="embedding"):
        # standard normal, as common framework embedding layers draw it
        self.weight = Parameter(name, rng.standard_normal((vocab_size, dim)).astype(dtype))

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"token id out of range [0, {self.vocab_size})")
        return self.weight.value[ids]

    def backward(self, ids: np.ndarray, grad: np.ndarray) -> None:
        np.add.at(self.weight.grad, np.asarray(ids).reshape(-1), grad.reshape(-1, grad.shape[-1]))

    def parameters(self) -> list[Parameter]:
        return [self.weight]


def embed_forward(token_id: int, embedding: Parameter) -> np.ndarray:
    if not 0 <= token_id < embedding.shape[0]:
        raise IndexError(f"token id {token_id} out of range [0, {embedding.shape[0]})")
    return embedding.value[token_id]


# ----------------------------------------------------------------- dense


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32,
                 name="dense", zero_init: bool = True):
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=dtype)
            b = np.zeros((1, out_dim), dtype=dtype)
        else:
            w = uniform(rng, (in_dim, out_dim), dtype)
            b = uniform(rng, (1, out_dim), dtype)
        self.W = Parameter(f"{name}.W", w)
        self.b = Parameter(f"{name}.b", b)

    def forward(self, h: np.ndarray) -> np.ndarray:
        return h @ self.W.value + self.b.value[0]

    def backward(self, h: np.ndarray, dz: np.ndarray) -> np.ndarray:
        h2 = h.reshape(-1, h.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        self.W.grad += h2.T @ dz2
        self.b.grad += dz2.sum(axis=0, keepdims=True)
        return dz @ self.W.value.T

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


def dense_forward(h: np.ndarray, W: Parameter, b: Parameter, activation: str = "none") -> np.ndarray:
    check_finite(h, "dense input")
    z = h @ W.value + b.value[0]
    if activation == "none":
        return z
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {activation!r}")


# --------------------------------------------------------------- dropout


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)


def dropout(h: np.ndarray, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "eval" or rate == 0.0:
        return h
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return h * dropout_mask(h.shape, rate, rng, h.dtype.type)


# ------------------------------------------------------------------ LSTM


@dataclass
class RecurrentState:
    """Per-layer ``(h, c)`` pairs, each of shape ``(B, hidden)``."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @classmethod
    def zeros(cls, num_layers: int, batch: int, hidden: int, dtype=np.float32) -> "RecurrentState":
        return cls([(np.zeros((batch, hidden), dtype), np.zeros((batch, hidden), dtype)) for _ in range(num_layers)])

    def copy(self) -> "RecurrentState":
        return RecurrentState([(h.copy(), c.copy()) for h, c in self.layers])

    def __eq__(self, other):
        if not isinstance(other, RecurrentState) or len(self.layers) != len(other.layers):
            return False
        return all(np.array_equal(h1, h2) and np.array_equal(c1, c2)
                   for (h1, c1), (h2, c2) in zip(self.layers, other.layers))


class LSTMLayer:
    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, dtype=np.float32, name="lstm"):
        H = hidden_dim
        self.input_dim = input_dim
        self.hidden_dim = H
        self.W = Parameter(f"{name}.W", uniform(rng, (input_dim, 4 * H), dtype))
        self.U = Parameter(f"{name}.U", uniform(rng, (H, 4 * H), dtype))
        b = uniform(rng, (1, 4 * H), dtype)
        b[0, H : 2 * H] = FORGET_BIAS
        self.b = Parameter(f"{name}.b", b)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.U, self.b]

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray, xw: np.ndarray | None = None):
        """One step; ``xw`` is an optional precomputed ``x @ W``."""
        H = self.hidden_dim
        if xw is None:
            xw = x @ self.W.value
        z = xw + h @ self.U.value + self.b.value[0]
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (x, h, c, i, f, g, o, tc)

    def gate_backward(self, cache, dh: np.ndarray, dc: np.ndarray):
        """Returns ``(dz, dc_prev)``; parameter grads are left to the caller."""
        _, _, c, i, f, g, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        return dz, dc * f

    def step_backward(self, cache, dh: np.ndarray, dc: np.ndarray):
        x, h = cache[0], cache[1]
        dz, dc_prev = self.gate_backward(cache, dh, dc)
        self.W.grad += x.T @ dz
        self.U.grad += h.T @ dz
        self.b.grad += dz.sum(axis=0, keepdims=True)
        return dz @ self.W.value.T, dz @ self.U.value.T, dc_prev


def lstm_step(x: np.ndarray, state: RecurrentState, layer: LSTMLayer, layer_index: int = 0):
    """Advance one LSTM layer by one step; returns ``(h, new_state)``."""
    check_finite(x, "lstm input")
    x2 = np.atleast_2d(x)
    h, c = state.layers[layer_index]
    h_new, c_new, _ = layer.step(x2, h, c)
    layers = list(state.layers)
    layers[layer_index] = (h_new, c_new)
    return h_new, RecurrentState(layers)


class LSTMStack:
    """Stacked unidirectional LSTM with inverted dropout between layers."""

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int, rng: np.random.Generator,
                 dtype=np.float32, name="lstm", dropout: float = 0.0):
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.layers = [
            LSTMLayer(input_dim if l == 0 else hidden_dim, hidden_dim, rng, dtype, f"{name}.{l}")
            for l in range(num_layers)
        ]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_state(self, batch: int = 1) -> RecurrentState:
        return RecurrentState.zeros(self.num_layers, batch, self.hidden_dim, self.layers[0].W.value.dtype)

    def _check_state(self, state: RecurrentState, batch: int) -> None:
        if len(state.layers) != self.num_layers:
            raise ValueError(f"state has {len(state.layers)} layers, stack has {self.num_layers}")
        for h, c in state.layers:
            if h.shape != (batch, self.hidden_dim) or c.shape != (batch, self.hidden_dim):
                raise ValueError(f"state shape {h.shape} does not match ({batch}, {self.hidden_dim})")

    def step(self, x: np.ndarray, state: RecurrentState) -> tuple[np.ndarray, RecurrentState]:
        """One timestep in eval mode for a ``(B, D)`` input."""
        new = []
        inp = x
        for layer, (h, c) in zip(self.layers, state.layers):
            h, c, _ = layer.step(inp, h, c)
            new.append((h, c))
            inp = h
        return inp, RecurrentState(new)

    def forward(self, xs: np.ndarray, mask: np.ndarray | None = None, initial: RecurrentState | None = None,
                train: bool = False, rng: np.random.Generator | None = None):
        """Run ``(B, T, D)`` inputs; returns top outputs ``(B, T, H)``, final state, cache."""
        B, T, _ = xs.shape
        state = self.zero_state(B) if initial is None else initial
        self._check_state(state, B)
        m = None if mask is None else np.asarray(mask, dtype=bool)[:, :, None]
        inp = [xs[:, t, :] for t in range(T)]
        caches, drops, final = [], [], []
        for li, layer in enumerate(self.layers):
            if li > 0 and train and self.dropout > 0.0:
                d = [dropout_mask(x.shape, self.dropout, rng, x.dtype.type) for x in inp]
                inp = [x * dm for x, dm in zip(inp, d)]
            else:
                d = None
            drops.append(d)
            h, c = state.layers[li]
            outs, lc = [], []
            # eval keeps the per-step product so it matches streaming bitwise
            xw = (np.stack(inp) @ layer.W.value) if train and T else None
            for t in range(T):
                h_new, c_new, cache = layer.step(inp[t], h, c, None if xw is None else xw[t])
                if m is not None:
                    h_new = np.where(m[:, t], h_new, h)
                    c_new = np.where(m[:, t], c_new, c)
                h, c = h_new, c_new
                outs.append(h)
                lc.append(cache)
            caches.append(lc)
            final.append((h, c))
            inp = outs
        out = np.stack(inp, axis=1) if T else np.zeros((B, 0, self.hidden_dim), xs.dtype)
        return out, RecurrentState(final), (caches, drops, m, T)

    def backward(self, cache, douts: np.ndarray, dfinal: RecurrentState | None = None):
        """Backprop through time; returns ``(dxs, d_initial_state)``."""
        caches, drops, m, T = cache
        d_in = [douts[:, t, :] for t in range(T)]
        dinit = []
        for li in reversed(range(len(self.layers))):
            layer = self.layers[li]
            B = douts.shape[0]
            H = self.hidden_dim
            if dfinal is not None:
                dh, dc = (a.copy() for a in dfinal.layers[li])
            else:
                dh = np.zeros((B, H), douts.dtype)
                dc = np.zeros((B, H), douts.dtype)
            dzs = [None] * T
            U_T = layer.U.value.T
            for t in reversed(range(T)):
                dh = dh + d_in[t]
                if m is not None:
                    dz, dc_prev = layer.gate_backward(caches[li][t], np.where(m[:, t], dh, 0),
                                                      np.where(m[:, t], dc, 0))
                    dh = dz @ U_T + np.where(m[:, t], 0, dh)
                    dc = dc_prev + np.where(m[:, t], 0, dc)
                else:
                    dz, dc = layer.gate_backward(caches[li][t], dh, dc)
                    dh = dz @ U_T
                dzs[t] = dz
            if T:
                dZ = np.concatenate(dzs)
                X = np.concatenate([cc[0] for cc in caches[li]])
                Hp = np.concatenate([cc[1] for cc in caches[li]])
                layer.W.grad += X.T @ dZ
                layer.U.grad += Hp.T @ dZ
                layer.b.grad += dZ.sum(axis=0, keepdims=True)
                dx = list((dZ @ layer.W.value.T).reshape(T, B, -1))
            else:
                dx = []
            if drops[li] is not None:
                dx = [a * dm for a, dm in zip(dx, drops[li])]
            d_in = dx
            dinit.append((dh, dc))
        dinit.reverse()
        dxs = np.stack(d_in, axis=1) if T else np.zeros_like(douts)
        return dxs, RecurrentState(dinit)


def reverse_valid(xs: np.ndarray, lengths: Sequence[int]) -> np.ndarray:
    """Index array reversing the first ``lengths[b]`` steps of each row."""
    B, T = xs.shape[:2]
    idx = np.tile(np.arange(T), (B, 1))
    for b, n in enumerate(lengths):
        idx[b, :n] = np.arange(n)[::-1]
    return idx


def lstm_sequence_forward(xs: np.ndarray, stacks, initial: RecurrentState | None = None,
                          direction: str = "forward", mask: np.ndarray | None = None) -> np.ndarray:
    """Top-layer outputs per step.

    ``stacks`` is one :class:`LSTMStack` for ``forward`` or a ``(fwd, bwd)``
    pair for ``bidirectional``, whose outputs are concatenated per step.
    """
    if direction == "forward":
        stack = stacks[0] if isinstance(stacks, (tuple, list)) else stacks
        return stack.forward(xs, mask, initial)[0]
    if direction != "bidirectional":
        raise ValueError(f"unknown direction {direction!r}")
    fwd, bwd = stacks
    B, T = xs.shape[:2]
    lengths = [T] * B if mask is None else np.asarray(mask).sum(axis=1).tolist()
    idx = reverse_valid(xs, lengths)
    rows = np.arange(B)[:, None]
    out_f = fwd.forward(xs, mask, initial)[0]
    out_b = bwd.forward(xs[rows, idx], mask)[0][rows, idx]
    return np.concatenate([out_f, out_b], axis=-1)


# ------------------------------------------------------------ grad check


def grad_check(loss_and_grad: Callable[[], float], params: Iterable[Parameter], epsilon: float = 1e-5,
               floor: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must zero, then populate, every ``param.grad`` and
    return the loss.  The relative error is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps round-off on near-zero entries from dominating.
    """
    params = list(params)
    loss = loss_and_grad()
    if not np.isfinite(loss):
        raise NumericError("non-finite loss in grad_check")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = loss_and_grad()
            flat[j] = orig - epsilon
            down = loss_and_grad()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {p.name}")
            num = (up - down) / (2.0 * epsilon)
            ana = a.reshape(-1)[j]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, float(err))
    loss_and_grad()
    return worst
