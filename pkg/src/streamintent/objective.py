"""Training losses and the Adam optimizer.

Every loss takes probabilities (sigmoid or softmax outputs) and returns the
scalar loss together with its gradient with respect to those probabilities.
Batched inputs are ``(B, T)`` / ``(B, T, K)``; batch losses are the mean of
per-sequence losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .corpus import O_TAG
from .numkernel import NumericError, Parameter

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 1.0
    gamma: float = 8.0


@dataclass(frozen=True)
class MultiTaskWeights:
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def _batch(a, ndim):
    a = np.asarray(a)
    return (a[None], True) if a.ndim == ndim - 1 else (a, False)


def focal_loss(probs, labels, mask=None, cfg: FocalConfig = FocalConfig()):
    """Binary focal loss averaged over the valid steps of each sequence.

    ``-(alpha/T) * sum_t [y (1-p)^g log p + (1-y) p^g log(1-p)]``
    """
    p, squeeze = _batch(probs, 2)
    y = np.asarray(labels, dtype=p.dtype).reshape(p.shape)
    m = np.ones(p.shape, bool) if mask is None else np.asarray(mask, bool).reshape(p.shape)
    T = m.sum(axis=1)
    if np.any(T == 0):
        raise ValueError("focal_loss needs at least one valid timestep per sequence")
    a, g = cfg.alpha, cfg.gamma
    # gradient is taken at the clamped value
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    q = 1.0 - pc
    lp, lq = np.log(pc), np.log(q)
    pos = q**g * lp
    neg = pc**g * lq
    term = np.where(m, y * pos + (1.0 - y) * neg, 0.0)
    scale = (-a / T)[:, None]
    per_seq = (scale * term).sum(axis=1)
    dpos = (-g * q ** (g - 1) * lp if g else 0.0) + q**g / pc
    dneg = (g * pc ** (g - 1) * lq if g else 0.0) - pc**g / q
    grad = np.where(m, scale * (y * dpos + (1.0 - y) * dneg), 0.0) / p.shape[0]
    loss = float(per_seq.mean())
    grad = grad.astype(p.dtype)
    return loss, (grad[0] if squeeze else grad)


def binary_cross_entropy(probs, labels, mask=None) -> float:
    """Plain mean BCE, kept separate as a reference for the focal loss."""
    p, _ = _batch(probs, 2)
    y = np.asarray(labels, dtype=float).reshape(p.shape)
    m = np.ones(p.shape, bool) if mask is None else np.asarray(mask, bool).reshape(p.shape)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    ce = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    return float((np.where(m, ce, 0.0).sum(axis=1) / m.sum(axis=1)).mean())


def _targets(tags, K):
    """Output index per step: O maps to 0, class c to c + 1."""
    t = np.asarray(tags)
    return np.where(t == O_TAG, 0, t + 1).astype(int)


def masked_intent_loss(dists, intent_tags, ib_mask):
    """Cross-entropy at boundary steps only, summed over the sequence."""
    d, squeeze = _batch(dists, 3)
    tags, _ = _batch(intent_tags, 2)
    im, _ = _batch(ib_mask, 2)
    im = im.astype(bool)
    B, T, K = d.shape
    if np.any(im & (tags == O_TAG)):
        raise ValueError("boundary position labeled O")
    tgt = _targets(tags, K)
    rows, cols = np.nonzero(im)
    p = np.clip(d[rows, cols, tgt[rows, cols]], PROB_EPS, 1.0)
    loss = float(-np.log(p).sum() / B)
    grad = np.zeros_like(d)
    grad[rows, cols, tgt[rows, cols]] = -1.0 / p / B
    return loss, (grad[0] if squeeze else grad)


def unmasked_intent_loss(dists, intent_tags, mask=None):
    """Per-step cross-entropy (O included as a target) averaged over valid steps."""
    d, squeeze = _batch(dists, 3)
    tags, _ = _batch(intent_tags, 2)
    B, T, K = d.shape
    m = np.ones((B, T), bool) if mask is None else np.asarray(mask, bool).reshape(B, T)
    n = m.sum(axis=1)
    if np.any(n == 0):
        raise ValueError("unmasked_intent_loss needs at least one valid timestep per sequence")
    tgt = _targets(tags, K)
    rows, cols = np.nonzero(m)
    p = np.clip(d[rows, cols, tgt[rows, cols]], PROB_EPS, 1.0)
    w = 1.0 / (n[rows] * B)
    loss = float((-np.log(p) * w).sum())
    grad = np.zeros_like(d)
    grad[rows, cols, tgt[rows, cols]] = -w / p
    return loss, (grad[0] if squeeze else grad)


def cross_entropy(dists, targets):
    """Mean cross-entropy of ``(B, K)`` distributions against output indices."""
    d = np.asarray(dists)
    B = d.shape[0]
    idx = np.asarray(targets, dtype=int)
    p = np.clip(d[np.arange(B), idx], PROB_EPS, 1.0)
    grad = np.zeros_like(d)
    grad[np.arange(B), idx] = -1.0 / p / B
    return float(-np.log(p).mean()), grad


def combined_loss(l_ib: float, l_int: float, w: MultiTaskWeights = MultiTaskWeights()) -> float:
    if not (np.isfinite(l_ib) and np.isfinite(l_int)):
        raise NumericError("non-finite task loss")
    return w.beta * l_ib + (1.0 - w.beta) * l_int


# ----------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> AdamState:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {p.name}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p in params:
        g = p.grad
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        m, v = state.m[p.name], state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.value.dtype)
        p.zero_grad()
    return state
