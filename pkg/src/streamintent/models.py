"""Model configurations and the two architectures.

:class:`MultiTaskModel` shares one embedding between an intent-boundary (IB)
LSTM stack with a sigmoid head and an intent LSTM stack with a softmax head
over ``O`` plus the ``C`` classes.  An optional context LSTM encodes the
preceding turns and initializes both task stacks.

:class:`OfflineModel` is the turn-level BiLSTM classifier.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np

from .corpus import O_TAG, LabeledSequence
from .numkernel import (
    Dense,
    Embedding,
    LSTMStack,
    Parameter,
    RecurrentState,
    dropout_mask,
    reverse_valid,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
)

VARIANTS = ("offline", "multitask", "multitask_lookahead", "multitask_context", "intent_only")
CONTEXT_TOKEN_CAP = 120


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 0
    embed_dim: int = 300
    hidden_dim: int = 128
    num_layers: int = 2
    dropout: float = 0.25
    num_classes: int = 16
    beta: float = 0.5
    focal_alpha: float = 1.0
    focal_gamma: float = 8.0
    lookahead_k: int = 0
    context_turns: int = 0
    epochs: int = 30
    lr: float = 0.001
    batch_size: int = 32
    ib_threshold: float = 0.5
    seed: int = 0
    min_count: int = 2
    dtype: str = "float32"
    variant: str = "multitask"
    strict_algorithm1: bool = False

    def validate(self) -> None:
        for name in ("embed_dim", "hidden_dim", "num_layers", "num_classes", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lookahead_k not in (0, 1, 2, 3):
            raise ValueError("lookahead_k must be one of 0, 1, 2, 3")
        if self.context_turns < 0:
            raise ValueError("context_turns must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def resolved(self) -> "ModelConfig":
        """Apply the variant's implied settings (k=1 for lookahead, n=3 for context)."""
        cfg = self
        if cfg.variant == "multitask_lookahead" and cfg.lookahead_k == 0:
            cfg = replace(cfg, lookahead_k=1)
        if cfg.variant == "multitask_context" and cfg.context_turns == 0:
            cfg = replace(cfg, context_turns=3)
        if cfg.variant != "multitask_context":
            cfg = replace(cfg, context_turns=0)
        if cfg.variant == "offline":
            cfg = replace(cfg, lookahead_k=0)
        cfg.validate()
        return cfg

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ batches


@dataclass
class Batch:
    ids: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) bool
    ib: np.ndarray  # (B, T) 0/1
    intent: np.ndarray  # (B, T) class id or O_TAG
    ctx_ids: np.ndarray | None = None
    ctx_mask: np.ndarray | None = None
    turn_class: np.ndarray | None = None  # (B,) for the offline model

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def _pad(rows: Sequence[Sequence[int]], fill: int):
    T = max((len(r) for r in rows), default=0)
    out = np.full((len(rows), T), fill, dtype=np.int64)
    mask = np.zeros((len(rows), T), dtype=bool)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        mask[i, : len(r)] = True
    return out, mask


def make_batch(seqs: Sequence[LabeledSequence], contexts: Sequence[Sequence[int]] | None = None,
               turn_classes: Sequence[int] | None = None, pad_id: int = 0) -> Batch:
    ids, mask = _pad([s.token_ids for s in seqs], pad_id)
    ib, _ = _pad([s.ib_tags for s in seqs], 0)
    intent, _ = _pad([s.intent_tags for s in seqs], O_TAG)
    b = Batch(ids, mask, ib, intent)
    if contexts is not None:
        b.ctx_ids, b.ctx_mask = _pad(contexts, pad_id)
    if turn_classes is not None:
        b.turn_class = np.asarray(turn_classes, dtype=np.int64)
    return b


# ------------------------------------------------------------------- models


class _Base:
    kind = ""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class MultiTaskModel(_Base):
    kind = "multitask"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        dt = cfg.np_dtype
        E, H, L = cfg.embed_dim, cfg.hidden_dim, cfg.num_layers
        self.embedding = Embedding(cfg.vocab_size, E, rng, dt)
        self.ib_stack = LSTMStack(E, H, L, rng, dt, "ib_lstm", cfg.dropout)
        self.intent_stack = LSTMStack(E, H, L, rng, dt, "intent_lstm", cfg.dropout)
        self.ib_head = Dense(H, 1, rng, dt, "ib_head")
        self.intent_head = Dense(H, cfg.num_classes + 1, rng, dt, "intent_head")
        self.context_stack = (
            LSTMStack(E, H, L, rng, dt, "context_lstm", cfg.dropout) if cfg.context_turns > 0 else None
        )

    @property
    def uses_ib(self) -> bool:
        return self.cfg.variant != "intent_only"

    def parameters(self) -> list[Parameter]:
        ps = self.embedding.parameters() + self.ib_stack.parameters() + self.intent_stack.parameters()
        ps += self.ib_head.parameters() + self.intent_head.parameters()
        if self.context_stack is not None:
            ps += self.context_stack.parameters()
        return ps

    def trainable_parameters(self) -> list[Parameter]:
        if self.uses_ib:
            return self.parameters()
        skip = {id(p) for p in self.ib_stack.parameters() + self.ib_head.parameters()}
        return [p for p in self.parameters() if id(p) not in skip]

    # -- batch path ---------------------------------------------------------

    def _head_per_step(self, head: Dense, out: np.ndarray) -> np.ndarray:
        # one matmul per step so batch and streaming outputs agree bitwise
        return np.stack([head.forward(out[:, t, :]) for t in range(out.shape[1])], axis=1)

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None):
        """Returns ``(ib_probs (B,T), intent_dists (B,T,C+1), cache)``."""
        x = self.embedding.forward(batch.ids)
        init, ccache = None, None
        if self.context_stack is not None:
            if batch.ctx_ids is None:
                raise ValueError("context model needs context ids in the batch")
            cx = self.embedding.forward(batch.ctx_ids)
            _, init, ccache = self.context_stack.forward(cx, batch.ctx_mask, train=train, rng=rng)
        rate = self.cfg.dropout if train else 0.0

        def task(stack, head):
            out, _, sc = stack.forward(x, batch.mask, init, train=train, rng=rng)
            dm = dropout_mask(out.shape, rate, rng, out.dtype.type) if rate > 0 else None
            out_d = out * dm if dm is not None else out
            return self._head_per_step(head, out_d), (sc, dm, out_d)

        ib_probs, ib_cache = None, None
        if self.uses_ib:
            ib_logits, ib_cache = task(self.ib_stack, self.ib_head)
            ib_probs = sigmoid(ib_logits[..., 0])
        int_logits, int_cache = task(self.intent_stack, self.intent_head)
        dists = softmax(int_logits)
        return ib_probs, dists, (batch, x, ccache, ib_cache, int_cache, ib_probs, dists)

    def backward(self, cache, d_ib_probs: np.ndarray | None, d_dists: np.ndarray) -> None:
        batch, x, ccache, ib_cache, int_cache, ib_probs, dists = cache
        dx = np.zeros_like(x)
        dinit = None

        def task(stack, head, tc, dlogits):
            nonlocal dinit
            sc, dm, out_d = tc
            dout = head.backward(out_d, dlogits)
            if dm is not None:
                dout = dout * dm
            dxs, d0 = stack.backward(sc, dout)
            if dinit is None:
                dinit = d0
            else:
                dinit = RecurrentState([(h1 + h2, c1 + c2) for (h1, c1), (h2, c2) in zip(dinit.layers, d0.layers)])
            return dxs

        if self.uses_ib and d_ib_probs is not None:
            dlog = sigmoid_backward(ib_probs, d_ib_probs)[..., None]
            dx += task(self.ib_stack, self.ib_head, ib_cache, dlog)
        dx += task(self.intent_stack, self.intent_head, int_cache, softmax_backward(dists, d_dists))
        self.embedding.backward(batch.ids, dx)
        if self.context_stack is not None and ccache is not None and batch.ctx_ids.shape[1] > 0:
            B, Tc = batch.ctx_ids.shape
            zeros = np.zeros((B, Tc, self.cfg.hidden_dim), dtype=x.dtype)
            dcx, _ = self.context_stack.backward(ccache, zeros, dfinal=dinit)
            self.embedding.backward(batch.ctx_ids, dcx)

    # -- streaming path -----------------------------------------------------

    def zero_states(self) -> tuple[RecurrentState, RecurrentState]:
        return self.ib_stack.zero_state(1), self.intent_stack.zero_state(1)

    def encode_context(self, ids: Sequence[int]) -> tuple[RecurrentState, RecurrentState]:
        """Initial (IB, intent) states from the preceding turns' token ids."""
        if self.context_stack is None or len(ids) == 0:
            return self.zero_states()
        ids = list(ids)[-CONTEXT_TOKEN_CAP:]
        x = self.embedding.forward(np.asarray([ids]))
        _, state, _ = self.context_stack.forward(x)
        return state, state.copy()

    def stream_step(self, token_id: int, states: tuple[RecurrentState, RecurrentState]):
        """Advance both task stacks by one word.

        Returns ``(ib_prob, intent_dist, new_states)``; ``ib_prob`` is None for
        the intent-only variant.
        """
        if not 0 <= token_id < self.cfg.vocab_size:
            token_id = 1  # UNK
        x = self.embedding.forward(np.asarray([[token_id]]))[:, 0, :]
        ib_state, int_state = states
        ib_prob = None
        if self.uses_ib:
            h_ib, ib_state = self.ib_stack.step(x, ib_state)
            ib_prob = float(sigmoid(self.ib_head.forward(h_ib))[0, 0])
        h_int, int_state = self.intent_stack.step(x, int_state)
        dist = softmax(self.intent_head.forward(h_int))[0]
        return ib_prob, dist, (ib_state, int_state)

    def ib_step(self, token_id: int, state: RecurrentState):
        x = self.embedding.forward(np.asarray([[token_id]]))[:, 0, :]
        h, state = self.ib_stack.step(x, state)
        return float(sigmoid(self.ib_head.forward(h))[0, 0]), state

    def intent_step(self, token_id: int, state: RecurrentState):
        x = self.embedding.forward(np.asarray([[token_id]]))[:, 0, :]
        h, state = self.intent_stack.step(x, state)
        return softmax(self.intent_head.forward(h))[0], state


class OfflineModel(_Base):
    kind = "offline"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        dt = cfg.np_dtype
        E, H, L = cfg.embed_dim, cfg.hidden_dim, cfg.num_layers
        self.embedding = Embedding(cfg.vocab_size, E, rng, dt)
        self.fwd_stack = LSTMStack(E, H, L, rng, dt, "fwd_lstm", cfg.dropout)
        self.bwd_stack = LSTMStack(E, H, L, rng, dt, "bwd_lstm", cfg.dropout)
        self.head = Dense(2 * H, cfg.num_classes + 1, rng, dt, "offline_head")

    def parameters(self) -> list[Parameter]:
        return (self.embedding.parameters() + self.fwd_stack.parameters() + self.bwd_stack.parameters()
                + self.head.parameters())

    trainable_parameters = parameters

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None):
        """Returns ``(dists (B, C+1), cache)`` from both directions' final states."""
        B, T = batch.ids.shape
        if T == 0 or not batch.mask.any(axis=1).all():
            raise ValueError("offline model needs non-empty turns")
        x = self.embedding.forward(batch.ids)
        lengths = batch.mask.sum(axis=1)
        idx = reverse_valid(x, lengths)
        rows = np.arange(B)[:, None]
        _, sf, cf = self.fwd_stack.forward(x, batch.mask, train=train, rng=rng)
        _, sb, cb = self.bwd_stack.forward(x[rows, idx], batch.mask, train=train, rng=rng)
        feat = np.concatenate([sf.layers[-1][0], sb.layers[-1][0]], axis=1)
        rate = self.cfg.dropout if train else 0.0
        dm = dropout_mask(feat.shape, rate, rng, feat.dtype.type) if rate > 0 else None
        feat_d = feat * dm if dm is not None else feat
        dists = softmax(self.head.forward(feat_d))
        return dists, (batch, x, idx, cf, cb, dm, feat_d, dists)

    def backward(self, cache, d_dists: np.ndarray) -> None:
        batch, x, idx, cf, cb, dm, feat_d, dists = cache
        B, T, _ = x.shape
        H = self.cfg.hidden_dim
        dfeat = self.head.backward(feat_d, softmax_backward(dists, d_dists))
        if dm is not None:
            dfeat = dfeat * dm
        zeros_out = np.zeros((B, T, H), dtype=x.dtype)

        def top_only(dh):
            st = self.fwd_stack.zero_state(B)
            st.layers[-1] = (dh, np.zeros_like(dh))
            return st

        dx_f, _ = self.fwd_stack.backward(cf, zeros_out, top_only(np.ascontiguousarray(dfeat[:, :H])))
        dx_r, _ = self.bwd_stack.backward(cb, zeros_out, top_only(np.ascontiguousarray(dfeat[:, H:])))
        dx = dx_f.copy()
        rows = np.arange(B)[:, None]
        back = np.empty_like(dx_r)
        back[rows, idx] = dx_r
        dx += back
        self.embedding.backward(batch.ids, dx)

    def classify(self, token_ids: Sequence[int]) -> np.ndarray:
        if len(token_ids) == 0:
            raise ValueError("cannot classify an empty turn")
        ids = np.asarray([list(token_ids)])
        ids = np.where((ids >= 0) & (ids < self.cfg.vocab_size), ids, 1)
        dists, _ = self.forward(Batch(ids, np.ones(ids.shape, bool), np.zeros(ids.shape), np.zeros(ids.shape)))
        return dists[0]


def build_model(cfg: ModelConfig, rng: np.random.Generator | None = None):
    cfg = cfg.resolved()
    if cfg.vocab_size <= 2:
        raise ValueError("vocab_size must exceed the two reserved ids")
    return OfflineModel(cfg, rng) if cfg.variant == "offline" else MultiTaskModel(cfg, rng)


def argmax_class(dist: np.ndarray) -> int:
    """Output index with ties going to the lowest index (np.argmax semantics)."""
    return int(np.argmax(dist))
