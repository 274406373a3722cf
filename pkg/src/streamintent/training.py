"""Example construction, the training loop and offline evaluation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import (
    O_TAG,
    LabeledSequence,
    Transcript,
    Vocabulary,
    apply_lookahead,
    build_vocabulary,
    context_ids,
    label_sequence,
)
from .metrics import (
    PRF,
    ib_prf,
    intent_at_oracle_boundary,
    intent_at_predicted_boundary,
    intent_prf_unmasked,
)
from .models import CONTEXT_TOKEN_CAP, ModelConfig, MultiTaskModel, OfflineModel, build_model, make_batch
from .numkernel import NumericError
from .objective import (
    AdamState,
    FocalConfig,
    MultiTaskWeights,
    adam_step,
    combined_loss,
    cross_entropy,
    focal_loss,
    masked_intent_loss,
    unmasked_intent_loss,
)

log = logging.getLogger(__name__)


@dataclass
class Example:
    seq: LabeledSequence
    context: list[int] = field(default_factory=list)
    turn_class: int = O_TAG


def build_examples(transcripts: Sequence[Transcript], vocab: Vocabulary, cfg: ModelConfig,
                   rng: np.random.Generator) -> list[Example]:
    """Training/evaluation examples for ``cfg.variant``.

    Streaming variants use the annotated customer turn of each transcript.
    The offline classifier additionally gets the customer turns preceding
    the intent, labeled ``O``, so it can learn to abstain.
    """
    out = []
    for tr in transcripts:
        ann = tr.annotation
        if ann is None:
            continue
        turn = tr.turns[ann.turn_index]
        src = (tr.id, ann.turn_index)
        if cfg.variant == "offline":
            for i in range(ann.turn_index):
                t = tr.turns[i]
                if t.speaker == "customer":
                    out.append(Example(label_sequence(t, None, vocab, (tr.id, i)), turn_class=O_TAG))
            out.append(Example(label_sequence(turn, ann, vocab, src), turn_class=ann.class_id))
            continue
        seq = label_sequence(turn, ann, vocab, src)
        if cfg.lookahead_k:
            seq = apply_lookahead(seq, cfg.lookahead_k, vocab, rng)
        ctx = context_ids(tr, ann.turn_index, vocab, cfg.context_turns, CONTEXT_TOKEN_CAP)
        out.append(Example(seq, ctx, ann.class_id))
    return out


def _batch(examples: Sequence[Example], cfg: ModelConfig):
    return make_batch([e.seq for e in examples],
                      [e.context for e in examples] if cfg.context_turns else None,
                      [e.turn_class for e in examples])


def batch_loss(model, batch, cfg: ModelConfig, train: bool, rng=None, backward: bool = True) -> float:
    """Forward (and optionally backward) for one batch; returns the loss."""
    if isinstance(model, OfflineModel):
        dists, cache = model.forward(batch, train, rng)
        loss, g = cross_entropy(dists, np.where(batch.turn_class == O_TAG, 0, batch.turn_class + 1))
        if backward:
            model.backward(cache, g)
        return loss
    ib, dists, cache = model.forward(batch, train, rng)
    if cfg.variant == "intent_only":
        loss, g = unmasked_intent_loss(dists, batch.intent, batch.mask)
        if backward:
            model.backward(cache, None, g)
        return loss
    l_ib, g_ib = focal_loss(ib, batch.ib, batch.mask, FocalConfig(cfg.focal_alpha, cfg.focal_gamma))
    l_int, g_int = masked_intent_loss(dists, batch.intent, batch.ib)
    loss = combined_loss(l_ib, l_int, MultiTaskWeights(cfg.beta))
    if backward:
        model.backward(cache, cfg.beta * g_ib, (1.0 - cfg.beta) * g_int)
    return loss


# --------------------------------------------------------------- evaluation


@dataclass
class Predictions:
    """Per-example eval-mode outputs, trimmed to valid length."""

    ib_probs: list[np.ndarray]
    dists: list[np.ndarray]


def predict(model, examples: Sequence[Example], cfg: ModelConfig) -> Predictions:
    ib_all, d_all = [], []
    for start in range(0, len(examples), cfg.batch_size):
        chunk = examples[start : start + cfg.batch_size]
        batch = _batch(chunk, cfg)
        if isinstance(model, OfflineModel):
            dists, _ = model.forward(batch)
            for i in range(len(chunk)):
                ib_all.append(np.zeros(0))
                d_all.append(dists[i])
            continue
        ib, dists, _ = model.forward(batch)
        for i, ex in enumerate(chunk):
            n = len(ex.seq)
            ib_all.append(ib[i, :n] if ib is not None else np.zeros(n))
            d_all.append(dists[i, :n])
    return Predictions(ib_all, d_all)


def _tag(idx: int) -> int:
    return O_TAG if idx == 0 else idx - 1


def evaluate(model, examples: Sequence[Example], cfg: ModelConfig, threshold: float | None = None,
             pb_window: int = 0, micro: bool = False) -> dict:
    """Offline metric suite for a model on prepared examples."""
    T = cfg.ib_threshold if threshold is None else threshold
    pred = predict(model, examples, cfg)
    if isinstance(model, OfflineModel):
        p = [_tag(int(np.argmax(d))) for d in pred.dists]
        t = [e.turn_class for e in examples]
        acc = sum(a == b for a, b in zip(p, t)) / max(1, len(t))
        return {"intent_prf": intent_prf_unmasked(p, t, micro).as_dict(), "turn_accuracy": acc}
    if cfg.variant == "intent_only":
        ptags, ttags, at_b, true_b = [], [], [], []
        for ex, d in zip(examples, pred.dists):
            ptags += [_tag(int(i)) for i in np.argmax(d, axis=1)]
            ttags += list(ex.seq.intent_tags)
            b = ex.seq.boundary
            if b is not None:
                at_b.append(_tag(int(np.argmax(d[b]))))
                true_b.append(ex.seq.intent)
        return {"intent_prf": intent_prf_unmasked(ptags, ttags, micro).as_dict(),
                "intent_at_ob": intent_at_oracle_boundary(at_b, true_b, micro).as_dict()}
    ib_pred, ib_true, pb_pred, pb_true, ob_pred, ob_true = [], [], [], [], [], []
    for k, (ex, ib, d) in enumerate(zip(examples, pred.ib_probs, pred.dists)):
        for t in np.nonzero(ib > T)[0]:
            ib_pred.append((k, int(t)))
            pb_pred.append((k, int(t), _tag(int(np.argmax(d[t])))))
        b = ex.seq.boundary
        if b is not None:
            ib_true.append((k, b))
            pb_true.append((k, b, ex.seq.intent))
            ob_pred.append(_tag(int(np.argmax(d[b]))))
            ob_true.append(ex.seq.intent)
    return {
        "ib_prf": ib_prf(ib_pred, ib_true).as_dict(),
        "intent_at_ob": intent_at_oracle_boundary(ob_pred, ob_true, micro).as_dict(),
        "intent_at_pb": intent_at_predicted_boundary(pb_pred, pb_true, pb_window, micro).as_dict(),
    }


def selection_score(metrics: dict, cfg: ModelConfig) -> float:
    if cfg.variant == "offline":
        return metrics["turn_accuracy"]
    if cfg.variant == "intent_only":
        return metrics["intent_prf"]["f1"]
    return metrics["intent_at_pb"]["f1"]


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: MultiTaskModel | OfflineModel
    vocab: Vocabulary
    config: ModelConfig
    log: list[tuple[int, str, str, float]]
    best_epoch: int


class TrainingDiverged(NumericError):
    pass


def train(splits: dict[str, Sequence[Transcript]], cfg: ModelConfig, vocab: Vocabulary | None = None,
          keep_best: bool = True) -> TrainResult:
    """Train ``cfg.variant``; the vocabulary comes from the training split only.

    Returns the model restored to its best validation epoch (epoch 0 is the
    untrained model) together with ``(epoch, split, metric, value)`` rows.
    """
    if not splits.get("train"):
        raise ValueError("empty training split")
    if vocab is None:
        vocab = build_vocabulary(splits["train"], cfg.min_count)
    cfg = replace(cfg, vocab_size=vocab.size).resolved()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, shuffle_rng, drop_rng, pad_rng = (np.random.default_rng(s) for s in seeds)
    model = build_model(cfg, init_rng)
    train_ex = build_examples(splits["train"], vocab, cfg, pad_rng)
    val_ex = build_examples(splits.get("validation") or [], vocab, cfg, np.random.default_rng(cfg.seed + 1))
    params = model.trainable_parameters()
    adam = AdamState(lr=cfg.lr)
    rows: list[tuple[int, str, str, float]] = []

    def validate(epoch):
        if not val_ex:
            return -np.inf
        m = evaluate(model, val_ex, cfg)
        for name, val in _flatten(m):
            rows.append((epoch, "validation", name, val))
        return selection_score(m, cfg)

    best_score, best_epoch = validate(0), 0
    best_state = _snapshot(model)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_ex))
        total, n_batches = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_ex[i] for i in order[start : start + cfg.batch_size]]
            batch = _batch(chunk, cfg)
            try:
                loss = batch_loss(model, batch, cfg, train=True, rng=drop_rng)
                if not np.isfinite(loss):
                    raise NumericError("non-finite loss")
                adam_step(params, adam)
            except NumericError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}, batch {bi}") from exc
            total += loss
            n_batches += 1
        mean_loss = total / max(1, n_batches)
        rows.append((epoch, "train", "loss", mean_loss))
        score = validate(epoch)
        log.info("epoch %d loss %.5f val %.4f", epoch, mean_loss, score)
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_state = _snapshot(model)
    if keep_best and val_ex:
        _restore(model, best_state)
    else:
        best_epoch = cfg.epochs
    return TrainResult(model, vocab, cfg, rows, best_epoch)


def _flatten(metrics: dict, prefix: str = ""):
    for k, v in metrics.items():
        if isinstance(v, dict):
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", float(v)


def _snapshot(model) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.parameters()}


def _restore(model, state: dict[str, np.ndarray]) -> None:
    for p in model.parameters():
        p.value[...] = state[p.name]


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in rows:
            w.writerow([epoch, split, metric, repr(float(value))])



def gradcheck_model(variant: str = "multitask", seed: int = 0, fault_inject: bool = False,
                    vocab_size: int = 20, embed_dim: int = 4, hidden_dim: int = 5, num_layers: int = 2,
                    num_classes: int = 3, beta: float = 0.5, focal_alpha: float = 1.0,
                    focal_gamma: float = 8.0, n_sequences: int = 4) -> float:
    """Finite-difference check of the training objective on a tiny 64-bit model.

    Parameters are redrawn from U(-0.5, 0.5) so zero-initialized heads do not
    hide gradient paths.  ``fault_inject`` scales one analytic gradient by 1.5.
    """
    from .numkernel import grad_check

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(vocab_size=vocab_size, embed_dim=embed_dim, hidden_dim=hidden_dim, num_layers=num_layers,
                      num_classes=num_classes, beta=beta, focal_alpha=focal_alpha, focal_gamma=focal_gamma,
                      dropout=0.0, dtype="float64", variant=variant, seed=seed).resolved()
    model = build_model(cfg, rng)
    for p in model.parameters():
        p.value[...] = rng.uniform(-0.5, 0.5, p.shape)
    examples = []
    for _ in range(n_sequences):
        n = int(rng.integers(2, 7))
        b = int(rng.integers(0, n))
        ib = [0] * n
        tags = [O_TAG] * n
        ib[b] = 1
        tags[b] = int(rng.integers(0, num_classes))
        seq = LabeledSequence(tuple(int(i) for i in rng.integers(2, vocab_size, n)), tuple(ib), tuple(tags))
        ctx = [int(i) for i in rng.integers(2, vocab_size, int(rng.integers(0, 6)))] if cfg.context_turns else []
        examples.append(Example(seq, ctx, tags[b]))
    batch = _batch(examples, cfg)
    params = model.trainable_parameters()

    def loss_and_grad():
        model.zero_grad()
        loss = batch_loss(model, batch, cfg, train=False)
        if fault_inject:
            params[-1].grad *= 1.5
        return loss

    return grad_check(loss_and_grad, params)
