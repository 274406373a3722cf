"""Word-at-a-time inference sessions and conversation replay.

A :class:`StreamSession` follows one conversation: task states are reset at
every turn start, customer words advance the model one step each, and the
first boundary score above the threshold emits a :class:`Decision` that ends
the conversation.  Models without a boundary head fire on the first step
whose argmax is not O.  Agent words are only buffered as context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Transcript, Vocabulary
from .metrics import DecisionRecord
from .models import CONTEXT_TOKEN_CAP, MultiTaskModel, OfflineModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Decision:
    class_id: int
    ib_score: float
    turn_index: int
    token_index: int  # lookahead-corrected position within the turn
    raw_position: int  # step index within the turn at which the score crossed T
    word_position: int  # customer words since conversation start, corrected


class StreamSession:
    """State for one conversation.

    ``strict_algorithm1`` steps the intent stack only at the firing word,
    from the turn's initial state, instead of on every word.
    """

    def __init__(self, model: MultiTaskModel | OfflineModel, vocab: Vocabulary, threshold: float | None = None,
                 lookahead_k: int | None = None, pad_rng: np.random.Generator | None = None,
                 strict_algorithm1: bool | None = None):
        cfg = model.cfg
        self.model = model
        self.vocab = vocab
        self.threshold = cfg.ib_threshold if threshold is None else threshold
        self.lookahead_k = cfg.lookahead_k if lookahead_k is None else lookahead_k
        self.context_turns = cfg.context_turns
        self.strict = cfg.strict_algorithm1 if strict_algorithm1 is None else strict_algorithm1
        self.pad_rng = pad_rng if pad_rng is not None else np.random.default_rng(0)
        self.context: list[list[int]] = []
        self.turn_index = -1
        self.fired: Decision | None = None
        self.steps = 0
        self.ignored = 0
        self._speaker: str | None = None
        self._turn_ids: list[int] = []
        self._pos = 0
        self._words_before = 0
        self.states = None
        self._init_states = None

    # -- turn lifecycle -----------------------------------------------------

    def begin_turn(self, speaker: str) -> None:
        if self._speaker is not None:
            self.end_turn()
        self.turn_index += 1
        self._speaker = speaker
        self._turn_ids = []
        self._pos = 0
        if speaker == "customer" and isinstance(self.model, MultiTaskModel):
            ctx = [i for turn in self.context[-self.context_turns:] for i in turn] if self.context_turns else []
            self.states = self.model.encode_context(ctx[-CONTEXT_TOKEN_CAP:])
            self._init_states = (self.states[0].copy(), self.states[1].copy())
        else:
            self.states = None

    def push_word(self, word: str | int) -> Decision | None:
        if self._speaker is None:
            raise RuntimeError("push_word outside a turn")
        token_id = self.vocab.id(word) if isinstance(word, str) else int(word)
        if self.fired is not None:
            self.ignored += 1
            return None
        self._turn_ids.append(token_id)
        if self._speaker != "customer":
            return None
        decision = None
        if isinstance(self.model, MultiTaskModel):
            decision = self._step(token_id)
        self._pos += 1
        return decision

    def end_turn(self) -> Decision | None:
        if self._speaker is None:
            return None
        decision = None
        if self._speaker == "customer" and self.fired is None:
            if isinstance(self.model, OfflineModel):
                decision = self._classify_turn()
            elif self.lookahead_k:
                for _ in range(self.lookahead_k):
                    decision = self._step(self.vocab.random_word_id(self.pad_rng))
                    self._pos += 1
                    if decision is not None:
                        break
        real = self._turn_ids
        if self._speaker == "customer":
            self._words_before += len(real)
        if self.context_turns:
            self.context.append(list(real))
            del self.context[: -self.context_turns]
        self._speaker = None
        return decision

    # -- internals ------------------------------------------------------------

    def _emit(self, class_id: int, score: float, raw: int) -> Decision:
        tok = max(raw - self.lookahead_k, 0)
        self.fired = Decision(class_id, score, self.turn_index, tok, raw, self._words_before + tok)
        return self.fired

    def _step(self, token_id: int) -> Decision | None:
        model: MultiTaskModel = self.model
        self.steps += 1
        if not model.uses_ib:
            _, dist, self.states = model.stream_step(token_id, self.states)
            # no boundary score: fire on the first non-O argmax, T unused
            best = int(np.argmax(dist))
            if best != 0:
                return self._emit(best - 1, float(dist[best]), self._pos)
            return None
        if self.strict:
            ib_p, ib_state = model.ib_step(token_id, self.states[0])
            self.states = (ib_state, self.states[1])
            if ib_p > self.threshold:
                dist, _ = model.intent_step(token_id, self._init_states[1])
                return self._emit(int(np.argmax(dist[1:])), ib_p, self._pos)
            return None
        ib_p, dist, self.states = model.stream_step(token_id, self.states)
        if ib_p > self.threshold:
            return self._emit(int(np.argmax(dist[1:])), ib_p, self._pos)
        return None

    def _classify_turn(self) -> Decision | None:
        if not self._turn_ids:
            return None
        self.steps += 1
        dist = self.model.classify(self._turn_ids)
        best = int(np.argmax(dist))
        if best == 0:
            return None
        return self._emit(best - 1, float(dist[best]), len(self._turn_ids) - 1)


def run_transcript(session: StreamSession, tr: Transcript) -> Decision | None:
    for turn in tr.turns:
        session.begin_turn(turn.speaker)
        for tok in turn.tokens:
            d = session.push_word(tok.text)
            if d is not None:
                break
        session.end_turn()
        if session.fired is not None:
            break
    return session.fired


def replay(transcripts: Sequence[Transcript], model, vocab: Vocabulary, classes: Sequence[str],
           threshold: float | None = None, eval_seed: int = 0,
           strict_algorithm1: bool | None = None) -> list[DecisionRecord]:
    """Replay each annotated conversation and record its first decision."""
    records = []
    for idx, tr in enumerate(transcripts):
        ann = tr.annotation
        if ann is None:
            log.warning("skipping unannotated transcript %s", tr.id)
            continue
        rng = np.random.default_rng([eval_seed, idx])
        session = StreamSession(model, vocab, threshold, pad_rng=rng, strict_algorithm1=strict_algorithm1)
        d = run_transcript(session, tr)
        true_word = tr.customer_words_before(ann.turn_index) + ann.boundary_token_index
        common = dict(id=tr.id, true_class=classes[ann.class_id], true_turn=ann.turn_index,
                      true_token=ann.boundary_token_index, true_word=true_word)
        if d is None:
            records.append(DecisionRecord(fired=False, cls=None, turn=-1, token=-1, score=0.0, word=-1, **common))
        else:
            records.append(DecisionRecord(fired=True, cls=classes[d.class_id], turn=d.turn_index,
                                          token=d.token_index, score=round(d.ib_score, 6),
                                          word=d.word_position, **common))
    return records
