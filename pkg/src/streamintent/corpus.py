"""Transcript data model, JSONL I/O, vocabulary and sequence labeling.

Tags follow the turn-level labeling scheme: the intent boundary (IB) token
carries ``1`` and the intent class, every other token is ``O``.  Internally
``O`` is ``0`` for IB tags and ``-1`` (:data:`O_TAG`) for intent tags.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPEAKERS = ("agent", "customer")
O_TAG = -1
PAD = "<pad>"
UNK = "<unk>"

# 1526/194/197 of 1917 transcripts.
DEFAULT_FRACTIONS = (1526 / 1917, 194 / 1917, 197 / 1917)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent transcript data."""


@dataclass(frozen=True)
class Token:
    text: str
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if not self.text:
            raise CorpusError("token text must be non-empty")
        if self.start_ms < 0 or self.end_ms < self.start_ms:
            raise CorpusError(f"bad token times for {self.text!r}: {self.start_ms}..{self.end_ms}")


@dataclass(frozen=True)
class Turn:
    speaker: str
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise CorpusError(f"unknown speaker {self.speaker!r}")
        if not self.tokens:
            raise CorpusError("turn must contain at least one token")
        for a, b in zip(self.tokens, self.tokens[1:]):
            if b.start_ms < a.start_ms or b.end_ms < a.end_ms:
                raise CorpusError("token times must be non-decreasing within a turn")

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class IntentAnnotation:
    class_id: int
    turn_index: int
    boundary_token_index: int


@dataclass(frozen=True)
class Transcript:
    id: str
    turns: tuple[Turn, ...]
    annotation: IntentAnnotation | None = None

    def validate(self, num_classes: int | None = None) -> None:
        ann = self.annotation
        if ann is None:
            return
        if not 0 <= ann.turn_index < len(self.turns):
            raise CorpusError(f"transcript {self.id}: annotation turn {ann.turn_index} out of range")
        turn = self.turns[ann.turn_index]
        if turn.speaker != "customer":
            raise CorpusError(f"transcript {self.id}: annotation points at an agent turn")
        if not 0 <= ann.boundary_token_index < len(turn):
            raise CorpusError(
                f"transcript {self.id}: boundary token {ann.boundary_token_index} out of range"
            )
        if ann.class_id < 0 or (num_classes is not None and ann.class_id >= num_classes):
            raise CorpusError(f"transcript {self.id}: class id {ann.class_id} out of range")

    def customer_words_before(self, turn_index: int) -> int:
        """Number of customer words spoken in turns ``[0, turn_index)``."""
        return sum(len(t) for t in self.turns[:turn_index] if t.speaker == "customer")


# ---------------------------------------------------------------- JSONL I/O


def _turn_from_json(obj: dict) -> Turn:
    tokens = tuple(Token(str(t["t"]).lower(), int(t["s"]), int(t["e"])) for t in obj["tokens"])
    return Turn(obj["speaker"], tokens)


def transcript_from_json(obj: dict, classes: Sequence[str]) -> Transcript:
    turns = tuple(_turn_from_json(t) for t in obj["turns"])
    ann = obj.get("annotation")
    annotation = None
    if ann is not None:
        name = ann["class"]
        if name not in classes:
            raise CorpusError(f"transcript {obj['id']}: unknown class {name!r}")
        annotation = IntentAnnotation(classes.index(name), int(ann["turn"]), int(ann["token"]))
    tr = Transcript(str(obj["id"]), turns, annotation)
    tr.validate(len(classes))
    return tr


def transcript_to_json(tr: Transcript, classes: Sequence[str]) -> dict:
    ann = tr.annotation
    return {
        "id": tr.id,
        "turns": [
            {
                "speaker": turn.speaker,
                "tokens": [{"t": t.text, "s": t.start_ms, "e": t.end_ms} for t in turn.tokens],
            }
            for turn in tr.turns
        ],
        "annotation": None
        if ann is None
        else {"class": classes[ann.class_id], "turn": ann.turn_index, "token": ann.boundary_token_index},
    }


def load_transcripts(path: str | Path, classes: Sequence[str]) -> list[Transcript]:
    """Read a JSONL transcript file, validating every annotation."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise TypeError("expected a JSON object")
                tr = transcript_from_json(obj, classes)
            except CorpusError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed transcript line ({exc})") from exc
            out.append(tr)
    return out


def dump_transcripts(transcripts: Iterable[Transcript], classes: Sequence[str]) -> str:
    lines = [
        json.dumps(transcript_to_json(tr, classes), separators=(",", ":"), ensure_ascii=False)
        for tr in transcripts
    ]
    return "".join(line + "\n" for line in lines)


def save_transcripts(path: str | Path, transcripts: Iterable[Transcript], classes: Sequence[str]) -> None:
    Path(path).write_text(dump_transcripts(transcripts, classes), encoding="utf-8")


# --------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    """Word ↔ id map.  ``PAD`` is id 0 and ``UNK`` id 1."""

    tokens: list[str]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise CorpusError("vocabulary must start with PAD and UNK")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise CorpusError("duplicate vocabulary entries")

    pad_id = 0
    unk_id = 1

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, word: str) -> int:
        return self.token_to_id.get(word, self.unk_id)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]

    def random_word_id(self, rng: np.random.Generator) -> int:
        """Uniform draw over non-special ids (used for lookahead padding)."""
        if self.size <= 2:
            return self.unk_id
        return int(rng.integers(2, self.size))


def build_vocabulary(transcripts: Sequence[Transcript], min_count: int = 2) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for tr in transcripts:
        for turn in tr.turns:
            counts.update(turn.words)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = sorted((w for w, n in counts.items() if n >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary([PAD, UNK] + [w for w in kept if w not in (PAD, UNK)])


# ------------------------------------------------------------------ labeling


@dataclass(frozen=True)
class LabeledSequence:
    token_ids: tuple[int, ...]
    ib_tags: tuple[int, ...]
    intent_tags: tuple[int, ...]
    source: tuple[str, int] = ("", 0)

    def __post_init__(self):
        if not len(self.token_ids) == len(self.ib_tags) == len(self.intent_tags):
            raise CorpusError("token/tag lists differ in length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def boundary(self) -> int | None:
        """Index of the IB token, or None for an unannotated sequence."""
        for i, tag in enumerate(self.ib_tags):
            if tag == 1:
                return i
        return None

    @property
    def intent(self) -> int | None:
        b = self.boundary
        return None if b is None else self.intent_tags[b]


def label_sequence(
    turn: Turn,
    annotation: IntentAnnotation | None,
    vocab: Vocabulary,
    source: tuple[str, int] = ("", 0),
) -> LabeledSequence:
    n = len(turn)
    ib = [0] * n
    intent = [O_TAG] * n
    if annotation is not None:
        b = annotation.boundary_token_index
        if not 0 <= b < n:
            raise CorpusError(f"boundary {b} outside turn of length {n}")
        ib[b] = 1
        intent[b] = annotation.class_id
    return LabeledSequence(tuple(vocab.encode(turn.words)), tuple(ib), tuple(intent), source)


def apply_lookahead(
    seq: LabeledSequence,
    k: int,
    vocab: Vocabulary,
    rng: np.random.Generator | None = None,
) -> LabeledSequence:
    """Move the boundary tags ``k`` words to the right.

    When the shifted boundary falls past the end of the turn, random
    vocabulary words are appended so that the tag lands exactly ``k`` words
    after the original boundary.
    """
    if k < 0:
        raise ValueError("lookahead k must be >= 0")
    b = seq.boundary
    if k == 0 or b is None:
        return seq
    target = b + k
    ids = list(seq.token_ids)
    if target >= len(ids):
        if rng is None:
            raise ValueError("padding required but no rng supplied")
        ids.extend(vocab.random_word_id(rng) for _ in range(target - len(ids) + 1))
    ib = [0] * len(ids)
    intent = [O_TAG] * len(ids)
    ib[target] = 1
    intent[target] = seq.intent_tags[b]
    return LabeledSequence(tuple(ids), tuple(ib), tuple(intent), seq.source)


# --------------------------------------------------------------- splitting


def split_dataset(
    transcripts: Sequence[Transcript],
    seed: int,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> dict[str, list[Transcript]]:
    """Seeded shuffle into train/validation/test.

    Validation and test sizes are rounded; train takes the remainder.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("need three positive fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(transcripts)
    if n < 3:
        raise ValueError("need at least one transcript per split")
    n_val = max(1, int(math.floor(fractions[1] * n + 0.5)))
    n_test = max(1, int(math.floor(fractions[2] * n + 0.5)))
    if n - n_val - n_test < 1:
        raise ValueError("too few transcripts for the requested split")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [transcripts[i] for i in order]
    return {
        "train": shuffled[: n - n_val - n_test],
        "validation": shuffled[n - n_val - n_test : n - n_test],
        "test": shuffled[n - n_test :],
    }


def context_ids(tr: Transcript, turn_index: int, vocab: Vocabulary, n_turns: int, cap: int = 120) -> list[int]:
    """Concatenated ids of up to ``n_turns`` turns preceding ``turn_index``."""
    if n_turns <= 0:
        return []
    ids: list[int] = []
    for turn in tr.turns[max(0, turn_index - n_turns) : turn_index]:
        ids.extend(vocab.encode(turn.words))
    return ids[-cap:] if cap else ids
