"""Seeded synthetic support-call generator.

Every call opens with an agent greeting, optionally has a short customer
small-talk exchange, then a customer turn stating exactly one intent phrase
(the boundary is the phrase's last word), optionally followed by distractor
words.  Later turns may restate the intent.  Words are timed at a constant
400 ms each.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import IntentAnnotation, Token, Transcript, Turn

MS_PER_WORD = 400

DEFAULT_LEXICON: dict[str, list[str]] = {
    "account_management": ["update my account details", "change the account holder", "add an authorized user"],
    "billing_inquiry": ["question about my bill", "explain these charges", "check my last statement"],
    "payment": ["make a payment", "pay off my balance", "set up autopay"],
    "change_plan": ["change my plan", "switch to a cheaper package", "upgrade my subscription"],
    "cancel_service": ["cancel my service", "close the whole line", "disconnect everything"],
    "technical_support": ["my phone keeps freezing", "the app is crashing", "fix a software glitch"],
    "internet_outage": ["my internet is down", "there is no wifi connection", "the modem lights are blinking"],
    "device_upgrade": ["get a new iphone", "replace my handset", "trade in my old device"],
    "sim_activation": ["activate my sim card", "set up a new esim"],
    "roaming": ["use my phone abroad", "add international roaming", "travel to mexico"],
    "data_usage": ["check my data usage", "my hotspot keeps throttling", "buy extra gigabytes"],
    "password_reset": ["reset my password", "i forgot my login", "recover my pin"],
    "moving_address": ["update my address", "i am moving to a new apartment", "change my billing zipcode"],
    "number_transfer": ["port my number", "keep my old number", "switch from another carrier"],
    "equipment_return": ["return the router", "send back the cable box", "ship back my equipment"],
    "complaint": ["file a complaint", "speak to a supervisor", "i was treated rudely"],
}

DEFAULT_FILLERS = (
    "um uh yeah so i was calling because wanted to hi hello well like okay you know actually "
    "basically just please and also today sorry right anyway it's that kind of thing oh "
    "hmm yes sure alright guess think maybe really"
).split()

DEFAULT_GREETINGS = (
    "thank you for calling this is alex how can i help you today",
    "hi you're speaking with sam what can i do for you",
    "good morning thanks for calling how may i help",
    "welcome to customer support this is jordan how can i assist",
)

DEFAULT_AGENT_REPLIES = (
    "sure go ahead",
    "okay how can i help",
    "no problem what do you need",
    "sure i am listening",
)

DEFAULT_AGENT_FOLLOWUPS = (
    "okay let me pull that up for you",
    "alright one moment please",
    "i can help with that can you verify your identity",
    "sure give me a second",
)

DEFAULT_AGENT_CLOSINGS = (
    "alright that is all set",
    "okay is there anything else",
    "great thanks for your patience",
)

# Suffix word counts after the boundary; at 0.4 s/word about 80% of
# non-final offsets stay under 10 seconds.
DEFAULT_TRAILING = {2: 0.15, 4: 0.2, 6: 0.2, 9: 0.15, 14: 0.1, 20: 0.1, 30: 0.05, 40: 0.05}


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    num_transcripts: int = 1917
    classes: dict[str, list[str]] = field(default_factory=lambda: dict(DEFAULT_LEXICON))
    fillers: Sequence[str] = tuple(DEFAULT_FILLERS)
    greetings: Sequence[str] = DEFAULT_GREETINGS
    end_of_turn_boundary_rate: float = 0.62
    trailing_length_distribution: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_TRAILING))
    small_talk_rate: float = 0.3
    restatement_rate: float = 0.5
    max_prefix_fillers: int = 5
    class_weights: Sequence[float] | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.num_transcripts < 0:
            raise GeneratorError("num_transcripts must be >= 0")
        if not self.classes:
            raise GeneratorError("need at least one class")
        for name, phrases in self.classes.items():
            if not phrases or any(not p.split() for p in phrases):
                raise GeneratorError(f"class {name!r} has an empty lexicon")
        for rate in (self.end_of_turn_boundary_rate, self.small_talk_rate, self.restatement_rate):
            if not 0.0 <= rate <= 1.0:
                raise GeneratorError("rates must lie in [0, 1]")
        if not self.trailing_length_distribution or any(
            k < 1 or w < 0 for k, w in self.trailing_length_distribution.items()
        ):
            raise GeneratorError("trailing lengths must be >= 1 with non-negative weights")
        if self.class_weights is not None and len(self.class_weights) != len(self.classes):
            raise GeneratorError("class_weights length must match the class list")

    @property
    def class_names(self) -> list[str]:
        return list(self.classes)


def _keywords(spec: GeneratorSpec) -> set[str]:
    return {p.split()[-1] for phrases in spec.classes.values() for p in phrases}


def _distractor_pools(spec: GeneratorSpec) -> list[list[str]]:
    """Per class: fillers plus other classes' non-keyword words."""
    keywords = _keywords(spec)
    non_kw = {
        name: {w for p in phrases for w in p.split()[:-1] if w not in keywords}
        for name, phrases in spec.classes.items()
    }
    pools = []
    for name in spec.classes:
        words = set(spec.fillers) - keywords
        for other, ws in non_kw.items():
            if other != name:
                words |= ws
        pools.append(sorted(words))
    return pools


class _Clock:
    def __init__(self):
        self.t = 0

    def turn(self, speaker: str, words: Sequence[str]) -> Turn:
        tokens = []
        for w in words:
            tokens.append(Token(w, self.t, self.t + MS_PER_WORD))
            self.t += MS_PER_WORD
        return Turn(speaker, tuple(tokens))


def generate_corpus(spec: GeneratorSpec) -> list[Transcript]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = spec.class_names
    weights = None
    if spec.class_weights is not None:
        w = np.asarray(spec.class_weights, dtype=float)
        weights = w / w.sum()
    pools = _distractor_pools(spec)
    fillers = sorted(set(spec.fillers) - _keywords(spec))
    lengths = sorted(spec.trailing_length_distribution)
    length_p = np.array([spec.trailing_length_distribution[k] for k in lengths], dtype=float)
    length_p /= length_p.sum()

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    def fill(n):
        return [pick(fillers) for _ in range(n)]

    out = []
    for n in range(spec.num_transcripts):
        cls = int(rng.choice(len(names), p=weights))
        phrases = spec.classes[names[cls]]
        clock = _Clock()
        turns = [clock.turn("agent", pick(spec.greetings).split())]
        if rng.random() < spec.small_talk_rate:
            turns.append(clock.turn("customer", fill(int(rng.integers(2, 6)))))
            turns.append(clock.turn("agent", pick(DEFAULT_AGENT_REPLIES).split()))

        prefix = fill(int(rng.integers(0, spec.max_prefix_fillers + 1)))
        phrase = pick(phrases).split()
        words = prefix + phrase
        boundary = len(words) - 1
        if rng.random() >= spec.end_of_turn_boundary_rate:
            k = int(rng.choice(lengths, p=length_p))
            words += [pick(pools[cls]) for _ in range(k)]
        intent_turn = len(turns)
        turns.append(clock.turn("customer", words))

        turns.append(clock.turn("agent", pick(DEFAULT_AGENT_FOLLOWUPS).split()))
        if rng.random() < spec.restatement_rate:
            turns.append(clock.turn("customer", ["yes"] + fill(int(rng.integers(0, 3))) + pick(phrases).split()))
        else:
            turns.append(clock.turn("customer", fill(int(rng.integers(1, 4)))))
        turns.append(clock.turn("agent", pick(DEFAULT_AGENT_CLOSINGS).split()))

        out.append(
            Transcript(f"syn-{spec.seed}-{n:05d}", tuple(turns), IntentAnnotation(cls, intent_turn, boundary))
        )
    return out


# ---------------------------------------------------------------- statistics


@dataclass
class CorpusStats:
    num_transcripts: int
    class_counts: dict[str, int]
    end_of_turn_fraction: float | None
    offset_seconds: list[float]

    def offset_histogram(self) -> dict[float, int]:
        return dict(sorted(Counter(self.offset_seconds).items()))


def summarize_corpus(transcripts: Sequence[Transcript], classes: Sequence[str]) -> CorpusStats:
    """Class counts and the boundary-to-end-of-turn offsets in seconds."""
    counts = {c: 0 for c in classes}
    offsets = []
    for tr in transcripts:
        ann = tr.annotation
        if ann is None:
            continue
        counts[classes[ann.class_id]] += 1
        turn = tr.turns[ann.turn_index]
        delta_ms = turn.tokens[-1].end_ms - turn.tokens[ann.boundary_token_index].end_ms
        offsets.append(round(delta_ms / 1000.0, 3))
    frac = sum(1 for o in offsets if o == 0) / len(offsets) if offsets else None
    return CorpusStats(len(transcripts), counts, frac, offsets)


def write_stats_csv(stats: CorpusStats, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "count"])
        for bucket, count in stats.offset_histogram().items():
            w.writerow([f"{bucket:g}", count])
