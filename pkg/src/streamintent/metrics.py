"""Offline P/R/F1 and real-time replay metrics.

Multi-class scores are macro averages over the intent classes that occur in
either the truths or the predictions; the ``O`` tag never counts as a class.
Macro F1 is the mean of per-class F1 values.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .corpus import O_TAG


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        return cls(p, r, 2 * p * r / (p + r) if p + r else 0.0)

    def as_dict(self) -> dict:
        return asdict(self)


def ib_prf(predicted: Iterable[tuple[Hashable, int]], truths: Iterable[tuple[Hashable, int]]) -> PRF:
    """Exact-position boundary matching over ``(sequence id, token index)`` pairs."""
    pred, true = set(predicted), set(truths)
    tp = len(pred & true)
    return PRF.from_counts(tp, len(pred - true), len(true - pred))


def _macro(tp: Counter, fp: Counter, fn: Counter, micro: bool = False) -> PRF:
    classes = sorted(c for c in set(tp) | set(fp) | set(fn) if c != O_TAG)
    if not classes:
        return PRF(0.0, 0.0, 0.0)
    if micro:
        return PRF.from_counts(sum(tp[c] for c in classes), sum(fp[c] for c in classes),
                               sum(fn[c] for c in classes))
    per = [PRF.from_counts(tp[c], fp[c], fn[c]) for c in classes]
    n = len(per)
    return PRF(sum(x.precision for x in per) / n, sum(x.recall for x in per) / n, sum(x.f1 for x in per) / n)


def classification_prf(predicted: Sequence[int], true: Sequence[int], micro: bool = False) -> PRF:
    """Macro PRF from paired labels; ``O_TAG`` predictions or truths are not a class."""
    tp, fp, fn = Counter(), Counter(), Counter()
    for p, t in zip(predicted, true, strict=True):
        if p == t:
            if p != O_TAG:
                tp[p] += 1
            continue
        if p != O_TAG:
            fp[p] += 1
        if t != O_TAG:
            fn[t] += 1
    return _macro(tp, fp, fn, micro)


def confusion_prf(matrix: Sequence[Sequence[int]]) -> PRF:
    """Macro PRF from a confusion matrix with rows = truth, columns = prediction."""
    pred, true = [], []
    for i, row in enumerate(matrix):
        for j, n in enumerate(row):
            pred += [j] * n
            true += [i] * n
    return classification_prf(pred, true)


def intent_at_oracle_boundary(predicted_classes: Sequence[int], true_classes: Sequence[int],
                              micro: bool = False) -> PRF:
    """Intent head argmax read at the ground-truth boundary of each sequence."""
    return classification_prf(predicted_classes, true_classes, micro)


def intent_at_predicted_boundary(predictions: Iterable[tuple[Hashable, int, int]],
                                 truths: Iterable[tuple[Hashable, int, int]],
                                 window: int = 0, micro: bool = False) -> PRF:
    """Joint boundary+class matching over ``(sequence id, position, class)`` triples.

    A prediction is a true positive when its class matches a not-yet-matched
    truth in the same sequence within ``window`` positions (exact by default).
    """
    truths = list(truths)
    open_truth: dict[Hashable, list[tuple[int, int]]] = {}
    for sid, pos, cls in truths:
        open_truth.setdefault(sid, []).append((pos, cls))
    tp, fp, fn = Counter(), Counter(), Counter()
    for sid, pos, cls in sorted(predictions, key=lambda x: (str(x[0]), x[1])):
        cands = open_truth.get(sid, [])
        hit = next((t for t in cands if t[1] == cls and abs(t[0] - pos) <= window), None)
        if hit is not None:
            cands.remove(hit)
            tp[cls] += 1
        else:
            fp[cls] += 1
    for cands in open_truth.values():
        for _, cls in cands:
            fn[cls] += 1
    return _macro(tp, fp, fn, micro)


def intent_prf_unmasked(predicted_tags: Sequence[int], true_tags: Sequence[int], micro: bool = False) -> PRF:
    """Token-level macro PRF over intent classes, ``O`` excluded."""
    return classification_prf(predicted_tags, true_tags, micro)


# ------------------------------------------------------------ real time


@dataclass
class DecisionRecord:
    """One line of the decisions JSONL written by replay.

    ``word``/``true_word`` are customer-word positions counted from the start
    of the conversation; -1 when not applicable.
    """

    id: str
    fired: bool
    cls: str | None
    turn: int
    token: int
    score: float
    true_class: str
    true_turn: int
    true_token: int
    word: int = -1
    true_word: int = -1

    def to_json(self) -> dict:
        return {
            "id": self.id, "fired": self.fired, "class": self.cls, "turn": self.turn, "token": self.token,
            "score": self.score, "true_class": self.true_class, "true_turn": self.true_turn,
            "true_token": self.true_token, "word": self.word, "true_word": self.true_word,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DecisionRecord":
        return cls(str(d["id"]), bool(d["fired"]), d["class"], int(d["turn"]), int(d["token"]),
                   float(d["score"]), d["true_class"], int(d["true_turn"]), int(d["true_token"]),
                   int(d.get("word", -1)), int(d.get("true_word", -1)))


def write_decisions(records: Iterable[DecisionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_decisions(path: str | Path) -> list[DecisionRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DecisionRecord.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass
class RealTimeReport:
    acc: float
    acc_rt: float
    acc_rp: float
    mtd: float
    mpd: float
    n: int
    n_missed: int
    turn_diff_histogram: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["turn_diff_histogram"] = {str(k): v for k, v in sorted(self.turn_diff_histogram.items())}
        return d


def realtime_metrics(records: Sequence[DecisionRecord]) -> RealTimeReport:
    """Acc, Acc@RT, Acc@RP over all records; MTD/MPD (predicted − true) over fired ones."""
    if not records:
        raise ValueError("no decision records")
    n = len(records)
    fired = [r for r in records if r.fired]
    right = [r for r in fired if r.cls == r.true_class]
    right_turn = [r for r in right if r.turn == r.true_turn]
    right_pos = [r for r in right_turn if r.token == r.true_token]
    tdiff = [r.turn - r.true_turn for r in fired]
    wdiff = [r.word - r.true_word for r in fired]
    return RealTimeReport(
        acc=len(right) / n,
        acc_rt=len(right_turn) / n,
        acc_rp=len(right_pos) / n,
        mtd=sum(tdiff) / len(fired) if fired else 0.0,
        mpd=sum(wdiff) / len(fired) if fired else 0.0,
        n=n,
        n_missed=n - len(fired),
        turn_diff_histogram=dict(sorted(Counter(tdiff).items())),
    )


def export_histogram(report: RealTimeReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["turn_diff", "count"])
        for k in sorted(report.turn_diff_histogram):
            w.writerow([k, report.turn_diff_histogram[k]])


def read_histogram(path: str | Path) -> dict[int, int]:
    with open(path, newline="") as fh:
        return {int(row["turn_diff"]): int(row["count"]) for row in csv.DictReader(fh)}
