"""Run configuration: a line-oriented ``section.key = value`` file.

Blank lines and ``#`` comments are ignored; unknown keys are rejected.
Command-line flags override file values.  Randomness comes from three
seeds: ``data.seed`` (generation and splitting), ``train.seed`` and
``eval.seed`` (lookahead padding during replay and evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import DEFAULT_FRACTIONS
from .models import ModelConfig
from .syngen import DEFAULT_LEXICON, GeneratorSpec


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _list(s))


# key -> (target, attribute, parser)
_KEYS = {
    "data.corpus": ("run", "corpus", str),
    "data.classes": ("run", "classes", _list),
    "data.seed": ("run", "data_seed", int),
    "data.fractions": ("run", "fractions", _floats),
    "gen.num_transcripts": ("gen", "num_transcripts", int),
    "gen.end_of_turn_boundary_rate": ("gen", "end_of_turn_boundary_rate", float),
    "gen.small_talk_rate": ("gen", "small_talk_rate", float),
    "gen.restatement_rate": ("gen", "restatement_rate", float),
    "gen.max_prefix_fillers": ("gen", "max_prefix_fillers", int),
    "model.variant": ("model", "variant", str),
    "model.embed_dim": ("model", "embed_dim", int),
    "model.hidden_dim": ("model", "hidden_dim", int),
    "model.num_layers": ("model", "num_layers", int),
    "model.dropout": ("model", "dropout", float),
    "model.beta": ("model", "beta", float),
    "model.focal_alpha": ("model", "focal_alpha", float),
    "model.focal_gamma": ("model", "focal_gamma", float),
    "model.lookahead_k": ("model", "lookahead_k", int),
    "model.context_turns": ("model", "context_turns", int),
    "model.min_count": ("model", "min_count", int),
    "model.dtype": ("model", "dtype", str),
    "train.epochs": ("model", "epochs", int),
    "train.lr": ("model", "lr", float),
    "train.batch_size": ("model", "batch_size", int),
    "train.seed": ("model", "seed", int),
    "eval.threshold": ("model", "ib_threshold", float),
    "eval.strict_algorithm1": ("model", "strict_algorithm1", _bool),
    "eval.seed": ("run", "eval_seed", int),
    "eval.pb_window": ("run", "pb_window", int),
    "paths.checkpoint": ("run", "checkpoint", str),
    "paths.reports": ("run", "reports", str),
    "paths.log": ("run", "log", str),
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    gen: GeneratorSpec = field(default_factory=GeneratorSpec)
    classes: list[str] = field(default_factory=lambda: list(DEFAULT_LEXICON))
    corpus: str = "corpus.jsonl"
    checkpoint: str = "model.sint"
    reports: str = "reports"
    log: str = ""
    data_seed: int = 0
    eval_seed: int = 0
    pb_window: int = 0
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS

    def generator_spec(self) -> GeneratorSpec:
        missing = [c for c in self.classes if c not in DEFAULT_LEXICON]
        if missing:
            raise ConfigError(f"no generator lexicon for classes {missing}")
        return replace(self.gen, classes={c: list(DEFAULT_LEXICON[c]) for c in self.classes},
                       seed=self.data_seed)

    def model_config(self) -> ModelConfig:
        return replace(self.model, num_classes=len(self.classes))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    run = RunConfig()
    model_kw: dict = {}
    gen_kw: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        target, attr, parse = _KEYS[key]
        try:
            val = parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        if target == "run":
            setattr(run, attr, val)
        elif target == "model":
            model_kw[attr] = val
        else:
            gen_kw[attr] = val
    run.model = replace(run.model, **model_kw)
    run.gen = replace(run.gen, **gen_kw)
    if not run.classes:
        raise ConfigError(f"{source}: empty class list")
    try:
        run.model_config().validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return run


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    run = parse_config(p.read_text(encoding="utf-8"), str(p))
    base = p.parent
    for attr in ("corpus", "checkpoint", "reports", "log"):
        val = getattr(run, attr)
        if val and not Path(val).is_absolute():
            setattr(run, attr, str(base / val))
    return run
