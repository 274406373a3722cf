"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric failure.
``--seed`` overrides the seed that command consumes: the data seed for
``gen``, the training seed for ``train`` and the evaluation seed otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError, load_transcripts, save_transcripts, split_dataset
from .metrics import export_histogram, realtime_metrics, write_decisions
from .models import VARIANTS, MultiTaskModel
from .numkernel import NumericError
from .stream import replay
from .syngen import GeneratorError, generate_corpus, summarize_corpus, write_stats_csv
from .training import build_examples, evaluate, gradcheck_model, train, write_log

log = logging.getLogger("streamintent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-6
THRESHOLD_GRID = [round(0.05 * i, 2) for i in range(1, 20)]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _splits(run: RunConfig):
    corpus = load_transcripts(run.corpus, run.classes)
    return split_dataset(corpus, run.data_seed, run.fractions)


def _load_ckpt(run: RunConfig, path: str | None):
    ckpt = load_checkpoint(path or run.checkpoint)
    if ckpt.classes != run.classes:
        raise ConfigError("checkpoint class list does not match the config's classes")
    return ckpt


# ----------------------------------------------------------------- commands


def cmd_gen(run: RunConfig, args) -> int:
    if args.seed is not None:
        run.data_seed = args.seed
    out = Path(args.out or run.corpus)
    out.parent.mkdir(parents=True, exist_ok=True)
    spec = run.generator_spec()
    corpus = generate_corpus(spec)
    save_transcripts(out, corpus, run.classes)
    stats = summarize_corpus(corpus, run.classes)
    write_stats_csv(stats, out.with_suffix(".stats.csv"))
    _dump({"num_transcripts": stats.num_transcripts, "class_counts": stats.class_counts,
           "end_of_turn_fraction": stats.end_of_turn_fraction}, str(out.with_suffix(".stats.json")))
    if not args.no_plots:
        from .plots import plot_offset_distribution

        plot_offset_distribution(stats.offset_seconds, out.with_suffix(".offsets.png"))
    print(f"wrote {len(corpus)} transcripts to {out}")
    return EXIT_OK


def cmd_train(run: RunConfig, args) -> int:
    cfg = run.model_config()
    if args.variant is not None:
        cfg = replace(cfg, variant=args.variant)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    cfg.validate()
    result = train(_splits(run), cfg)
    out = Path(args.out or run.checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, result.vocab, run.classes, out)
    log_path = Path(run.log) if run.log else out.with_suffix(".log.csv")
    write_log(result.log, log_path)
    if not args.no_plots:
        from .plots import plot_training_curve

        plot_training_curve(result.log, log_path.with_suffix(".png"))
    print(f"variant={result.config.variant} best_epoch={result.best_epoch} checkpoint={out}")
    return EXIT_OK


def _threshold(run: RunConfig, args) -> float:
    return args.threshold if args.threshold is not None else run.model.ib_threshold


def cmd_eval(run: RunConfig, args) -> int:
    if args.seed is not None:
        run.eval_seed = args.seed
    ckpt = _load_ckpt(run, args.checkpoint)
    test = _splits(run)[args.split]
    cfg = ckpt.config
    examples = build_examples(test, ckpt.vocab, cfg, np.random.default_rng(run.eval_seed))
    metrics = evaluate(ckpt.model, examples, cfg, _threshold(run, args), run.pb_window)
    metrics["variant"] = cfg.variant
    metrics["threshold"] = _threshold(run, args)
    _dump(metrics, args.out)
    return EXIT_OK


def cmd_replay(run: RunConfig, args) -> int:
    if args.seed is not None:
        run.eval_seed = args.seed
    ckpt = _load_ckpt(run, args.checkpoint)
    transcripts = _splits(run)[args.split]
    strict = True if args.strict_algorithm1 else None
    records = replay(transcripts, ckpt.model, ckpt.vocab, run.classes, _threshold(run, args),
                     run.eval_seed, strict)
    report = realtime_metrics(records)
    out = Path(args.out or run.reports)
    out.mkdir(parents=True, exist_ok=True)
    write_decisions(records, out / "decisions.jsonl")
    _dump({"variant": ckpt.config.variant, **report.as_dict()}, str(out / "realtime_report.json"))
    export_histogram(report, out / "turn_diff.csv")
    if not args.no_plots:
        from .plots import plot_turn_difference

        plot_turn_difference(report.turn_diff_histogram, out / "turn_diff.png",
                             title=f"{ckpt.config.variant}: predicted minus true turn")
    print(f"acc={report.acc:.4f} acc_rt={report.acc_rt:.4f} acc_rp={report.acc_rp:.4f} "
          f"mtd={report.mtd:.3f} mpd={report.mpd:.3f} missed={report.n_missed}/{report.n}")
    return EXIT_OK


def cmd_tune(run: RunConfig, args) -> int:
    if args.seed is not None:
        run.eval_seed = args.seed
    ckpt = _load_ckpt(run, args.checkpoint)
    cfg = ckpt.config
    if not isinstance(ckpt.model, MultiTaskModel) or not ckpt.model.uses_ib:
        raise ConfigError("threshold tuning needs a model with an intent-boundary head")
    val = _splits(run)["validation"]
    examples = build_examples(val, ckpt.vocab, cfg, np.random.default_rng(run.eval_seed))
    grid = []
    for t in THRESHOLD_GRID:
        f1 = evaluate(ckpt.model, examples, cfg, t, run.pb_window)["intent_at_pb"]["f1"]
        grid.append({"threshold": t, "intent_at_pb_f1": f1})
    best = max(grid, key=lambda g: (g["intent_at_pb_f1"], -abs(g["threshold"] - 0.5)))
    _dump({"best_threshold": best["threshold"], "best_intent_at_pb_f1": best["intent_at_pb_f1"], "grid": grid},
          args.out)
    return EXIT_OK


def cmd_gradcheck(run: RunConfig | None, args) -> int:
    cfg = run.model_config() if run is not None else None
    variant = args.variant or (cfg.variant if cfg else "multitask")
    kw = {}
    if cfg is not None:
        kw = dict(beta=cfg.beta, focal_alpha=cfg.focal_alpha, focal_gamma=cfg.focal_gamma)
    err = gradcheck_model(variant, seed=args.seed or 0, fault_inject=args.fault_inject, **kw)
    ok = err < GRADCHECK_TOL
    print(f"variant={variant} max_relative_error={err:.3e} {'PASS' if ok else 'FAIL'} (tol {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamintent", description="Streaming intent detection for support-call transcripts.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        return sp

    sp = common(sub.add_parser("gen", help="generate a synthetic corpus"))
    sp.add_argument("--no-plots", action="store_true")

    sp = common(sub.add_parser("train", help="train a model variant"))
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--no-plots", action="store_true")

    for name, helptext in (("eval", "offline metric suite"), ("replay", "real-time replay"),
                           ("tune-threshold", "sweep the IB threshold on validation")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--checkpoint")
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--split", choices=("train", "validation", "test"), default="test")
        if name == "replay":
            sp.add_argument("--strict-algorithm1", action="store_true")
            sp.add_argument("--no-plots", action="store_true")

    sp = common(sub.add_parser("gradcheck", help="finite-difference gradient check"), config_required=False)
    sp.add_argument("--variant", choices=[v for v in VARIANTS])
    sp.add_argument("--fault-inject", action="store_true")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "replay": cmd_replay,
            "tune-threshold": cmd_tune, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config and not Path(args.config).is_file():
        parser.error(f"config file not found: {args.config}")
    try:
        run = load_config(args.config) if args.config else None
        return COMMANDS[args.command](run, args)
    except (ConfigError, CorpusError, CheckpointError, GeneratorError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
