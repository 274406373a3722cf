import json
import subprocess
import sys

import pytest

from streamintent.cli import main
from streamintent.config import ConfigError, load_config, parse_config

TINY = """\
# tiny end-to-end run
data.corpus = corpus.jsonl
data.classes = billing_inquiry, payment, cancel_service
data.seed = 3
data.fractions = 0.7, 0.15, 0.15
gen.num_transcripts = 60
model.variant = multitask_lookahead
model.embed_dim = 8
model.hidden_dim = 8
train.epochs = 2
eval.seed = 5
paths.checkpoint = model.sint
paths.reports = reports
"""


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "run.cfg").write_text(TINY)
    return tmp_path


def test_parse_config_values():
    run = parse_config(TINY)
    assert run.classes == ["billing_inquiry", "payment", "cancel_service"]
    assert run.gen.num_transcripts == 60
    assert run.model.variant == "multitask_lookahead"
    assert run.model_config().num_classes == 3
    assert run.fractions == (0.7, 0.15, 0.15)
    assert (run.data_seed, run.eval_seed) == (3, 5)


@pytest.mark.parametrize("bad", ["model.colour = red", "train.epochs = many", "no equals sign",
                                 "model.variant = bogus", "data.classes = "])
def test_parse_config_errors(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_relative_paths_follow_config_location(workdir):
    run = load_config(workdir / "run.cfg")
    assert run.corpus == str(workdir / "corpus.jsonl")


def test_missing_config_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--config", str(tmp_path / "nope.cfg")])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_invalid_variant_lists_choices(workdir, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(workdir / "run.cfg"), "--variant", "bogus"])
    assert exc.value.code == 1
    assert "intent_only" in capsys.readouterr().err


def test_gen_writes_configured_count_and_is_seeded(workdir):
    cfg = str(workdir / "run.cfg")
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    assert main(["gen", "--config", cfg, "--out", str(a), "--seed", "7", "--no-plots"]) == 0
    assert main(["gen", "--config", cfg, "--out", str(b), "--seed", "7", "--no-plots"]) == 0
    assert len(a.read_text().splitlines()) == 60
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".stats.csv").exists()


def test_end_to_end_pipeline(workdir):
    cfg = str(workdir / "run.cfg")
    assert main(["gen", "--config", cfg]) == 0
    assert (workdir / "corpus.offsets.png").exists()
    assert main(["train", "--config", cfg]) == 0
    assert (workdir / "model.sint").exists()
    log = (workdir / "model.log.csv").read_text().splitlines()
    assert sum(1 for r in log if ",train,loss," in r) == 2
    assert (workdir / "model.log.png").exists()

    out = workdir / "eval.json"
    assert main(["eval", "--config", cfg, "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    assert {"ib_prf", "intent_at_ob", "intent_at_pb"} <= set(metrics)

    assert main(["replay", "--config", cfg]) == 0
    report = json.loads((workdir / "reports" / "realtime_report.json").read_text())
    assert {"acc", "acc_rt", "acc_rp", "mtd", "mpd"} <= set(report)
    assert (workdir / "reports" / "turn_diff.csv").exists()
    assert (workdir / "reports" / "turn_diff.png").exists()
    n = len((workdir / "reports" / "decisions.jsonl").read_text().splitlines())
    assert n == report["n"] == 9

    tune = workdir / "tune.json"
    assert main(["tune-threshold", "--config", cfg, "--out", str(tune)]) == 0
    assert len(json.loads(tune.read_text())["grid"]) == 19


def test_class_list_mismatch_is_data_error(workdir, capsys):
    cfg = workdir / "run.cfg"
    assert main(["gen", "--config", str(cfg), "--no-plots"]) == 0
    assert main(["train", "--config", str(cfg), "--no-plots", "--epochs", "1"]) == 0
    other = workdir / "other.cfg"
    other.write_text(TINY.replace("cancel_service", "roaming"))
    assert main(["replay", "--config", str(other), "--checkpoint", str(workdir / "model.sint")]) == 2
    assert "class list" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["gradcheck", "--fault-inject"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "streamintent", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen", "train", "eval", "replay", "tune-threshold", "gradcheck"):
        assert cmd in proc.stdout
