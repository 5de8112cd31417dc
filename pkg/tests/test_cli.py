import csv
import json
import xml.etree.ElementTree as ET

import pytest

from twoblock.cli import main, parse_args, UsageError
from twoblock.metrics import METRICS_HEADER
from twoblock.model import MODEL_KINDS

SMALL = ["--test-scene", "synthetic", "--syn-train", "40", "--syn-test", "12", "--epochs", "2",
         "--batch", "16", "--seed", "3", "--hidden", "6", "--block-hidden", "4",
         "--decoder-hidden", "6"]


def run(*args, out):
    return main([args[0]] + SMALL + ["--out-dir", str(out)] + list(args[1:]))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    for kind in MODEL_KINDS:
        assert run("train", "--model", kind, out=out) == 0
    return out


def test_train_artifacts(trained):
    d = trained / "twoblock-synthetic-p8-s3"
    assert {p.name for p in d.iterdir()} >= {"model.npz", "manifest.json", "loss_curve.csv"}
    man = json.loads((d / "manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["model"] == "twoblock" and man["version"]
    assert man["config"]["epochs"] == 2 and "backend" in man
    assert (d / "loss_curve.csv").read_text().splitlines()[0] == "epoch,loss"


def test_train_rerun_byte_identical(tmp_path):
    for tag in ("a", "b"):
        assert run("train", "--model", "linner", "--run-tag", tag, out=tmp_path) == 0
    a = (tmp_path / "linear-synthetic-p8-s3-a" / "loss_curve.csv").read_bytes()
    b = (tmp_path / "linear-synthetic-p8-s3-b" / "loss_curve.csv").read_bytes()
    assert a == b


def test_bogus_model_is_usage_error(tmp_path, capsys):
    assert run("train", "--model", "bogus", out=tmp_path) == 2
    assert "twoblock, last, zero, linear" in capsys.readouterr().err


def test_seed_required(tmp_path):
    assert main(["train", "--model", "zero", "--test-scene", "synthetic", "--out-dir", str(tmp_path)]) == 2


def test_missing_dataset_is_data_error(tmp_path):
    assert main(["train", "--model", "zero", "--seed", "1", "--data-dir", str(tmp_path / "none"),
                 "--out-dir", str(tmp_path)]) == 3


def test_eval_fixed_zero_and_deterministic(trained):
    assert run("eval", "--model", "twoblock", "--miss-ratio", "0.0", out=trained) == 0
    d = trained / "twoblock-synthetic-p8-s3" / "eval-0.0"
    first = (d / "metrics.csv").read_bytes()
    r = rows(d / "metrics.csv")
    assert list(r[0].keys()) == list(METRICS_HEADER)
    assert {x["miss_ratio"] for x in r} == {"0.0"}
    assert json.loads((d / "summary.json").read_text())["gi_steps"] == 0
    assert run("eval", "--model", "twoblock", "--miss-ratio", "0.0", out=trained) == 0
    assert (d / "metrics.csv").read_bytes() == first


def test_eval_missing_model_is_io_error(tmp_path):
    assert run("eval", "--model", "zero", out=tmp_path) == 3


def test_eval_fingerprint_mismatch(trained):
    assert run("eval", "--model", "twoblock", "--block-hidden", "5", out=trained) == 2


def test_sweep_grid_horizons_and_svg(trained):
    assert run("sweep", "--horizons", "8,20", out=trained) == 0
    d = trained / "sweep-synthetic-p8-s3"
    sweep = rows(d / "sweep_metrics.csv")
    for kind in MODEL_KINDS:
        got = [r["miss_ratio"] for r in sweep if r["model"] == kind and r["pred_len"] == "8"]
        assert got == ["0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7"]
    de20 = rows(d / "de_per_step_h20.csv")
    assert max(int(r["step"]) for r in de20 if r["model"] == "twoblock") == 20
    for svg in d.glob("*.svg"):
        assert ET.parse(svg).getroot().tag.endswith("svg")


def test_sweep_needs_all_models(tmp_path):
    assert run("train", "--model", "zero", out=tmp_path) == 0
    assert run("sweep", out=tmp_path) == 3


def test_bench_breakdown(trained):
    assert run("bench", "--reps", "30", out=trained) == 0
    r = {x["model"]: x for x in rows(trained / "bench-synthetic-p8-s3" / "bench.csv")}
    assert r["twoblock"]["fill_ms_mean"] == ""
    for kind in ("last", "zero", "linear"):
        assert float(r[kind]["fill_ms_mean"]) > 0
    for x in r.values():
        assert float(x["encode_ms_mean"]) > 0 and float(x["predict_ms_mean"]) > 0


def test_report(trained):
    run("eval", "--model", "zero", "--miss-ratio", "0.0", out=trained)
    assert main(["report", "--out-dir", str(trained)]) == 0
    assert "| synthetic |" in (trained / "report.md").read_text()


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nepochs = 7\nlr = 0.01\nresample-masks = yes\n")
    a = parse_args(["train", "--model", "zero", "--seed", "1", "--config", str(cfg), "--epochs", "3"])
    assert a.epochs == 3 and a.lr == 0.01 and a.resample_masks is True
    cfg.write_text("colour = red\n")
    with pytest.raises(UsageError):
        parse_args(["train", "--model", "zero", "--seed", "1", "--config", str(cfg)])


@pytest.mark.parametrize("value", ["uniform", "0.3"])
def test_miss_ratio_flag(value):
    a = parse_args(["eval", "--model", "zero", "--seed", "1", "--miss-ratio", value])
    assert a.miss_ratio == (None if value == "uniform" else 0.3)
