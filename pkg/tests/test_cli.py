import csv
import json
import subprocess
import sys

import pytest

from h2xpinn.cli import main
from h2xpinn.data import CSV_COLUMNS

SMALL = {"train": {"layer_sizes": [8, 16, 16, 1], "max_epochs": 15}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    assert main(["synthesize", "--series", "12", "--points-per-series", "6", "--seed", "0",
                 "--output", str(d / "data.csv")]) == 0
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_synthesize_writes_records(workdir):
    rows = list(csv.DictReader((workdir / "data.csv").open()))
    assert len(rows) == 72
    assert tuple(rows[0]) == CSV_COLUMNS


def test_train_is_deterministic_and_predict_reads_checkpoint(workdir, capsys):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "train", "--input", workdir / "data.csv", "--config", workdir / "small.json",
                           "--output-dir", workdir / name)
        assert code == 0
        outs.append(json.loads(out))
    assert (workdir / "a" / "model.ckpt.json").read_bytes() == (workdir / "b" / "model.ckpt.json").read_bytes()
    assert (workdir / "a" / "train_report.json").read_bytes() == (workdir / "b" / "train_report.json").read_bytes()
    assert outs[0]["stop_epoch"] == 15

    code, out, _ = run(capsys, "predict", "--checkpoint", workdir / "a" / "model.ckpt.json",
                       "--input", workdir / "data.csv", "--output", workdir / "pred.csv")
    assert code == 0 and json.loads(out)["rows"] == 72
    rows = list(csv.DictReader((workdir / "pred.csv").open()))
    assert {"pinn_pct", "physics_pct", "fusion_pct", "prediction_pct"} <= set(rows[0])

    code, out, _ = run(capsys, "report", workdir / "a")
    again = run(capsys, "report", workdir / "a")[1]
    assert code == 0 and out == again
    assert json.loads(out)["train"]["stop_epoch"] == 15


def test_crossval_rows_and_seeds(workdir, capsys):
    code, out, _ = run(capsys, "crossval", "--input", workdir / "data.csv", "--config", workdir / "small.json",
                       "--folds", 2, "--reps", 2, "--epochs", 3, "--output-dir", workdir / "cv")
    assert code == 0
    rows = list(csv.DictReader((workdir / "cv" / "cv_results.csv").open()))
    assert len(rows) == 4
    assert sorted(int(r["seed"]) for r in rows) == [42, 43, 47, 48]
    assert json.loads(run(capsys, "report", workdir / "cv")[1])["crossval"]["runs"] == 4


def test_ensemble_writes_manifest_and_calibration(workdir, capsys):
    code, out, _ = run(capsys, "ensemble", "--input", workdir / "data.csv", "--config", workdir / "small.json",
                       "--members", 3, "--epochs", 3, "--output-dir", workdir / "ens")
    assert code == 0
    man = json.loads((workdir / "ens" / "ensemble" / "manifest.json").read_text())
    assert man["member_seeds"] == [42, 43, 44]
    assert (workdir / "ens" / "calibration.json").exists()
    code, _, _ = run(capsys, "predict", "--checkpoint", workdir / "ens" / "ensemble", "--input",
                     workdir / "data.csv", "--output", workdir / "ens_pred.csv")
    assert code == 0
    assert "std_pct" in next(csv.DictReader((workdir / "ens_pred.csv").open()))


def test_config_env_var_applies(workdir, capsys, monkeypatch):
    monkeypatch.setenv("H2XPINN_CONFIG", str(workdir / "small.json"))
    code, out, _ = run(capsys, "train", "--input", workdir / "data.csv", "--epochs", 4,
                       "--output-dir", workdir / "env")
    assert code == 0 and json.loads(out)["stop_epoch"] == 4
    report = json.loads((workdir / "env" / "train_report.json").read_text())
    assert report["config"]["layer_sizes"] == [8, 16, 16, 1]


def test_errors_are_json_on_stderr(workdir, capsys, tmp_path):
    code, _, err = run(capsys, "train", "--input", tmp_path / "missing.csv")
    assert code == 1 and "error" in json.loads(err)
    bad = tmp_path / "bad.csv"
    bad.write_text("temperature_c,oops\n1,2\n")
    code, _, err = run(capsys, "train", "--input", bad)
    payload = json.loads(err)
    assert code == 1 and set(payload) == {"error", "message", "details"}
    code, _, err = run(capsys, "report", tmp_path / "nothing")
    assert code == 1 and json.loads(err)["error"] == "usage"


def test_unknown_subcommand_exits_two():
    proc = subprocess.run([sys.executable, "-m", "h2xpinn.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
