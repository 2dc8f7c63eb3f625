import csv
import json
import math

import numpy as np
import pytest

from costrel.cli import main
from costrel.data_io import Dataset, load_dataset, write_dataset
from costrel.metrics import EvalReport
from costrel.model import split_indices

SMALL = ["--classes", "5", "--images", "60", "--pairs-per-image", "50", "--fg-fraction", "0.2",
         "--dim", "4", "--separation", "1.5"]
FAST = ["--epochs", "3", "--batch-size", "64"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", *SMALL, "--seed", "4", "--out", str(root / "data")]) == 0
    for mode in ("bce", "csl", "softmax"):
        assert main(["train", "--data", str(root / "data"), "--mode", mode, *FAST,
                     "--out-model", str(root / f"{mode}.json")]) == 0
    return root


def read_metrics(path):
    with open(path) as fh:
        return {row["metric"]: row["value"] for row in csv.DictReader(fh)}


def test_gen_data_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path / "d")
    assert code == 0
    echo = json.loads(out.splitlines()[0])
    assert echo["command"] == "gen-data"
    assert echo["config"]["fg_fraction"] == 0.06
    counts = [int(line.split(",")[1]) for line in out.splitlines()[3:]]
    assert len(counts) == 20
    assert counts == sorted(counts, reverse=True)
    assert len(load_dataset(tmp_path / "d")) == 4167 * 200


@pytest.mark.parametrize("argv", [
    ["gen-data", "--fg-fraction", "0", "--out", "x"],
    ["gen-data", "--classes", "1", "--out", "x"],
    ["gen-data", "--bogus", "--out", "x"],
    ["gen-data"],
    ["train", "--data", "x", "--mode", "hinge", "--out-model", "m"],
    ["train", "--data", "x", "--hidden", "-1", "--out-model", "m"],
    ["eval", "--model", "m", "--data", "x", "--theta", "1.5", "--out-report", "r"],
    ["compare", "--data", "x", "--seeds", "1"],
    ["compare", "--data", "x", "--modes", "bce,focal"],
    [],
])
def test_usage_errors(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert not (tmp_path / "x").exists()


def test_runtime_errors(tmp_path, capsys, workspace):
    code, _, err = run(capsys, "train", "--data", tmp_path / "missing", "--out-model", tmp_path / "m.json")
    assert code == 2
    assert "missing" in err
    run(capsys, "gen-data", "--classes", "3", "--dim", "2", "--images", "10", "--pairs-per-image", "20",
        "--fg-fraction", "0.5", "--out", tmp_path / "other")
    code, _, err = run(capsys, "eval", "--model", workspace / "csl.json", "--data", tmp_path / "other",
                       "--out-report", tmp_path / "r.csv")
    assert code == 2
    assert "features" in err


def test_gen_data_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen-data", *SMALL, "--seed", "9", "--out", tmp_path / name)[0] == 0
    for f in ("features.npy", "pairs.npy", "ground_truth.jsonl", "header.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_outputs(workspace):
    lines = (workspace / "csl.json.history.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,heldout_mpcr,heldout_recall"
    assert len(lines) == 4
    assert math.isfinite(float(lines[-1].split(",")[1]))
    doc = json.loads((workspace / "csl.json").read_text())
    assert doc["config"]["mode"] == "csl"


def test_train_echoes_config(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "train", "--data", workspace / "data", "--mode", "softmax", *FAST,
                       "--out-model", tmp_path / "s.json", "--history", tmp_path / "h.csv")
    assert code == 0
    echo = json.loads(out.splitlines()[0])
    assert echo["config"]["learning_rate"] == 0.5
    assert echo["config"]["batch_size"] == 64
    assert "heldout ece=" in out
    assert (tmp_path / "h.csv").exists()


def test_balanced_bce_and_csl_agree(tmp_path, capsys):
    # labels chosen so the training split itself is exactly balanced
    rng = np.random.default_rng(0)
    n, seed = 400, 0
    train_idx, held_idx = split_indices(n, seed)
    labels = np.empty(n, dtype=np.int64)
    labels[train_idx] = np.resize([1, 2], train_idx.size)
    labels[held_idx] = np.resize([1, 2], held_idx.size)
    centers = np.array([[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]])
    ds = Dataset(features=centers[labels] + rng.normal(size=(n, 2)), labels=labels,
                 image=np.repeat(np.arange(20), 20), subject=np.tile(np.arange(20), 20),
                 object=np.tile(np.arange(20) + 20, 20), num_classes=2)
    write_dataset(ds, tmp_path / "bal")
    reports = {}
    for mode in ("bce", "csl"):
        assert run(capsys, "train", "--data", tmp_path / "bal", "--mode", mode, "--epochs", "10",
                   "--batch-size", "32", "--out-model", tmp_path / f"{mode}.json")[0] == 0
        assert run(capsys, "eval", "--model", tmp_path / f"{mode}.json", "--data", tmp_path / "bal", "--no-nrf",
                   "--out-report", tmp_path / f"{mode}.csv")[0] == 0
        reports[mode] = read_metrics(tmp_path / f"{mode}.csv")
    for name in EvalReport.SCALARS:
        assert abs(float(reports["bce"][name]) - float(reports["csl"][name])) <= 1e-10
    hist = {m: np.loadtxt(tmp_path / f"{m}.json.history.csv", delimiter=",", skiprows=1) for m in ("bce", "csl")}
    np.testing.assert_allclose(hist["bce"], hist["csl"], rtol=0, atol=1e-10)


def test_eval_report_contents(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "eval", "--model", workspace / "csl.json", "--data", workspace / "data",
                       "--out-report", tmp_path / "r.csv", "--out-predictions", tmp_path / "p.jsonl")
    assert code == 0
    assert "Recall  mPCR  Precision  F1" in out
    metrics = read_metrics(tmp_path / "r.csv")
    scalar = [k for k in metrics if not k.startswith("recall_class_")]
    assert scalar == [*EvalReport.SCALARS, "k", "theta", "num_bins"]
    assert metrics["theta"] == "0.5"
    assert (tmp_path / "r.json").exists() and (tmp_path / "r.confusion.csv").exists()
    assert (tmp_path / "p.jsonl").read_text().startswith("# costrel-relations")


def test_eval_recall_grows_with_k(workspace, capsys, tmp_path):
    recall = {}
    for k in (1, 100):
        run(capsys, "eval", "--model", workspace / "bce.json", "--data", workspace / "data", "--no-nrf",
            "--k", k, "--out-report", tmp_path / f"k{k}.csv")
        recall[k] = float(read_metrics(tmp_path / f"k{k}.csv")["recall"])
    assert recall[1] <= recall[100]
    assert recall[1] < recall[100]


def test_nrf_raises_precision(workspace, capsys, tmp_path):
    prec = {}
    for flag in ("--nrf", "--no-nrf"):
        run(capsys, "eval", "--model", workspace / "csl.json", "--data", workspace / "data", flag,
            "--out-report", tmp_path / f"{flag}.csv")
        prec[flag] = float(read_metrics(tmp_path / f"{flag}.csv")["precision"])
    assert prec["--no-nrf"] <= prec["--nrf"]


def test_compare_identical_modes(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "compare", "--data", workspace / "data", "--seeds", "2", "--modes", "bce,bce",
                       *FAST, "--out", tmp_path / "cmp.csv")
    assert code == 0
    with open(tmp_path / "cmp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 6
    assert len({(r["mode"], r["metric"]) for r in rows}) == 6  # same token listed twice
    for r in rows:
        assert float(r["delta"]) == 0.0
        assert r["significant"] == "0"


def test_compare_table(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "compare", "--data", workspace / "data", "--seeds", "2",
                       "--modes", "bce,csl,csl-nrf", *FAST, "--out", tmp_path / "cmp.csv")
    assert code == 0
    with open(tmp_path / "cmp.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["mode"], r["metric"]) for r in rows] == [(m, k) for m in ("bce", "csl", "csl-nrf")
                                                        for k in EvalReport.SCALARS]
    assert "baseline: bce" in out


@pytest.mark.parametrize("bins", [1, 7, 10])
def test_calibrate(workspace, capsys, tmp_path, bins):
    prefix = tmp_path / "cal"
    code, out, _ = run(capsys, "calibrate", "--model", workspace / "bce.json", "--data", workspace / "data",
                       "--bins", bins, "--out-prefix", prefix)
    assert code == 0
    hist = (tmp_path / "cal.histogram.csv").read_text().splitlines()
    assert len(hist) - 1 == bins
    rel = list(csv.DictReader(open(tmp_path / "cal.reliability.csv")))
    assert len(rel) == bins
    ece = float(out.split("ece=")[1].split()[0])
    if bins == 1:
        only = rel[0]
        assert ece == pytest.approx(abs(float(only["accuracy"]) - float(only["mean_confidence"])), abs=1e-12)
