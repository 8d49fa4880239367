import csv
import os

import numpy as np
import pytest

from hapticfusion.cli import main
from hapticfusion.models import load_params

FAST_FLAGS = [
    "--filters", "1", "--hidden", "3", "3", "--width", "4",
    "--tactile-epochs", "1", "--kinesthetic-epochs", "2", "--fusion-epochs", "2",
]


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, files in os.walk(root) for f in files)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    assert main(["gen", "--classes", "6", "--grasps", "60", "--frames", "3", "--samples", "6",
                 "--seed", "1", "--out", str(out)]) == 0
    return out


def test_gen_then_experiment_pipeline(dataset, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["experiment", "--data", str(dataset), "--runs", "3", "--seed", "7", "--out", str(out), *FAST_FLAGS]) == 0
    assert _tree(out) == ["config.json", "rates.csv", "report.txt"]
    with open(out / "rates.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["seed"]) for r in rows] == [7, 8, 9]
    for r in rows:
        for c in ("tactile", "kinesthetic", "neural_fusion", "bayesian_fusion"):
            assert 0.0 <= float(r[c]) <= 1.0
    assert "bayesian_fusion: mean" in capsys.readouterr().out


def test_experiment_reports_are_byte_identical(dataset, tmp_path):
    for name in ("a", "b"):
        assert main(["experiment", "--data", str(dataset), "--runs", "2", "--seed", "3",
                     "--out", str(tmp_path / name), *FAST_FLAGS]) == 0
    for f in ("rates.csv", "report.txt", "config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_fuse_uniform_returns_q(tmp_path, capsys):
    (tmp_path / "p1.txt").write_text("0.25,0.25,0.25,0.25\n")
    (tmp_path / "q.txt").write_text("0.1 0.2 0.6 0.1\n")
    assert main(["fuse", "--p1", str(tmp_path / "p1.txt"), "--p2", str(tmp_path / "q.txt")]) == 0
    probs, winner = capsys.readouterr().out.splitlines()
    np.testing.assert_allclose([float(v) for v in probs.split(",")], [0.1, 0.2, 0.6, 0.1], atol=1e-12)
    assert winner == "2"


def test_fuse_writes_only_under_out(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("0.5,0.5")
    assert main(["fuse", "--p1", str(tmp_path / "p.txt"), "--p2", str(tmp_path / "p.txt"), "--out", str(tmp_path / "o")]) == 0
    assert _tree(tmp_path) == ["o/fused.csv", "p.txt"]


def test_train_eval_and_fusion_head(dataset, tmp_path, capsys):
    common = ["--data", str(dataset), "--seed", "5", "--epochs", "1"]
    for model in ("tactile", "kinesthetic"):
        assert main(["train", "--model", model, "--protocol", "neural", *common, "--filters", "1",
                     "--hidden", "3", "3", "--out", str(tmp_path / model)]) == 0
        assert _tree(tmp_path / model) == ["history.csv", "model.hfz", "split.json"]
    history = (tmp_path / "tactile" / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss,val_acc" and len(history) == 2
    assert main(["train", "--model", "fusion", "--protocol", "neural", *common, "--width", "4",
                 "--tactile", str(tmp_path / "tactile" / "model.hfz"),
                 "--kinesthetic", str(tmp_path / "kinesthetic" / "model.hfz"), "--out", str(tmp_path / "head")]) == 0
    assert "fc1.w" in load_params(tmp_path / "head" / "model.hfz")
    assert main(["eval", "--data", str(dataset), "--protocol", "neural", "--seed", "5",
                 "--tactile", str(tmp_path / "tactile" / "model.hfz"),
                 "--kinesthetic", str(tmp_path / "kinesthetic" / "model.hfz"),
                 "--fusion", str(tmp_path / "head" / "model.hfz"), "--out", str(tmp_path / "ev")]) == 0
    header = (tmp_path / "ev" / "rates.csv").read_text().splitlines()[0]
    assert header == "run,seed,tactile,kinesthetic,neural_fusion,bayesian_fusion"


def test_convert_subcommand(tmp_path):
    rng = np.random.default_rng(0)
    np.savez(tmp_path / "b.npz", tactile=rng.uniform(0, 9, (2, 28, 50, 3)), kinesthetic=rng.normal(size=(2, 4, 5)),
             labels=[0, 1])
    assert main(["convert", "--src", str(tmp_path / "b.npz"), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "manifest.json").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        ["experiment", "--data", "d", "--out", "r"],  # seed is mandatory
        ["train", "--data", "d", "--model", "tactile", "--out", "m"],
        ["gen", "--seed", "1", "--out", "x", "--bogus"],
        ["gen", "--seed", "1", "--out", "x", "--class", "3"],  # no prefix matching
        ["gen", "--seed", "1", "--out", "x", "--noise", "-1"],
        ["nonsense"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert capsys.readouterr().err
    assert _tree(tmp_path) == []


def test_invalid_config_exit_2(dataset, tmp_path, capsys):
    code = main(["experiment", "--data", str(dataset), "--seed", "1", "--counts", "45", "15", "15", "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "FUSION" in err[0]


def test_runtime_failure_exit_1(tmp_path, capsys):
    code = main(["experiment", "--data", str(tmp_path / "missing"), "--seed", "1", "--out", str(tmp_path / "r")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "missing" in err[0]


def test_fuse_rejects_non_distribution(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("0.5,0.7")
    assert main(["fuse", "--p1", str(tmp_path / "p.txt"), "--p2", str(tmp_path / "p.txt")]) == 2
