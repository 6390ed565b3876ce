import json

import numpy as np
import pytest

from autoeval import cli
from autoeval.data import AccuracyVector
from autoeval.harness import evaluate, group_subsets, read_predictions, run_benchmark, write_predictions
from autoeval.regressor import TrainConfig


def av(overall, per=(0.5, 0.5)):
    return AccuracyVector(list(per), overall)


def test_perfect_predictions():
    t = [av(0.3, (0.2, 0.4)), av(0.9, (1.0, 0.8))]
    r = evaluate(t, t)
    assert r.overall_rmse_pct == 0.0 and r.category_rmse_pct == 0.0


def test_single_set_error():
    r = evaluate([av(0.8)], [av(0.7)])
    assert r.overall_rmse_pct == pytest.approx(10.0, abs=1e-12)


def test_two_set_rmse():
    r = evaluate([av(0.53), av(0.74)], [av(0.5), av(0.7)])
    assert r.overall_rmse_pct == pytest.approx(100 * np.sqrt((0.0009 + 0.0016) / 2), abs=1e-12)
    assert r.overall_rmse_pct == pytest.approx(3.5355339, abs=1e-7)


def test_category_rmse_pools_defined_pairs():
    preds = [av(0.5, (0.5, 0.1)), av(0.5, (0.3, 0.3))]
    truth = [av(0.5, (0.4, np.nan)), av(0.5, (0.3, 0.0))]
    r = evaluate(preds, truth)
    assert r.num_category_pairs == 3
    assert r.category_rmse_pct == pytest.approx(100 * np.sqrt((0.01 + 0 + 0.09) / 3), abs=1e-12)
    assert r.per_category_rmse_pct[1] == pytest.approx(30.0, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError):
        evaluate([av(0.5)], [av(0.5), av(0.6)])


def test_predictions_csv_round_trip(tmp_path):
    preds = [AccuracyVector([0.1, np.nan, 1 / 3], 0.123456789012345678), AccuracyVector([0.0, 1.0, 0.5], 1.0)]
    write_predictions(tmp_path / "p.csv", ["a", "b"], preds)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id,overall,a0,a1,a2"
    ids, back = read_predictions(tmp_path / "p.csv")
    assert ids == ["a", "b"] and all(x.equals(y) for x, y in zip(preds, back))


def test_group_subsets():
    subsets = group_subsets()
    assert len(subsets) == 7 and len(set(subsets)) == 7
    assert subsets[0] == ("high", "medium", "low")


# ------------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small end-to-end CLI run shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    run = lambda *a: cli.main([str(x) for x in a])
    assert run("gen", "--out", d / "train", "--num-sets", 24, "--num-instances", 120,
               "--num-categories", 4, "--seed", 1) == 0
    assert run("gen", "--out", d / "test", "--num-sets", 8, "--num-instances", 120,
               "--num-categories", 4, "--seed", 2, "--id-prefix", "test") == 0
    assert run("extract", "--data", d / "train", "--out", d / "train.npz") == 0
    assert run("extract", "--data", d / "test", "--out", d / "test.npz") == 0
    assert run("train", "--reps", d / "train.npz", "--manifest", d / "train" / "manifest.json",
               "--model-out", d / "model.json", "--epochs", 15, "--seed", 3) == 0
    assert run("predict", "--model", d / "model.json", "--reps", d / "test.npz", "--out", d / "pred.csv") == 0
    assert run("baseline", "--data", d / "test", "--method", "ps", "--tau1", 0.8, "--out", d / "ps.csv") == 0
    return d, run


def test_cli_pipeline_writes_artifacts(workspace, capsys):
    d, run = workspace
    for name in ("train/manifest.json", "train.npz", "model.json", "model.json.loss.csv", "pred.csv", "ps.csv"):
        assert (d / name).exists(), name
    assert len((d / "model.json.loss.csv").read_text().splitlines()) == 16
    assert run("eval", "--pred", d / "pred.csv", "--manifest", d / "test" / "manifest.json",
               "--out", d / "report.json", "--baseline-pred", d / "ps.csv") == 0
    report = json.loads((d / "report.json").read_text())
    assert report["num_sets"] == 8 and report["overall_rmse_pct"] >= 0
    assert report["baselines"][0]["method"] == "PS(tau1=0.8)"
    assert "overall RMSE %" in capsys.readouterr().out


def test_cli_eval_is_byte_reproducible(workspace):
    d, run = workspace
    for out in ("r1.json", "r2.json"):
        assert run("eval", "--pred", d / "pred.csv", "--manifest", d / "test" / "manifest.json", "--out", d / out) == 0
    assert (d / "r1.json").read_bytes() == (d / "r2.json").read_bytes()


def test_cli_predict_is_idempotent(workspace):
    d, run = workspace
    assert run("predict", "--model", d / "model.json", "--reps", d / "test.npz", "--out", d / "pred2.csv") == 0
    assert (d / "pred.csv").read_bytes() == (d / "pred2.csv").read_bytes()


def test_cli_eval_length_mismatch(workspace, capsys):
    d, run = workspace
    assert run("eval", "--pred", d / "pred.csv", "--manifest", d / "train" / "manifest.json", "--out", d / "x.json") != 0
    assert "predictions but manifest lists" in capsys.readouterr().err


def test_cli_ablation_is_echoed(workspace):
    d, run = workspace
    assert run("train", "--reps", d / "train.npz", "--manifest", d / "train" / "manifest.json",
               "--model-out", d / "nomean.json", "--epochs", 3, "--ablate", "mean") == 0
    assert run("predict", "--model", d / "nomean.json", "--reps", d / "test.npz", "--out", d / "nomean.csv") == 0
    assert run("eval", "--pred", d / "nomean.csv", "--manifest", d / "test" / "manifest.json",
               "--out", d / "nomean_report.json") == 0
    cfg = json.loads((d / "nomean_report.json").read_text())["config"]
    assert cfg["use_mean"] is False and cfg["use_cov"] is True and cfg["use_var"] is True


def test_cli_group_mismatch_and_missing_files(workspace, capsys):
    d, run = workspace
    assert run("extract", "--data", d / "test", "--groups", "high,low", "--out", d / "hl.npz") == 0
    assert run("predict", "--model", d / "model.json", "--reps", d / "hl.npz", "--out", d / "bad.csv") == 1
    assert run("predict", "--model", d / "missing.json", "--reps", d / "test.npz", "--out", d / "bad.csv") == 1
    assert run("extract", "--data", d / "test", "--groups", "", "--out", d / "x.npz") == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_cli_echoes_resolved_config(workspace, capsys):
    d, run = workspace
    assert run("baseline", "--data", d / "test", "--method", "es", "--tau2", 0.3, "--out", d / "es.csv",
               "--seed", 5) == 0
    echo = json.loads(capsys.readouterr().err.strip().splitlines()[0])
    assert echo["command"] == "baseline" and echo["config"]["tau2"] == 0.3 and echo["config"]["seed"] == 5


@pytest.mark.slow
def test_full_batch_loss_trace_settles(bench_corpora):
    """Full-batch Adam on the benchmark corpus: after epoch 50 the loss never
    rises across a 20-epoch window. (Minibatch noise breaks this for batch 32.)"""
    train_c, test_c = bench_corpora
    res = run_benchmark(train_c, test_c, tcfg=TrainConfig(seed=42, batch_size=len(train_c)))
    t = res.loss_trace
    assert len(t) == 200
    bad = [e for e in range(50, len(t) - 20) if t[e + 20] > t[e]]
    assert not bad
