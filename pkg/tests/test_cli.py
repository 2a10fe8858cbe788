import json
import shutil
import subprocess

import numpy as np
import pytest

from pseudeq import cli
from pseudeq import exchange as ex
from pseudeq import gaes
from pseudeq.io import ExperimentManifest, read_csv, read_jsonl


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def linear_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--family", "linear", "--counts", 40, 10, 12, "--seed", 3, "--out", out,
               "--no-timing") == 0
    return out


@pytest.fixture(scope="module")
def trained(linear_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = run("train", "--data", linear_data, "--out", out, "--outer-iters", 10, "--val-every", 5,
               "--hidden", 8, 8, "--n-norm-samples", 20, "--no-timing")
    assert code == 0
    return out


def _manifest_ok(out):
    m = ExperimentManifest.read(out / "manifest.json")
    for f in m.outputs:
        assert (out / f).exists()
    return m


# ---------------------------------------------------------------- gen-data

def test_gen_data_counts_and_determinism(linear_data, tmp_path):
    for name, n in [("train", 40), ("valid", 10), ("test", 12)]:
        assert len(read_jsonl(linear_data / f"{name}.jsonl")) == n
    assert run("gen-data", "--family", "linear", "--counts", 40, 10, 12, "--seed", 3, "--out", tmp_path,
               "--no-timing") == 0
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (linear_data / name).read_bytes()
    m = _manifest_ok(linear_data)
    assert m.command == "gen-data" and m.started is None


def test_gen_data_splits_disjoint(linear_data):
    seeds = [set(r["seed"] for r in read_jsonl(linear_data / f"{s}.jsonl")) for s in cli.SPLITS]
    assert not (seeds[0] & seeds[1] or seeds[0] & seeds[2] or seeds[1] & seeds[2])


def test_gen_data_kyoto_statics(tmp_path):
    assert run("gen-data", "--family", "kyoto", "--counts", 5, 3, 1, "--grid", 4, "--out", tmp_path) == 0
    test = read_jsonl(tmp_path / "test.jsonl")
    train = read_jsonl(tmp_path / "train.jsonl")
    assert len(test) == 16 and len(train) == 5
    assert all(r["cap"] == test[0]["cap"] and r["dmg"] == test[0]["dmg"] for r in train + test)


def test_gen_data_ces_range(tmp_path):
    assert run("gen-data", "--family", "ces", "--rho-range", "gc", "--counts", 3, 3, 3,
               "--out", tmp_path) == 0
    rho = np.concatenate([r["rho"] for r in read_jsonl(tmp_path / "train.jsonl")])
    assert np.all((rho >= -1.25) & (rho <= -0.75))


# ---------------------------------------------------------------- train

def test_train_outputs(trained):
    for f in ("model_final.json", "model_best.json", "trajectory.csv", "state.json", "manifest.json"):
        assert (trained / f).exists()
    rows = read_csv(trained / "trajectory.csv")
    assert {r["metric"] for r in rows} == {"exploitability", "normalized_exploitability",
                                           "train_loss", "wall_ms"}
    assert sorted({int(r["iter"]) for r in rows}) == [5, 10]
    m = _manifest_ok(trained)
    assert m.status == "ok" and m.notes["iterations"] == 10 and m.dataset_hash


def test_train_resume_is_identical(linear_data, tmp_path):
    common = ["--data", linear_data, "--outer-iters", 12, "--val-every", 3, "--hidden", 8,
              "--n-norm-samples", 20, "--no-timing"]
    assert run("train", *common, "--out", tmp_path / "full") == 0
    assert run("train", *common, "--out", tmp_path / "a", "--outer-iters", 12) == 0
    # interrupt: rerun 6 iterations with checkpoints, then resume from its state
    part = ["--data", linear_data, "--val-every", 3, "--hidden", 8, "--n-norm-samples", 20,
            "--no-timing", "--checkpoint-every", 6]
    assert run("train", *part, "--outer-iters", 12, "--out", tmp_path / "ck") == 0
    state = json.loads((tmp_path / "ck" / "state.json").read_text())
    assert state["state"]["t"] == 12
    assert (tmp_path / "full" / "trajectory.csv").read_bytes() == \
        (tmp_path / "ck" / "trajectory.csv").read_bytes()
    # genuine resume from a mid-run state
    cfg = gaes.TrainConfig(outer_iters=12, val_every=3, hidden=(8,), n_norm_samples=20)
    _, tr, _ = cli.load_split(linear_data, "train")
    _, va, _ = cli.load_split(linear_data, "valid")
    p, vp = cli._problems("exchange", tr, va, cfg)
    mid = gaes.gaes_train(p, None, cfg, vp, stop_at=7, timing=False)
    (tmp_path / "mid.json").write_text(json.dumps({"config_hash": cfg.hash(), "state": mid.state.to_dict()}))
    assert run("train", *common, "--out", tmp_path / "res", "--resume", tmp_path / "mid.json") == 0
    assert (tmp_path / "full" / "trajectory.csv").read_bytes() == \
        (tmp_path / "res" / "trajectory.csv").read_bytes()
    assert (tmp_path / "full" / "model_final.json").read_bytes() == \
        (tmp_path / "res" / "model_final.json").read_bytes()


def test_train_resume_rejects_other_config(trained, linear_data, tmp_path):
    assert run("train", "--data", linear_data, "--out", tmp_path, "--outer-iters", 11,
               "--resume", trained / "state.json") == 2


def test_train_config_file_overridden_by_flags(linear_data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"outer_iters": 4, "hidden": [4], "val_every": 2, "n_norm_samples": 5}))
    assert run("train", "--data", linear_data, "--out", tmp_path / "o", "--config", cfg,
               "--outer-iters", 2) == 0
    m = ExperimentManifest.read(tmp_path / "o" / "manifest.json")
    assert m.notes["config"]["outer_iters"] == 2 and m.notes["config"]["hidden"] == [4]
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("train", "--data", linear_data, "--out", tmp_path / "p", "--config", cfg) == 2


def test_train_numerical_abort_exit_code(linear_data, tmp_path):
    code = run("train", "--data", linear_data, "--out", tmp_path, "--outer-iters", 50, "--val-every", 1,
               "--hidden", 8, "--schedule", "constant", "--lr-gen", 1e300, "--n-norm-samples", 5)
    assert code == 3
    m = ExperimentManifest.read(tmp_path / "manifest.json")
    assert m.status == "aborted"


# ---------------------------------------------------------------- eval

def _ce_model(economy, p):
    """Generator that emits prices p and uniform budget shares (a CE when V is uniform)."""
    prob = gaes.ExchangeProblem([economy])
    m = prob.init_model(gaes.TrainConfig(hidden=(4,)), np.random.default_rng(0))
    for head in m.generator.values():
        head.layers[-1].w[:] = 0.0
        head.layers[-1].b[:] = 0.0
    m.generator["price"].layers[-1].b[:] = np.log(p)
    return m


def test_eval_ce_model_scores_zero(tmp_path):
    rng = np.random.default_rng(0)
    E = rng.uniform(0.1, 1.0, (3, 4))
    e = ex.ExchangeEconomy(np.ones((3, 4)), E, np.full(3, 0.5), "cobb_douglas")
    p = 1.0 / E.sum(0)
    p /= p.sum()
    data = tmp_path / "d"
    data.mkdir()
    for s in cli.SPLITS:
        (data / f"{s}.jsonl").write_text(json.dumps(e.to_dict()) + "\n")
    _ce_model(e, p).save(tmp_path / "ce.json")
    assert run("eval", "--model", tmp_path / "ce.json", "--data", data, "--out", tmp_path / "o",
               "--n-norm-samples", 100) == 0
    row = read_csv(tmp_path / "o" / "metrics.csv")[0]
    assert float(row["exploitability"]) <= 1e-6


def test_eval_uniform_model_normalizes_to_one(tmp_path):
    data = tmp_path / "d"
    assert run("gen-data", "--counts", 1, 1, 50, "--out", data) == 0
    assert run("eval", "--model", "uniform", "--data", data, "--out", tmp_path / "o",
               "--uniform-draws", 2000, "--n-norm-samples", 2000, "--norm-seed", 99, "--seed", 0) == 0
    rows = read_csv(tmp_path / "o" / "metrics.csv")
    assert len(rows) == 50
    # the denominator has a heavy right tail, so the median is the stable summary
    med = np.median([float(r["normalized_exploitability"]) for r in rows])
    assert abs(med - 1.0) <= 0.05


def test_eval_summary_matches_rows(trained, linear_data, tmp_path):
    assert run("eval", "--model", trained / "model_best.json", "--data", linear_data,
               "--out", tmp_path, "--gap-split", "train", "--n-norm-samples", 30, "--no-timing") == 0
    rows = read_csv(tmp_path / "metrics.csv")
    assert len(rows) == 12 and all(float(r["wall_ms"]) == 0.0 for r in rows)
    phi = np.array([float(r["exploitability"]) for r in rows])
    summ = {r["statistic"]: r for r in read_csv(tmp_path / "summary.csv")}
    assert float(summ["mean"]["exploitability"]) == pytest.approx(phi.mean(), rel=1e-12)
    assert float(summ["median"]["exploitability"]) == pytest.approx(np.median(phi), rel=1e-12)
    gap = read_csv(tmp_path / "gap.csv")[0]
    assert float(gap["gap"]) == pytest.approx(abs(float(gap["reference_mean"]) - float(gap["eval_mean"])))
    assert float(gap["eval_mean"]) == pytest.approx(phi.mean(), rel=1e-9)
    _manifest_ok(tmp_path)


def test_eval_rejects_mismatched_model(trained, tmp_path):
    data = tmp_path / "d"
    assert run("gen-data", "--counts", 1, 1, 2, "--n-buyers", 2, "--out", data) == 0
    assert run("eval", "--model", trained / "model_best.json", "--data", data, "--out", tmp_path / "o") == 2


# ---------------------------------------------------------------- baseline, scarf, kyoto

def test_baseline_single_eta(linear_data, tmp_path):
    assert run("baseline", "--data", linear_data, "--eta-grid", 0.01, "--T", 20, "--out", tmp_path,
               "--n-norm-samples", 20, "--no-timing") == 0
    sel = read_csv(tmp_path / "selection.csv")
    assert len(sel) == 1 and float(sel[0]["eta"]) == 0.01
    rows = read_csv(tmp_path / "metrics.csv")
    assert len(rows) == 12 and {r["diverged"] for r in rows} == {"0"}
    _manifest_ok(tmp_path)


def test_baseline_exploit_descent(linear_data, tmp_path):
    assert run("baseline", "--method", "exploit_descent", "--data", linear_data, "--eta-grid", 0.001,
               0.01, "--T", 5, "--out", tmp_path, "--n-norm-samples", 20) == 0
    assert len(read_csv(tmp_path / "selection.csv")) == 2


def test_scarf_rows_and_noise_free_run(tmp_path):
    assert run("scarf", "--T", 50, "--out", tmp_path / "a") == 0
    rows = read_csv(tmp_path / "a" / "scarf.csv")
    assert len(rows) == 51 and rows[0]["step"] == "0"
    assert run("scarf", "--T", 20, "--noise-scale", 0, "--out", tmp_path / "b") == 0
    summ = read_csv(tmp_path / "b" / "scarf_summary.csv")[0]
    assert float(summ["initial_distance"]) == 0.0 and float(summ["final_distance"]) <= 1e-12
    assert summ["spiral_out"] == "0"
    assert run("scarf", "--noise-scale", 0.5, "--out", tmp_path / "c") == 2


def test_kyoto_phase_oracle(tmp_path):
    assert run("kyoto-phase", "--oracle", "--grid", 3, "--out", tmp_path, "--n-norm-samples", 50) == 0
    rows = read_csv(tmp_path / "kyoto_phase.csv")
    assert len(rows) == 9
    labels = {"both-interior (Region 1)", "one-at-cap (Region 2a-like)", "both-at-cap (Region 4b-like)"}
    assert all(r["label"] in labels and r["label"] == r["oracle_label"] for r in rows)
    assert float(read_csv(tmp_path / "kyoto_phase_summary.csv")[0]["agreement"]) == 1.0
    assert run("kyoto-phase", "--grid", 3, "--out", tmp_path / "x") == 2
    assert run("kyoto-phase", "--oracle", "--n-countries", 3, "--out", tmp_path / "y") == 2


def test_kyoto_train_eval_pipeline(tmp_path):
    data = tmp_path / "d"
    assert run("gen-data", "--family", "kyoto", "--counts", 8, 4, 1, "--grid", 3, "--out", data) == 0
    assert run("train", "--data", data, "--out", tmp_path / "t", "--outer-iters", 6, "--val-every", 3,
               "--hidden", 8, "--batch-size", 4, "--n-norm-samples", 20) == 0
    assert run("eval", "--model", tmp_path / "t" / "model_best.json", "--data", data,
               "--out", tmp_path / "e", "--n-norm-samples", 20) == 0
    assert len(read_csv(tmp_path / "e" / "metrics.csv")) == 9
    assert run("kyoto-phase", "--model", tmp_path / "t" / "model_best.json", "--grid", 3,
               "--out", tmp_path / "k", "--n-norm-samples", 20) == 0


# ---------------------------------------------------------------- errors

def test_validation_exit_codes(tmp_path):
    assert run("eval", "--model", "uniform", "--data", tmp_path / "missing", "--out", tmp_path) == 2
    assert run("gen-data", "--counts", 0, 1, 1, "--out", tmp_path) == 2
    assert run("gen-data", "--family", "ces", "--rho-range", "0.5,2", "--out", tmp_path) == 2
    assert run("nonsense") == 2
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert run("scarf", "--config", bad, "--out", tmp_path) == 2


@pytest.mark.skipif(shutil.which("pseudeq") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["pseudeq", "scarf", "--T", "5", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "scarf.csv").exists()
    bad = subprocess.run(["pseudeq", "scarf"], capture_output=True, text=True,
                         env={"PATH": "/usr/local/bin:/usr/bin:/bin", "PSEUDEQ_THREADS": "x"})
    assert bad.returncode == 2
