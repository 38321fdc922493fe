import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from dvge import experiment as ex
from dvge.cli import run
from dvge.fairness import pareto_indices

FIXTURES = Path(__file__).parent / "fixtures"
TINY = {
    "schema_version": 1, "experiment": "tiny", "seeds": [0, 1],
    "data": {"synthetic": {"n": 400}},
    "vae": {"epochs": 2, "hidden": [8], "disc_hidden": [8]},
    "sensitive_classifier": {"epochs": 2, "hidden": [8]},
    "task": {"epochs": 2, "hidden": [8]},
    "sweep": {"plain": {}, "dvge": {"eta1": [0.5, 1.0], "eta2": [0.5]}, "dim_removal": {"k": [1]},
              "adt": {"lambda": [1.0]}},
    "ablation": {"eta1": [0.0, 0.5, 1.0]},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_results_header_exact():
    assert ",".join(ex.RESULTS_HEADER) == (
        "run_id,config_hash,method,eta1,eta2,gamma,lambda,seed,accuracy,delta_dp,delta_eo,seconds")


def test_config_validation(tmp_path):
    with pytest.raises(ex.ConfigError, match="schema_version"):
        ex.make_config({})
    with pytest.raises(ex.ConfigError, match="schema_version must be"):
        ex.make_config({"schema_version": 2})
    with pytest.raises(ex.ConfigError, match="unknown config key 'vae.latent'"):
        ex.make_config({"schema_version": 1, "vae": {"latent": 3}})
    with pytest.raises(ex.ConfigError, match="method.name"):
        ex.make_config({"schema_version": 1, "method": {"name": "magic"}})
    with pytest.raises(ex.ConfigError, match="data.path"):
        ex.make_config({"schema_version": 1, "data": {"source": "credit"}})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ex.ConfigError, match="bad.json"):
        ex.load_config(bad)
    cfg = ex.make_config({"schema_version": 1, "sweep": {"plain": {}}})
    assert list(cfg["sweep"]) == ["plain"]


def test_config_hash_reproducible():
    a = ex.make_config(TINY)
    b = ex.make_config(json.loads(json.dumps(TINY)))
    assert ex.config_hash(a, 0) == ex.config_hash(b, 0) != ex.config_hash(a, 1)


def test_train_vae_cache_and_corruption(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["train-vae", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "trained VAE" in capsys.readouterr().out
    assert run(["train-vae", "--config", str(cfg_path), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "cached VAE" in printed
    ckpt = Path(printed.split(": ", 1)[1].strip())
    from dvge.vae import load_vae
    load_vae(ckpt)
    ckpt.write_text("garbage")
    assert run(["train-sensitive", "--config", str(cfg_path), "--out", str(out)]) == 1
    assert ckpt.name in capsys.readouterr().err


def test_sweep_outputs_determinism_and_pareto(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["sweep", "--config", str(cfg_path), "--out", str(a)]) == 0
    assert run(["sweep", "--config", str(cfg_path), "--out", str(b), "--jobs", "2"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    rows = ex.read_results(a / "results.csv")
    assert len(rows) == 5 * 2
    means = ex.seed_means(rows)
    mean_pts = {(p.method, p.point): (p.accuracy, p.delta_dp, p.delta_eo) for p in means}
    with (a / "pareto.csv").open() as fh:
        front = list(csv.DictReader(fh))
    for r in front:
        acc, dp, eo = mean_pts[(r["method"], r["point"])]
        assert float(r["accuracy"]) == acc
        assert float(r["delta"]) == (dp if r["metric"] == "delta_dp" else eo)
    # brute force: a front row is never dominated by a same-method mean point
    for r in front:
        idx = 1 if r["metric"] == "delta_dp" else 2
        for (m, _), v in mean_pts.items():
            if m == r["method"]:
                assert not (v[0] >= float(r["accuracy"]) and v[idx] <= float(r["delta"])
                            and (v[0] > float(r["accuracy"]) or v[idx] < float(r["delta"])))
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config_hash"] == rows[0]["config_hash"] and manifest["schema_version"] == 1


def test_grid_of_one_gives_one_row_per_seed(tmp_path):
    cfg = ex.make_config({**TINY, "sweep": {"dvge": {"eta1": [1.0], "eta2": [0.0]}}})
    path, hit = ex.cmd_sweep(cfg, 0, tmp_path / "s")
    assert not hit and len(ex.read_results(path)) == len(cfg["seeds"])


def test_rerun_is_cache_hit_and_conflicts_refused(cfg_path, tmp_path, capsys):
    out = tmp_path / "s"
    run(["sweep", "--config", str(cfg_path), "--out", str(out)])
    before = (out / "results.csv").stat().st_mtime_ns
    assert run(["sweep", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "up to date" in capsys.readouterr().out
    assert (out / "results.csv").stat().st_mtime_ns == before
    assert run(["sweep", "--config", str(cfg_path), "--out", str(out), "--seed", "5"]) == 2


def test_train_task_artifacts(cfg_path, tmp_path):
    out = tmp_path / "t"
    assert run(["train-task", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = ex.read_results(out / "results.csv")
    assert [r["run_id"] for r in rows] == ["dvge-p000-s0", "dvge-p000-s1"]
    assert (out / "models" / "dvge-p000-s0.json").exists()
    lines = (out / "explanations" / "dvge-p000-s0.csv").read_text().splitlines()
    assert lines[0] == "sample_id,dim,value" and len(lines) == 1 + 80 * 10


def test_ablation_outputs(cfg_path, tmp_path):
    out = tmp_path / "ab"
    assert run(["ablation", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in ("ablation_retrained.csv", "ablation_fixed.csv"):
        lines = (out / name).read_text().splitlines()
        assert lines[0] == "encoder,no_removal,removed,0,0.5,1"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["vanilla", "factor"]
    retrained = (out / "ablation_retrained.csv").read_text().splitlines()
    for ln in retrained[1:]:
        vals = ln.split(",")
        assert vals[1] == vals[3]  # eta1 = 0 column equals no removal


def test_synth_data(cfg_path, tmp_path):
    out = tmp_path / "d"
    assert run(["synth-data", "--config", str(cfg_path), "--out", str(out), "--seed", "3"]) == 0
    from dvge.data import read_csv
    t = read_csv(out / "synthetic-seed3.csv")
    assert t.n == 400 and "s" in t.sensitive


def test_report_golden(tmp_path):
    out = tmp_path / "r"
    assert run(["report", str(FIXTURES / "report"), "--out", str(out)]) == 0
    golden = FIXTURES / "report_golden"
    names = sorted(p.name for p in golden.iterdir())
    assert names == sorted(p.name for p in out.iterdir())
    for name in names:
        assert (out / name).read_bytes() == (golden / name).read_bytes()


def test_report_fronts_rederivable():
    rows = ex.read_results(FIXTURES / "report" / "results.csv")
    means = ex.seed_means(rows)
    with (FIXTURES / "report_golden" / "fixture_dp.csv").open() as fh:
        golden = [(r["method"], r["point"]) for r in csv.DictReader(fh)]
    derived = []
    for method in dict.fromkeys(p.method for p in means):
        mine = [p for p in means if p.method == method]
        derived += [(method, mine[i].point) for i in pareto_indices([(p.accuracy, p.delta_dp) for p in mine])]
    assert derived == golden


def test_report_empty_dir(tmp_path, capsys):
    assert run(["report", str(tmp_path)]) != 0
    assert "no results" in capsys.readouterr().err
    (tmp_path / "results.csv").write_text(",".join(ex.RESULTS_HEADER) + "\n")
    assert run(["report", str(tmp_path)]) != 0


def test_missing_config_file(tmp_path, capsys):
    assert run(["sweep", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_timing_column_only_when_requested(tmp_path):
    cfg = ex.make_config({**TINY, "record_timing": True, "sweep": {"plain": {}}, "seeds": [0]})
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path / "x")
    assert float(ex.read_results(path)[0]["seconds"]) > 0
    cfg = ex.make_config({**TINY, "sweep": {"plain": {}}, "seeds": [0]})
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path / "y")
    assert ex.read_results(path)[0]["seconds"] == ""


def test_credit_pipeline_smoke(tmp_path):
    data = Path(__file__).parents[1] / "data" / "german_credit.asc"
    cfg = ex.make_config({
        **TINY,
        "data": {"source": "credit", "path": str(data), "sensitive": [{"column": "age", "rule": ">=25"}]},
        "sweep": {"plain": {}}, "seeds": [0],
    })
    prepared = ex.prepare_data(cfg, 0)
    assert prepared.x_train.shape == (800, 20) and prepared.x_test.shape == (200, 20)
    assert prepared.x_train.min() >= 0 and prepared.x_train.max() <= 1
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path / "c")
    assert len(ex.read_results(path)) == 1


def test_failed_point_recorded_and_sweep_continues(tmp_path):
    cfg = ex.make_config({**TINY, "sweep": {"dim_removal": {"k": [10]}, "plain": {}}, "seeds": [0]})
    path, _ = ex.cmd_sweep(cfg, 0, tmp_path / "f")
    rows = ex.read_results(path)
    assert rows[0]["accuracy"] == "nan" and rows[1]["accuracy"] != "nan"
    manifest = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert manifest["failures"][0]["run_id"] == rows[0]["run_id"]
