import json

import numpy as np
import pytest

from extr.cli import main, run_bench
from extr.data import load_csv


@pytest.fixture(scope="module")
def e1_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    path = d / "e1.csv"
    assert main(["simulate", "--experiment", "E1-A", "--n0", "60", "--n1", "60",
                 "--seed", "4", "--output", str(path)]) == 0
    return path


def _run(argv, capsys=None):
    code = main([str(a) for a in argv])
    return code


def test_help_shows_defaults(capsys):
    assert main(["evaluate", "--help"]) == 0
    out = capsys.readouterr().out
    assert "(default: 10)" in out and "(default: 0.05)" in out
    assert out.count("(default: 2)") == 1


def test_simulate_shapes(e1_csv):
    ds = load_csv(e1_csv, "s", "y")
    assert ds.n == 120 and ds.feature_names == ("x1", "x2", "x3", "x4", "x5")


def test_simulate_e2_online(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _run(["simulate", "--experiment", "E2", "--output", a, "--online", 5, 7,
                 "--online-output", b]) == 0
    assert load_csv(b, "s", "y").n == 12 and load_csv(a, "s", "y").d == 3


def test_repair_shape_and_determinism(tmp_path, e1_csv):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}" / "rep.csv"
        out.parent.mkdir()
        assert _run(["repair", "--input", e1_csv, "--label-col", "y", "--output", out]) == 0
        outs.append(out)
    assert e1_csv.read_text().splitlines()[0] == outs[0].read_text().splitlines()[0]
    assert len(e1_csv.read_text().splitlines()) == len(outs[0].read_text().splitlines())
    for name in ("rep.csv", "model_s0.json", "model_s1.json"):
        assert (outs[0].parent / name).read_bytes() == (outs[1].parent / name).read_bytes()


def test_repair_single_column(tmp_path, e1_csv):
    out = tmp_path / "rep.csv"
    assert _run(["repair", "--input", e1_csv, "--label-col", "y", "--cols", "x1", "--output", out]) == 0
    a, b = load_csv(e1_csv, "s", "y"), load_csv(out, "s", "y")
    changed = np.any(a.features != b.features, axis=0)
    assert changed.tolist() == [True, False, False, False, False]


def test_interpolate_training_data_matches_repair(tmp_path, e1_csv):
    rep, new = tmp_path / "rep.csv", tmp_path / "new.csv"
    assert _run(["repair", "--input", e1_csv, "--label-col", "y", "--output", rep]) == 0
    assert _run(["interpolate", "--input", e1_csv, "--label-col", "y", "--model-dir", tmp_path,
                 "--output", new]) == 0
    a, b = load_csv(rep, "s", "y"), load_csv(new, "s", "y")
    assert np.abs(a.features - b.features).max() < 1e-6


def test_interpolate_empty_file(tmp_path, e1_csv):
    rep = tmp_path / "rep.csv"
    assert _run(["repair", "--input", e1_csv, "--label-col", "y", "--output", rep]) == 0
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert _run(["interpolate", "--input", empty, "--model-dir", tmp_path,
                 "--output", tmp_path / "x.csv"]) == 3


def test_mmc_command(tmp_path, capsys):
    m = tmp_path / "m.csv"
    m.write_text("0,2\n4,0\n")
    out = tmp_path / "res.json"
    assert _run(["mmc", "--input", m, "--solver", "both", "--output", out]) == 0
    res = json.loads(out.read_text())["results"]
    assert res["karp"]["mean"] == 3.0 and res["hybrid"]["cycle"] == [0, 1, 0]
    assert "mean=3.0" in capsys.readouterr().out


def test_exit_codes(tmp_path, e1_csv):
    assert _run(["repair", "--input", tmp_path / "nope.csv", "--output", tmp_path / "o.csv"]) == 3
    assert _run(["repair", "--input", e1_csv, "--output", tmp_path / "o.csv", "--option", "7"]) == 2
    assert _run(["repair", "--input", e1_csv]) == 2
    assert _run(["frobnicate"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert _run(["mmc", "--input", bad]) == 3
    tie = tmp_path / "tie.csv"
    tie.write_text("s,x\n0,0\n0,1\n1,5\n1,5\n")
    # group 1 is a single repeated point: one image, nothing to interpolate
    assert _run(["repair", "--input", tie, "--output", tmp_path / "t.csv"]) == 4


def test_config_file_and_precedence(tmp_path, e1_csv):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"folds": 5, "label-col": "y", "input": str(e1_csv)}))
    out = tmp_path / "ev"
    assert _run(["evaluate", "--config", cfg, "--folds", 3, "--output-dir", out]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["K"] == 3 and len(rep["folds"]) == 6
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert _run(["evaluate", "--config", cfg]) == 2


def test_evaluate_hybrid_with_interval(tmp_path, e1_csv):
    out = tmp_path / "ev"
    assert _run(["evaluate", "--input", e1_csv, "--label-col", "y", "--folds", 3, "--option", 3,
                 "--step1-interval", "[0,3]", "--output-dir", out]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["option"] == "hybrid" and rep["config"]["interval"] == [0.0, 3.0]
    assert _run(["evaluate", "--input", e1_csv, "--label-col", "y", "--option", "x",
                 "--output-dir", out]) == 2


def test_evaluate_is_byte_identical(tmp_path, e1_csv):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert _run(["evaluate", "--input", e1_csv, "--label-col", "y", "--folds", 4,
                     "--seed", 1, "--output-dir", d]) == 0
    for name in ("report.json", "report.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_evaluate_external_predictions(tmp_path, e1_csv):
    pred = tmp_path / "p.csv"
    pred.write_text("row_id,prediction\n" + "".join(f"{i},{i % 2}\n" for i in range(120)))
    assert _run(["evaluate", "--input", e1_csv, "--label-col", "y", "--predictions", pred,
                 "--output-dir", tmp_path]) == 0
    res = json.loads((tmp_path / "external.json").read_text())["external"]
    assert 0 < res["di"] and res["ci_lo"] < res["di"] < res["ci_hi"]


def test_bench_small_and_empty():
    res = run_bench(20, 20, 1, 1, repeats=1)
    assert res["recompute_seconds"] > 0 and res["speedup"] > 0
    empty = run_bench(20, 20, 0, 0, repeats=1)
    assert empty["interpolate_seconds"] < 1e-3


def test_bench_command(tmp_path, capsys):
    out = tmp_path / "b.json"
    assert _run(["bench", "--n0", 30, "--n1", 30, "--k0", 5, "--k1", 5, "--repeats", 1,
                 "--output", out]) == 0
    assert json.loads(out.read_text())["k0"] == 5
    assert "speedup" in capsys.readouterr().out
