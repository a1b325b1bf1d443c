import json

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from extr.data import Dataset, e1_config, gen_biased_gaussian
from extr.fairness import (
    FairnessError,
    LogisticConfig,
    ProcedureConfig,
    accuracy,
    di_confidence_interval,
    di_from_counts,
    disparate_impact,
    evaluate_predictions,
    fit_logistic,
    german_credit_estimate,
    load_predictions,
    logistic_loss,
    run_procedure,
)
from extr.ot import total_repair


def test_german_credit_point_estimates():
    assert german_credit_estimate("gender").di == pytest.approx(0.897, abs=1e-3)
    assert german_credit_estimate("age").di == pytest.approx(0.795, abs=1e-3)


def test_german_credit_intervals():
    lo, hi = di_confidence_interval(german_credit_estimate("gender"))
    assert (lo, hi) == (pytest.approx(0.812, abs=2e-3), pytest.approx(0.981, abs=2e-3))
    lo, hi = di_confidence_interval(german_credit_estimate("age"))
    assert (lo, hi) == (pytest.approx(0.693, abs=2e-3), pytest.approx(0.897, abs=2e-3))


def test_equal_rates_give_one():
    e = disparate_impact(np.array([1, 0, 1, 0]), np.array([0, 0, 1, 1]))
    assert e.di == 1.0


def test_undefined_di_is_an_error():
    with pytest.raises(FairnessError, match="undefined"):
        disparate_impact(np.array([1, 0, 0, 0]), np.array([0, 0, 1, 1]))
    with pytest.raises(FairnessError):
        di_confidence_interval(di_from_counts(0, 10, 5, 10))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 99), st.integers(1, 99), st.integers(0, 2**31))
def test_di_symmetry_and_permutation_invariance(f0, f1, seed):
    out = np.r_[np.ones(f0), np.zeros(100 - f0), np.ones(f1), np.zeros(100 - f1)].astype(int)
    s = np.r_[np.zeros(100), np.ones(100)].astype(int)
    e = disparate_impact(out, s)
    assert disparate_impact(out, 1 - s).di == pytest.approx(1 / e.di, rel=1e-12)
    p = np.random.default_rng(seed).permutation(200)
    assert disparate_impact(out[p], s[p]).di == e.di


def test_interval_shrinks_with_sample_size():
    widths = []
    for n in (100, 10_000, 1_000_000):
        lo, hi = di_confidence_interval(di_from_counts(6 * n // 10, n, 7 * n // 10, n))
        widths.append(hi - lo)
    assert widths[0] > widths[1] > widths[2] and widths[2] < 0.01


def test_interval_coverage():
    rng = np.random.default_rng(0)
    p0, p1, n0, n1, reps = 0.55, 0.7, 400, 600, 4000
    truth = p0 / p1
    hits = 0
    for _ in range(reps):
        e = di_from_counts(int(rng.binomial(n0, p0)), n0, int(rng.binomial(n1, p1)), n1)
        lo, hi = di_confidence_interval(e)
        hits += lo <= truth <= hi
    assert 0.93 <= hits / reps <= 0.97


def test_accuracy():
    assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy([1, 0, 1], [0, 1, 0]) == 0.0
    assert accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5


def test_logistic_separated_data():
    X = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)][:, None]
    y = (X[:, 0] > 0).astype(int)
    clf = fit_logistic(X, y, LogisticConfig(l2=1e-2))
    assert np.all(np.isfinite(clf.coefficients)) and clf.converged
    assert accuracy(clf.predict(X), y) == 1.0


def test_logistic_gradient_at_optimum(rng):
    X = rng.standard_normal((300, 3))
    y = (rng.random(300) < 1 / (1 + np.exp(-(X @ [1.0, -2.0, 0.5])))).astype(int)
    cfg = LogisticConfig(l2=1e-3)
    clf = fit_logistic(X, y, cfg)
    Z = np.hstack([np.ones((300, 1)), X])
    _, g = logistic_loss(clf.coefficients, Z, y, cfg.l2)
    assert np.linalg.norm(g) < 1e-6
    # analytic gradient against central differences
    w = clf.coefficients + 0.1
    _, g = logistic_loss(w, Z, y, cfg.l2)
    for k in range(4):
        e = np.zeros(4)
        e[k] = 1e-6
        fd = (logistic_loss(w + e, Z, y, cfg.l2)[0] - logistic_loss(w - e, Z, y, cfg.l2)[0]) / 2e-6
        assert g[k] == pytest.approx(fd, abs=1e-7)


def test_logistic_recovers_beta():
    rng = np.random.default_rng(1)
    beta = np.array([0.5, 1.0, -1.5, 0.25])
    X = rng.standard_normal((100_000, 3))
    y = (rng.random(100_000) < 1 / (1 + np.exp(-(beta[0] + X @ beta[1:])))).astype(int)
    clf = fit_logistic(X, y, LogisticConfig(l2=0.0))
    assert np.all(np.abs(clf.coefficients - beta) < 0.05)


def test_logistic_rejects_constant_labels():
    with pytest.raises(ValueError):
        fit_logistic(np.arange(10.0)[:, None], np.ones(10))


@pytest.fixture(scope="module")
def small_report():
    ds = gen_biased_gaussian(replace(e1_config("A", seed=2), n0=80, n1=80))
    return ds, run_procedure(ds, None, ProcedureConfig(K=4, seed=2))


def test_report_structure(small_report):
    _, rep = small_report
    assert len(rep.folds) == 8
    assert [f.fold for f in rep.pass_results("benchmark")] == [1, 2, 3, 4]
    for f in rep.folds:
        if f.ci_lo is None:
            # degenerate rate: no delta-method interval, reported as empty
            assert f.ci_hi is None and ({f.p0, f.p1} & {0.0, 1.0})
        else:
            assert f.ci_lo <= f.di <= f.ci_hi
    for name in ("benchmark", "repaired"):
        agg = rep.aggregate[name]
        assert agg["accuracy"]["n"] == 4 and "ci_lo" in agg["pooled_di"]
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0].startswith("fold,pass,accuracy,di") and len(csv_lines) == 9
    assert "timings" not in json.loads(rep.to_json())


def test_report_is_deterministic(small_report):
    ds, rep = small_report
    again = run_procedure(ds, None, ProcedureConfig(K=4, seed=2))
    assert again.to_json() == rep.to_json() and again.to_csv() == rep.to_csv()


def test_repair_pass_raises_di(small_report):
    _, rep = small_report
    agg = rep.aggregate
    assert agg["repaired"]["di"]["mean"] > agg["benchmark"]["di"]["mean"]


def test_pre_repaired_data_is_a_fixed_point():
    ds = gen_biased_gaussian(e1_config("A", seed=0))
    repaired, _, _ = total_repair(ds)
    agg = run_procedure(repaired, None, ProcedureConfig(K=5, seed=0)).aggregate
    b, r = agg["benchmark"]["di"]["mean"], agg["repaired"]["di"]["mean"]
    assert abs(b - r) < 0.1
    assert 0.8 < b < 1.25 and 0.8 < r < 1.25


def test_procedure_requires_labels():
    ds = Dataset(np.arange(8.0)[:, None], ("x",), np.arange(8) % 2)
    with pytest.raises(ValueError):
        run_procedure(ds)


def test_external_predictions(tmp_path):
    ds = Dataset(np.arange(6.0)[:, None], ("x",), [0, 0, 0, 1, 1, 1], [1, 0, 1, 1, 1, 0])
    p = tmp_path / "p.csv"
    p.write_text("row_id,prediction\n5,0\n0,1\n1,0\n2,1\n3,1\n4,1\n")
    pred = load_predictions(p, 6)
    assert pred.tolist() == [1, 0, 1, 1, 1, 0]
    res = evaluate_predictions(pred, ds)
    assert res["di"] == pytest.approx((2 / 3) / (2 / 3)) and res["accuracy"] == 1.0
    p.write_text("row_id,prediction\n0,1\n")
    with pytest.raises(ValueError):
        load_predictions(p, 6)
