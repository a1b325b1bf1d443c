"""Fairness metrics, a logistic-regression baseline and the cross-validated repair harness.

Disparate impact is ``P(out = 1 | S = 0) / P(out = 1 | S = 1)``: 1 is fully
fair, small values mean the unprivileged group (S = 0) is disadvantaged.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .data import Dataset, DataError, kfold_split
from .interp import SgdConfig, fit_interpolation, repair_new
from .io import atomic_write_text
from .ot import total_repair

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class FairnessError(ValueError):
    """A metric is undefined for the given data."""


# German credit: class label by gender and by age (young = 25 or younger).
# The favorable outcome is the 700-count class.
GERMAN_CREDIT_COUNTS = {
    "gender": {"unprivileged": "female", "privileged": "male",
               "favorable": (201, 499), "unfavorable": (109, 191)},
    "age": {"unprivileged": "young", "privileged": "senior",
            "favorable": (110, 590), "unfavorable": (80, 220)},
}


@dataclass(frozen=True)
class DIEstimate:
    di: float
    p0: float
    p1: float
    n0: int
    n1: int


def di_from_counts(fav0: int, n0: int, fav1: int, n1: int) -> DIEstimate:
    if n0 <= 0 or n1 <= 0:
        raise FairnessError("both groups must be nonempty")
    if not (0 <= fav0 <= n0 and 0 <= fav1 <= n1):
        raise FairnessError("favorable counts must lie in [0, group size]")
    p0, p1 = fav0 / n0, fav1 / n1
    if p1 == 0:
        raise FairnessError("disparate impact undefined: privileged group has no favorable outcome")
    return DIEstimate(p0 / p1, p0, p1, n0, n1)


def german_credit_estimate(attribute: str) -> DIEstimate:
    t = GERMAN_CREDIT_COUNTS[attribute]
    (f0, f1), (u0, u1) = t["favorable"], t["unfavorable"]
    return di_from_counts(f0, f0 + u0, f1, f1 + u1)


def disparate_impact(outcome: np.ndarray, protected: np.ndarray) -> DIEstimate:
    out = np.asarray(outcome)
    s = np.asarray(protected)
    if out.shape != s.shape or out.ndim != 1:
        raise FairnessError("outcome and protected must be vectors of equal length")
    n0, n1 = int(np.sum(s == 0)), int(np.sum(s == 1))
    return di_from_counts(int(np.sum(out[s == 0] == 1)), n0, int(np.sum(out[s == 1] == 1)), n1)


def di_confidence_interval(e: DIEstimate, alpha: float = 0.05) -> tuple[float, float]:
    """Delta-method interval for the ratio of two independent proportions."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if not (0 < e.p0 < 1 and 0 < e.p1 < 1):
        raise FairnessError("confidence interval needs both rates strictly inside (0, 1)")
    z = NormalDist().inv_cdf(1 - alpha / 2)
    se = e.di * math.sqrt((1 - e.p0) / (e.n0 * e.p0) + (1 - e.p1) / (e.n1 * e.p1))
    return e.di - z * se, e.di + z * se


def accuracy(pred: np.ndarray, label: np.ndarray) -> float:
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValueError("pred and label lengths differ")
    if pred.size == 0:
        raise ValueError("empty vectors")
    return float(np.mean(pred == label))


# ---------------------------------------------------------------------------
# logistic regression


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1e-4
    max_iter: int = 10_000
    tol: float = 1e-8
    threshold: float = 0.5


@dataclass(frozen=True)
class Classifier:
    coefficients: np.ndarray
    iterations: int
    loss: float
    converged: bool
    threshold: float = 0.5

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.coefficients[0] + np.asarray(X, dtype=float) @ self.coefficients[1:]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.int8)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def logistic_loss(w: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean log-loss plus ``l2/2 * |w[1:]|^2`` and its gradient; ``Z`` has a leading ones column."""
    z = Z @ w
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w[1:] @ w[1:])
    grad = Z.T @ (_sigmoid(z) - y) / len(y)
    grad[1:] += l2 * w[1:]
    return loss, grad


def fit_logistic(X: np.ndarray, y: np.ndarray, cfg: LogisticConfig | None = None) -> Classifier:
    """Penalized maximum likelihood by gradient descent.

    Barzilai-Borwein step lengths with Armijo backtracking; the intercept
    is not penalized. Stops when the gradient norm falls below ``cfg.tol``.
    """
    cfg = cfg or LogisticConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < d + 1:
        raise ValueError("need at least d + 1 rows")
    if np.all(y == y[0]):
        raise ValueError("labels are constant")
    Z = np.hstack([np.ones((n, 1)), X])
    w = np.zeros(d + 1)
    loss, g = logistic_loss(w, Z, y, cfg.l2)
    # first step: inverse of a Lipschitz bound on the gradient
    step = 1.0 / (0.25 * float(np.sum(Z**2)) / n + cfg.l2)
    it, converged = 0, False
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < cfg.tol:
            converged = True
            break
        t = step
        while True:
            w_new = w - t * g
            loss_new, g_new = logistic_loss(w_new, Z, y, cfg.l2)
            # float slack: near the optimum the required decrease is below loss resolution
            if loss_new <= loss - 1e-4 * t * gnorm**2 + 1e-15 * abs(loss) or t < 1e-20:
                break
            t *= 0.5
        s, r = w_new - w, g_new - g
        sr = float(s @ r)
        step = float(s @ s) / sr if sr > 0 else t
        w, loss, g = w_new, loss_new, g_new
    else:
        converged = float(np.linalg.norm(g)) < cfg.tol
    if not converged:
        log.warning("logistic regression did not converge in %d iterations", cfg.max_iter)
    return Classifier(w, it, loss, converged, cfg.threshold)


# ---------------------------------------------------------------------------
# evaluation harness


@dataclass(frozen=True)
class ProcedureConfig:
    K: int = 10
    seed: int = 0
    option: str = "regularized"
    weights: str = "empirical"
    solver: str = "hybrid"
    scale_digits: int = 6
    sgd: SgdConfig = field(default_factory=SgdConfig)
    density_threshold: float = 0.05
    interval: tuple[float, float] | None = None
    interval_col: int = 0
    alpha: float = 0.05
    logistic: LogisticConfig = field(default_factory=LogisticConfig)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    pass_name: str
    accuracy: float
    di: float | None
    p0: float
    p1: float
    n0: int
    n1: int
    ci_lo: float | None
    ci_hi: float | None


@dataclass
class EvalReport:
    config: dict
    folds: list[FoldResult]
    aggregate: dict
    timings: dict = field(default_factory=dict)

    def pass_results(self, name: str) -> list[FoldResult]:
        return [f for f in self.folds if f.pass_name == name]

    def to_dict(self, with_timings: bool = False) -> dict:
        out = {
            "version": REPORT_VERSION,
            "config": self.config,
            "folds": [_fold_dict(f) for f in self.folds],
            "aggregate": self.aggregate,
        }
        if with_timings:
            out["timings"] = self.timings
        return out

    def to_json(self, with_timings: bool = False) -> str:
        return json.dumps(self.to_dict(with_timings), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["fold", "pass", "accuracy", "di", "p0", "p1", "n0", "n1", "ci_lo", "ci_hi"]
        w.writerow(cols)
        for f in self.folds:
            d = _fold_dict(f)
            w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                        for c in cols])
        return buf.getvalue()

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        atomic_write_text(json_path, self.to_json())
        if csv_path is not None:
            atomic_write_text(csv_path, self.to_csv())


def _fold_dict(f: FoldResult) -> dict:
    d = asdict(f)
    d["pass"] = d.pop("pass_name")
    return d


def _fold_result(fold: int, name: str, pred: np.ndarray, label: np.ndarray,
                 protected: np.ndarray, alpha: float) -> FoldResult:
    acc = accuracy(pred, label)
    n0, n1 = int(np.sum(protected == 0)), int(np.sum(protected == 1))
    p0 = float(np.mean(pred[protected == 0] == 1))
    p1 = float(np.mean(pred[protected == 1] == 1))
    di = lo = hi = None
    try:
        e = disparate_impact(pred, protected)
        di = e.di
        lo, hi = di_confidence_interval(e, alpha)
    except FairnessError as exc:
        log.warning("fold %d (%s): %s", fold, name, exc)
    return FoldResult(fold, name, acc, di, p0, p1, n0, n1, lo, hi)


def _summary(values: list[float]) -> dict:
    v = np.array([x for x in values if x is not None], dtype=float)
    return {
        "mean": float(v.mean()) if v.size else None,
        "sd": float(v.std(ddof=1)) if v.size > 1 else None,
        "n": int(v.size),
    }


def run_procedure(ds: Dataset, cols: Sequence[str | int] | None = None,
                  cfg: ProcedureConfig | None = None) -> EvalReport:
    """Cross-validated comparison of a raw baseline with the repaired pipeline.

    Per fold, the benchmark pass fits logistic regression on the raw training
    split and scores the raw test split. The repair pass repairs the training
    split by total repair, fits one extension per group, repairs the test
    split through the extensions, then fits and scores on the repaired data.
    Accuracy and disparate impact of the predictions are measured on the
    test split in both passes.
    """
    cfg = cfg or ProcedureConfig()
    if ds.label is None:
        raise DataError("evaluation needs a label column")
    idx = ds.column_index(cols)
    plan = kfold_split(ds, cfg.K, cfg.seed)
    fold_seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.K)
    folds: list[FoldResult] = []
    pooled = {"benchmark": ([], []), "repaired": ([], [])}
    timings = {"benchmark": 0.0, "repaired": 0.0}
    for k, tr, te in plan.folds():
        train, test = ds.take(tr), ds.take(te)
        for part, rows in (("train", train), ("test", test)):
            if rows.protected.min() == rows.protected.max():
                raise DataError(f"fold {k}: {part} split lacks a protected group")
        try:
            t0 = time.perf_counter()
            clf = fit_logistic(train.features, train.label, cfg.logistic)
            pred = clf.predict(test.features)
            folds.append(_fold_result(k, "benchmark", pred, test.label, test.protected, cfg.alpha))
            pooled["benchmark"][0].append(pred)
            pooled["benchmark"][1].append(test.protected)
            t1 = time.perf_counter()

            rep_train, rm0, rm1 = total_repair(train, idx, cfg.weights)
            sgd = SgdConfig(cfg.sgd.max_epochs, cfg.sgd.rtol1, cfg.sgd.rtol2,
                            int(fold_seeds[k - 1]), cfg.sgd.chunk, cfg.sgd.polish)
            kw = dict(cfg=sgd, solver=cfg.solver, scale_digits=cfg.scale_digits,
                      density_threshold=cfg.density_threshold, interval=cfg.interval,
                      interval_col=cfg.interval_col)
            m0 = fit_interpolation(rm0, cfg.option, **kw)
            m1 = fit_interpolation(rm1, cfg.option, **kw)
            rep_test = repair_new(m0, m1, test, idx)
            clf = fit_logistic(rep_train.features, rep_train.label, cfg.logistic)
            pred = clf.predict(rep_test.features)
            folds.append(_fold_result(k, "repaired", pred, test.label, test.protected, cfg.alpha))
            pooled["repaired"][0].append(pred)
            pooled["repaired"][1].append(test.protected)
            t2 = time.perf_counter()
        except Exception as exc:
            try:
                wrapped = type(exc)(f"fold {k}: {exc}")
            except Exception:
                raise exc from None
            raise wrapped from exc
        timings["benchmark"] += t1 - t0
        timings["repaired"] += t2 - t1

    aggregate = {}
    for name in ("benchmark", "repaired"):
        res = [f for f in folds if f.pass_name == name]
        entry = {"accuracy": _summary([f.accuracy for f in res]),
                 "di": _summary([f.di for f in res])}
        pred = np.concatenate(pooled[name][0])
        prot = np.concatenate(pooled[name][1])
        try:
            e = disparate_impact(pred, prot)
            lo, hi = di_confidence_interval(e, cfg.alpha)
            entry["pooled_di"] = {"di": e.di, "ci_lo": lo, "ci_hi": hi, "p0": e.p0, "p1": e.p1,
                                  "n0": e.n0, "n1": e.n1}
        except FairnessError as exc:
            entry["pooled_di"] = {"error": str(exc)}
        aggregate[name] = entry
    config = {
        "K": cfg.K, "seed": cfg.seed, "option": cfg.option, "weights": cfg.weights,
        "solver": cfg.solver, "scale_digits": cfg.scale_digits,
        "sgd": asdict(cfg.sgd), "density_threshold": cfg.density_threshold,
        "interval": list(cfg.interval) if cfg.interval else None,
        "interval_col": cfg.interval_col, "alpha": cfg.alpha,
        "logistic": asdict(cfg.logistic), "columns": [ds.feature_names[i] for i in idx],
        "stratified_by": plan.stratified_by, "n": ds.n,
    }
    return EvalReport(config, folds, aggregate, timings)


# ---------------------------------------------------------------------------
# external predictions


def load_predictions(path: str | Path, n: int | None = None) -> np.ndarray:
    """Read a ``row_id,prediction`` CSV into a 0/1 vector ordered by row id (0-based)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
    rows = [r for r in rows if r]
    if not rows or [h.strip() for h in rows[0]] != ["row_id", "prediction"]:
        raise DataError("prediction file needs the header row_id,prediction")
    ids, preds = [], []
    for r, line in enumerate(rows[1:], start=1):
        try:
            ids.append(int(line[0]))
            preds.append(int(float(line[1])))
        except (ValueError, IndexError):
            raise DataError(f"malformed prediction at row {r}") from None
    size = n if n is not None else len(ids)
    if sorted(ids) != list(range(size)):
        raise DataError("row ids must be exactly 0..n-1")
    if not set(preds) <= {0, 1}:
        raise DataError("predictions must be 0 or 1")
    out = np.empty(size, dtype=np.int8)
    out[ids] = preds
    return out


def evaluate_predictions(pred: np.ndarray, ds: Dataset, alpha: float = 0.05) -> dict:
    e = disparate_impact(pred, ds.protected)
    lo, hi = di_confidence_interval(e, alpha)
    out = {"di": e.di, "ci_lo": lo, "ci_hi": hi, "p0": e.p0, "p1": e.p1}
    if ds.label is not None:
        out["accuracy"] = accuracy(pred, ds.label)
    return out
