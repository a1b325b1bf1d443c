"""Command-line interface: ``extr <subcommand> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical or solver error.

Every subcommand accepts ``--config FILE`` with a JSON object whose keys are
flag names (dashes or underscores); explicit flags override the file, and the
file overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import (
    Dataset,
    DataError,
    e1_config,
    e2_config,
    gen_biased_gaussian,
    load_csv,
    write_csv,
)
from .fairness import (
    FairnessError,
    LogisticConfig,
    ProcedureConfig,
    evaluate_predictions,
    load_predictions,
    run_procedure,
)
from .interp import (
    InterpolationError,
    SgdConfig,
    fit_interpolation,
    load_model,
    repair_new,
    save_model,
)
from .io import atomic_write_text
from .mmc import WeightedDigraph, hybrid_mcm, karp_mcm, refine_cycle, ScalingConfig
from .ot import total_repair

log = logging.getLogger("extr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OPTION_NAMES = {"1": "step1", "2": "regularized", "3": "hybrid",
                "step1": "step1", "regularized": "regularized", "hybrid": "hybrid"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON file of flag values (flags take precedence)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("-v", "--verbose", action="store_true", default=False, help="log progress")


def _data_flags(p: argparse.ArgumentParser, label: bool = True) -> None:
    p.add_argument("--input", required=False, default=None, help="input CSV path")
    p.add_argument("--protected-col", default="s",
                   help="protected attribute column; 0/1 or two strings (lexically smaller -> 0)")
    if label:
        p.add_argument("--label-col", default=None, help="label column (1 = favorable)")
    p.add_argument("--cols", default=None,
                   help="comma-separated feature columns to repair; empty means all features")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--option", default="2",
                   help="extension: 1=step1, 2=regularized, 3=hybrid (names accepted)")
    p.add_argument("--weights", choices=("empirical", "half"), default="empirical",
                   help="barycenter weights")
    p.add_argument("--solver", choices=("hybrid", "karp"), default="hybrid",
                   help="minimum-mean-cycle solver used for fitting")
    p.add_argument("--scale-digits", type=int, default=6, help="integer scaling digits p")
    p.add_argument("--sgd-epochs", type=int, default=100_000, help="max proximal descent epochs T")
    p.add_argument("--rtol1", type=float, default=1e-9, help="relative objective decrease tolerance")
    p.add_argument("--rtol2", type=float, default=1e-7, help="subgradient norm tolerance")
    p.add_argument("--density-threshold", type=float, default=0.05,
                   help="hybrid: Step 1 where local anchor density >= threshold")
    p.add_argument("--step1-interval", default=None,
                   help='hybrid: "a,b" interval of --interval-col routed to Step 1 '
                        "(overrides the density rule)")
    p.add_argument("--interval-col", default=None,
                   help="column tested by --step1-interval; empty means the first repaired column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extr", formatter_class=_Formatter,
        description="Optimal-transport repair of group-biased data with out-of-sample extension.",
        epilog="Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical error.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("repair", formatter_class=_Formatter,
                       help="total repair of a dataset; also fits and saves both group models")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--output", default=None, help="repaired CSV path")
    p.add_argument("--model-dir", default=None,
                   help="directory for model_s0.json and model_s1.json; empty means next to --output")
    _common(p)

    p = sub.add_parser("interpolate", formatter_class=_Formatter,
                       help="repair new rows with previously saved models")
    _data_flags(p)
    p.add_argument("--model-dir", default=None, help="directory holding model_s0.json and model_s1.json")
    p.add_argument("--option", default=None, help="override the saved extension option (1/2/3)")
    p.add_argument("--output", default=None, help="repaired CSV path")
    _common(p)

    p = sub.add_parser("mmc", formatter_class=_Formatter,
                       help="minimum mean cycle of a square cost matrix (CSV, no header)")
    p.add_argument("--input", default=None, help="square matrix CSV; diagonal ignored")
    p.add_argument("--solver", choices=("karp", "hybrid", "both"), default="hybrid", help="solver")
    p.add_argument("--scale-digits", type=int, default=6, help="integer scaling digits p")
    p.add_argument("--no-refine", action="store_true", default=False,
                   help="report the integer-scaled optimum without float refinement")
    p.add_argument("--output", default=None, help="optional JSON result path")
    _common(p)

    p = sub.add_parser("evaluate", formatter_class=_Formatter,
                       help="cross-validated benchmark vs repaired logistic regression")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--folds", type=int, default=10, help="number of folds K")
    p.add_argument("--alpha", type=float, default=0.05, help="confidence level parameter")
    p.add_argument("--l2", type=float, default=1e-4, help="logistic regression L2 penalty")
    p.add_argument("--predictions", default=None,
                   help="optional row_id,prediction CSV to score instead of running the procedure")
    p.add_argument("--output-dir", default=None,
                   help="writes report.json, report.csv and timings.json")
    _common(p)

    p = sub.add_parser("simulate", formatter_class=_Formatter,
                       help="generate the synthetic E1-A, E1-B or E2 datasets")
    p.add_argument("--experiment", choices=("E1-A", "E1-B", "E2"), default="E1-A", help="configuration")
    p.add_argument("--n0", type=int, default=None, help="override group 0 size")
    p.add_argument("--n1", type=int, default=None, help="override group 1 size")
    p.add_argument("--online", type=int, nargs=2, default=(40, 40), metavar=("M0", "M1"),
                   help="E2: sizes of the online batch")
    p.add_argument("--output", default=None, help="CSV path")
    p.add_argument("--online-output", default=None, help="E2: CSV path for the online batch")
    _common(p)

    p = sub.add_parser("bench", formatter_class=_Formatter,
                       help="time plan recomputation vs interpolation of new points")
    p.add_argument("--n0", type=int, default=200, help="fitted group 0 size")
    p.add_argument("--n1", type=int, default=200, help="fitted group 1 size")
    p.add_argument("--k0", type=int, default=40, help="new group 0 points")
    p.add_argument("--k1", type=int, default=40, help="new group 1 points")
    p.add_argument("--repeats", type=int, default=5, help="repetitions R (medians reported)")
    p.add_argument("--option", default="2", help="extension used for the new points (1/2/3)")
    p.add_argument("--output", default=None, help="optional JSON result path")
    _common(p)
    return parser


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(values, dict):
            parser.error("config file must hold a JSON object")
        known = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"unknown config key {key!r} for {args.command}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
        args = parser.parse_args(argv)
    return args


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)  # pragma: no cover


def _need(args, *names: str) -> None:
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _option(value) -> str:
    key = str(value).strip().lower()
    if key not in OPTION_NAMES:
        raise UsageError(f"invalid option {value!r}; expected 1, 2 or 3")
    return OPTION_NAMES[key]


def _cols(value) -> list[str] | None:
    if value in (None, ""):
        return None
    if isinstance(value, list):
        return [str(v) for v in value]
    return [c.strip() for c in str(value).split(",") if c.strip()]


def _interval(value) -> tuple[float, float] | None:
    if value in (None, ""):
        return None
    if isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = str(value).strip().strip("[]()").split(",")
    try:
        a, b = (float(v) for v in parts)
    except ValueError:
        raise UsageError(f'--step1-interval must look like "a,b", got {value!r}') from None
    if a > b:
        raise UsageError("--step1-interval needs a <= b")
    return a, b


def _sgd(args) -> SgdConfig:
    try:
        return SgdConfig(max_epochs=args.sgd_epochs, rtol1=args.rtol1, rtol2=args.rtol2, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _interval_col(args, ds: Dataset, idx: list[int]) -> int:
    if args.interval_col in (None, ""):
        return 0
    name = str(args.interval_col)
    pos = ds.column_index([int(name)] if name.isdigit() else [name])[0]
    if pos not in idx:
        raise UsageError(f"--interval-col {name!r} is not among the repaired columns")
    return idx.index(pos)


# where results are written is not part of a run's content
_UNRECORDED = ("verbose", "output", "output_dir", "model_dir", "online_output")


def _resolved(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k not in _UNRECORDED}


# ---------------------------------------------------------------------------
# subcommands


def cmd_repair(args) -> int:
    _need(args, "input", "output")
    option = _option(args.option)
    ds = load_csv(args.input, args.protected_col, args.label_col)
    cols = _cols(args.cols)
    idx = ds.column_index(cols)
    weights = "empirical" if args.weights == "empirical" else (0.5, 0.5)
    repaired, rm0, rm1 = total_repair(ds, idx, weights)
    kw = dict(cfg=_sgd(args), solver=args.solver, scale_digits=args.scale_digits,
              density_threshold=args.density_threshold, interval=_interval(args.step1_interval),
              interval_col=_interval_col(args, ds, idx))
    names = [ds.feature_names[i] for i in idx]
    model_dir = Path(args.model_dir) if args.model_dir else Path(args.output).parent
    models = [fit_interpolation(rm, option, **kw) for rm in (rm0, rm1)]
    write_csv(repaired, args.output)
    for m in models:
        save_model(m, model_dir / f"model_s{m.group}.json", names)
    log.info("repaired %d rows; models in %s", ds.n, model_dir)
    print(f"wrote {args.output}; models {model_dir / 'model_s0.json'}, {model_dir / 'model_s1.json'}")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    _need(args, "input", "output", "model_dir")
    ds = load_csv(args.input, args.protected_col, args.label_col, require_both_groups=False)
    loaded = [load_model(Path(args.model_dir) / f"model_s{s}.json") for s in (0, 1)]
    (m0, c0), (m1, c1) = loaded
    if c0 != c1:
        raise DataError("the two model files were fitted on different columns")
    cols = _cols(args.cols) or c0
    if c0 is not None and list(cols) != list(c0):
        raise DataError(f"columns {cols} do not match the models' columns {c0}")
    if args.option is not None:
        option = _option(args.option)
        m0, m1 = m0.with_option(option), m1.with_option(option)
    out = repair_new(m0, m1, ds, cols)
    write_csv(out, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _read_matrix(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    rows = [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
    try:
        mat = np.array([[float(v) for v in line.split(",")] for line in rows])
    except ValueError:
        raise DataError("matrix CSV must hold numbers only (no header)") from None
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DataError("matrix must be square")
    return mat


def cmd_mmc(args) -> int:
    _need(args, "input")
    try:
        g = WeightedDigraph(_read_matrix(args.input))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    solvers = ("karp", "hybrid") if args.solver == "both" else (args.solver,)
    results = {}
    for name in solvers:
        t0 = time.perf_counter()
        res = karp_mcm(g, args.scale_digits) if name == "karp" else \
            hybrid_mcm(g, ScalingConfig(scale_digits=args.scale_digits))
        if not args.no_refine:
            res = refine_cycle(g, res)
        dt = time.perf_counter() - t0
        results[name] = {"mean": res.mean, "mean_exact": str(res.mean_exact), "cycle": list(res.cycle),
                         "length": res.length, "total": res.total, "iterations": res.iterations,
                         "fallback": res.fallback, "seconds": dt}
        print(f"{name}: mean={res.mean!r} cycle={'-'.join(map(str, res.cycle))} "
              f"iterations={res.iterations}{' (karp fallback)' if res.fallback else ''}")
    if len(results) == 2 and results["karp"]["mean_exact"] != results["hybrid"]["mean_exact"]:
        log.warning("solvers disagree: karp %s vs hybrid %s",
                    results["karp"]["mean_exact"], results["hybrid"]["mean_exact"])
    if args.output:
        atomic_write_text(args.output, json.dumps({"n": g.n, "results": results}, indent=1) + "\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _need(args, "input", "label_col")
    ds = load_csv(args.input, args.protected_col, args.label_col)
    if args.predictions:
        pred = load_predictions(args.predictions, ds.n)
        res = evaluate_predictions(pred, ds, args.alpha)
        text = json.dumps({"version": 1, "config": _resolved(args), "external": res},
                          indent=1, sort_keys=True) + "\n"
        if args.output_dir:
            atomic_write_text(Path(args.output_dir) / "external.json", text)
        print(text, end="")
        return EXIT_OK
    _need(args, "output_dir")
    idx = ds.column_index(_cols(args.cols))
    if not 2 <= args.folds <= ds.n:
        raise UsageError(f"--folds must be in [2, {ds.n}]")
    cfg = ProcedureConfig(
        K=args.folds, seed=args.seed, option=_option(args.option),
        weights="empirical" if args.weights == "empirical" else (0.5, 0.5),
        solver=args.solver, scale_digits=args.scale_digits, sgd=_sgd(args),
        density_threshold=args.density_threshold, interval=_interval(args.step1_interval),
        interval_col=_interval_col(args, ds, idx), alpha=args.alpha,
        logistic=LogisticConfig(l2=args.l2))
    report = run_procedure(ds, idx, cfg)
    report.config["cli"] = _resolved(args)
    out = Path(args.output_dir)
    report.write(out / "report.json", out / "report.csv")
    atomic_write_text(out / "timings.json", json.dumps(report.timings, indent=1, sort_keys=True) + "\n")
    for name, agg in report.aggregate.items():
        acc, di = agg["accuracy"], agg["di"]
        print(f"{name:9s} accuracy {acc['mean']:.3f} +/- {acc['sd'] or 0:.3f}   "
              f"DI {di['mean'] if di['mean'] is not None else float('nan'):.3f} +/- {di['sd'] or 0:.3f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    _need(args, "output")
    if args.experiment == "E2":
        cfg = e2_config(args.n0 or 200, args.n1 or 200, args.seed)
    else:
        cfg = e1_config(args.experiment[-1], args.seed)
        if args.n0 or args.n1:
            from dataclasses import replace
            cfg = replace(cfg, n0=args.n0 or cfg.n0, n1=args.n1 or cfg.n1)
    write_csv(gen_biased_gaussian(cfg), args.output)
    print(f"wrote {args.output}")
    if args.experiment == "E2" and args.online_output:
        # the online batch uses a child seed so it never repeats the offline draws
        child = int(np.random.SeedSequence(args.seed).spawn(3)[2].generate_state(1)[0])
        online = e2_config(args.online[0], args.online[1], child)
        write_csv(gen_biased_gaussian(online), args.online_output)
        print(f"wrote {args.online_output}")
    return EXIT_OK


def run_bench(n0: int, n1: int, k0: int, k1: int, repeats: int = 5, seed: int = 0,
              option: str = "regularized") -> dict:
    """Median seconds of (a) repairing the augmented sample from scratch and
    (b) interpolating the new points with models fitted on the original sample."""
    base = gen_biased_gaussian(e2_config(n0, n1, seed))
    child = int(np.random.SeedSequence(seed).spawn(3)[2].generate_state(1)[0])
    if k0 + k1 > 0:
        new = gen_biased_gaussian(e2_config(max(k0, 1), max(k1, 1), child))
        new = new.take(np.r_[np.arange(k0), max(k0, 1) + np.arange(k1)].astype(int))
    else:
        new = None
    _, rm0, rm1 = total_repair(base)
    m0, m1 = (fit_interpolation(rm, option) for rm in (rm0, rm1))
    aug = base if new is None else Dataset(
        np.vstack([base.features, new.features]), base.feature_names,
        np.concatenate([base.protected, new.protected]), None)
    recompute, interp = [], []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        total_repair(aug)
        t1 = time.perf_counter()
        if new is not None:
            repair_new(m0, m1, new)
        t2 = time.perf_counter()
        recompute.append(t1 - t0)
        interp.append(t2 - t1)
    a, b = float(np.median(recompute)), float(np.median(interp))
    return {"n0": n0, "n1": n1, "k0": k0, "k1": k1, "repeats": repeats, "option": option,
            "recompute_seconds": a, "interpolate_seconds": b,
            "speedup": a / b if b > 0 else None}


def cmd_bench(args) -> int:
    if min(args.n0, args.n1) < 2 or min(args.k0, args.k1) < 0 or args.repeats < 1:
        raise UsageError("need n0, n1 >= 2, k0, k1 >= 0 and repeats >= 1")
    res = run_bench(args.n0, args.n1, args.k0, args.k1, args.repeats, args.seed, _option(args.option))
    res["config"] = _resolved(args)
    sp = res["speedup"]
    print("n0   n1   k0  k1  recompute_s  interpolate_s  speedup")
    print(f"{args.n0:<4d} {args.n1:<4d} {args.k0:<3d} {args.k1:<3d} {res['recompute_seconds']:<12.4f} "
          f"{res['interpolate_seconds']:<14.4f} {'n/a' if sp is None else f'{sp:.1f}x'}")
    if args.output:
        atomic_write_text(args.output, json.dumps(res, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"repair": cmd_repair, "interpolate": cmd_interpolate, "mmc": cmd_mmc,
            "evaluate": cmd_evaluate, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"extr {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FairnessError) as exc:
        print(f"extr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InterpolationError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"extr {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"extr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
