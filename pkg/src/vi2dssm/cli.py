"""Command-line entry point: ``vi2dssm {check,bench,simulate,forecast}``.

Exit codes: 0 success, 1 a suite or gate failed, 2 usage or config error,
3 file error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .aggregation import AggregatorSpec
from .branches import BranchConfig, GateParams
from .checks import SUITES, run_suites
from .errors import ParseError, VI2DError
from .forecast import run_forecast
from .io import read_config, read_csv_series, write_csv_series, write_table
from .numerics import Rng
from .scan import depth_benchmark
from .sim import SCALING_C, SimConfig, run_cscaling_study, run_permutation_study, timing_ratio

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _name_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# option name -> (converter, default); None defaults are filled per command
OPTIONS = {
    "seed": (int, 0),
    "vars": (_int_list, None),
    "seq": (int, None),
    "trials": (int, 10),
    "repeats": (int, 5),
    "agg": (str, "mean"),
    "delta_long": (float, 1.0),
    "delta_short": (float, 0.01),
    "delta_freq": (float, 0.005),
    "out": (str, "."),
    "suites": (_name_list, None),
    "cases": (int, None),
    "break_coupling": (_bool, False),
    "study": (str, "permutation"),
    "lookback": (int, 16),
    "train_frac": (float, 0.8),
    "lam": (float, 1e-3),
    "data": (str, None),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--seed", type=str, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--agg", choices=("mean", "sum", "attention"))
    common.add_argument("--delta-long", dest="delta_long", type=str)
    common.add_argument("--delta-short", dest="delta_short", type=str)
    common.add_argument("--delta-freq", dest="delta_freq", type=str)

    parser = argparse.ArgumentParser(prog="vi2dssm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="run the invariant suites")
    p.add_argument("--suites", help=f"comma list from {','.join(SUITES)}")
    p.add_argument("--cases", type=str, help="cases per suite (suite default otherwise)")
    p.add_argument("--break-coupling", dest="break_coupling", action="store_const", const=True,
                   help="inject a non-equivariant coupling term (self-test of the suites)")

    p = sub.add_parser("bench", parents=[common], help="time both engines as C grows")
    p.add_argument("--vars", help="comma list of C values (default 16,32,64,128,256)")
    p.add_argument("--seq", type=str, help="sequence length T (default 256)")
    p.add_argument("--repeats", type=str, help="timing repeats, median taken (default 5)")

    p = sub.add_parser("simulate", parents=[common], help="controlled VAR(1) studies")
    p.add_argument("--study", choices=("permutation", "cscaling", "both"))
    p.add_argument("--vars", help="C for the permutation study (default 64) or list for cscaling")
    p.add_argument("--seq", type=str, help="T (default 1000 permutation, 256 cscaling)")
    p.add_argument("--trials", type=str, help="number of permutations (default 10)")
    p.add_argument("--repeats", type=str)

    p = sub.add_parser("forecast", parents=[common], help="one-step forecasts of a CSV series")
    p.add_argument("data", nargs="?", help="CSV with one row per step, one column per variable")
    p.add_argument("--lookback", type=str)
    p.add_argument("--train-frac", dest="train_frac", type=str)
    p.add_argument("--lam", type=str)
    return parser


def resolve(args):
    """Merge defaults, the config file and flags into one validated dict."""
    file_vals = {}
    if args.config:
        try:
            raw = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise UsageError(f"unknown config key {key!r}")
            file_vals[key] = value
    opts = {}
    for key, (conv, default) in OPTIONS.items():
        value = getattr(args, key, None)
        if value is None:
            value = file_vals.get(key)
        if value is None:
            opts[key] = default
            continue
        try:
            opts[key] = conv(value)
        except (ValueError, TypeError):
            raise UsageError(f"invalid value for {key}: {value!r}") from None
    return opts


def validate(command, o):
    if not 0 <= o["seed"] < 2**64:
        raise UsageError("seed must fit in an unsigned 64-bit integer")
    if o["agg"] not in ("mean", "sum", "attention"):
        raise UsageError(f"unknown aggregator {o['agg']!r}")
    BranchConfig(o["delta_long"], o["delta_short"], o["delta_freq"]).check_steps()
    if o["repeats"] < 1:
        raise UsageError("repeats must be >= 1")
    if command == "check":
        if o["suites"]:
            unknown = [s for s in o["suites"] if s not in SUITES]
            if unknown:
                raise UsageError(f"unknown suites {unknown}; choose from {list(SUITES)}")
        if o["cases"] is not None and o["cases"] < 1:
            raise UsageError("cases must be >= 1")
    elif command == "bench":
        o["vars"] = o["vars"] or list(SCALING_C)
        o["seq"] = o["seq"] or 256
        bad = [c for c in o["vars"] if c not in SCALING_C]
        if bad:
            raise UsageError(f"--vars must be drawn from {SCALING_C}, got {bad}")
        _sim_config(o, o["seq"], o["vars"]).validate()
    elif command == "simulate":
        if o["study"] not in ("permutation", "cscaling", "both"):
            raise UsageError(f"unknown study {o['study']!r}")
        if o["trials"] < 2:
            raise UsageError("trials must be >= 2")
        if o["study"] == "permutation" and o["vars"] and len(o["vars"]) != 1:
            raise UsageError("the permutation study takes a single --vars value")
        if o["study"] != "permutation" and o["vars"]:
            bad = [c for c in o["vars"] if c not in SCALING_C]
            if bad:
                raise UsageError(f"C-scaling values must be drawn from {SCALING_C}, got {bad}")
        _sim_config(o, o["seq"] or 1000).validate()
    elif command == "forecast":
        if not o["data"]:
            raise UsageError("forecast needs a data file")
        if o["lookback"] < 4 or o["lookback"] % 2:
            raise UsageError("lookback must be an even count >= 4")
        if not 0.0 < o["train_frac"] < 1.0:
            raise UsageError("train-frac must lie in (0, 1)")
        if not o["lam"] >= 0:
            raise UsageError("lam must be nonnegative")


def _sim_config(o, seq, C_values=None):
    """SimConfig from resolved options; a single ``--vars`` value is the permutation-study C."""
    single = o["vars"] and len(o["vars"]) == 1 and o.get("study") == "permutation"
    return SimConfig(
        C=o["vars"][0] if single else 64,
        T=seq,
        C_values=tuple(C_values or SCALING_C),
        scaling_T=seq,
        agg=o["agg"],
        delta=o["delta_long"],
        trials=o["trials"],
        repeats=o["repeats"],
        seed=o["seed"],
    )


def _prepare_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def cmd_check(o, stdout):
    results = run_suites(o["suites"], seed=o["seed"], cases=o["cases"],
                         break_coupling=o["break_coupling"])
    for r in results:
        print(r.line(), file=stdout)
    failed = [r for r in results if not r.passed]
    for r in failed[:1]:
        print(f"first counterexample ({r.name}): {r.counterexample_json()}", file=stdout)
    print(f"{len(results) - len(failed)}/{len(results)} suites passed", file=stdout)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(o, stdout):
    cfg = replace(_sim_config(o, o["seq"], o["vars"]), repeats=1)
    rng = Rng(o["seed"])
    times = depth_benchmark(o["vars"], T=o["seq"], repeats=o["repeats"], rng=rng.spawn(1))
    study = run_cscaling_study(cfg=cfg, rng=rng.spawn(2))
    acc = {(r["engine"], r["C"]): r for r in study.rows}
    rows = [(engine, C, sec, acc[engine, C]["mae"], acc[engine, C]["mape"])
            for engine, C, sec in times]
    out = _prepare_out(o["out"])
    path = os.path.join(out, "bench.csv")
    write_table(path, ["engine", "C", "median_seconds", "mae", "mape"], rows)
    for engine, C, sec, mae, mape in rows:
        print(f"{engine:<8} C={C:<4} {sec * 1e3:9.2f} ms  mae={mae:.4f}", file=stdout)
    for engine in ("vi", "ordered"):
        ts = [sec for e, _, sec, _, _ in rows if e == engine]
        print(f"{engine} time ratio C={o['vars'][-1]}/C={o['vars'][0]}: {ts[-1] / ts[0]:.2f}", file=stdout)
    print(f"wrote {path}", file=stdout)
    return EXIT_OK


def cmd_simulate(o, stdout):
    out = _prepare_out(o["out"])
    rng = Rng(o["seed"])
    if o["study"] in ("permutation", "both"):
        cfg = _sim_config(o, o["seq"] or 1000)
        report = run_permutation_study(cfg, trials=o["trials"], rng=rng.spawn(1))
        report.write_csv(os.path.join(out, "permutation.csv"))
        report.write_json(os.path.join(out, "permutation.json"))
        s = report.summary()
        for engine, stats in s["engines"].items():
            print(f"{engine:<8} MAE {stats['mae']['mean']:.4f} (std {stats['mae']['std']:.3g})  "
                  f"MAPE {stats['mape']['mean']:.3f} (std {stats['mape']['std']:.3g})", file=stdout)
    if o["study"] in ("cscaling", "both"):
        cfg = _sim_config(o, o["seq"] or 256, o["vars"])
        report = run_cscaling_study(cfg=cfg, rng=rng.spawn(2))
        report.write_csv(os.path.join(out, "cscaling.csv"))
        report.write_json(os.path.join(out, "cscaling.json"), timing=True)
        for engine in ("vi", "ordered"):
            print(f"{engine:<8} time ratio {timing_ratio(report, engine):.2f}", file=stdout)
    print(f"wrote results to {out}", file=stdout)
    return EXIT_OK


def cmd_forecast(o, stdout):
    names, X = read_csv_series(o["data"])
    rng = Rng(o["seed"])
    cfg = BranchConfig.random(rng.spawn(1), delta_long=o["delta_long"],
                              delta_short=o["delta_short"], delta_freq=o["delta_freq"])
    if o["agg"] != "mean":
        cfg.agg = (AggregatorSpec(o["agg"]) if o["agg"] == "sum"
                   else AggregatorSpec.attention(cfg.template.d_psi, rng.spawn(2)))
    res = run_forecast(X, cfg, GateParams(), train_frac=o["train_frac"], lam=o["lam"],
                       lookback=o["lookback"])
    out = _prepare_out(o["out"])
    pred_path = os.path.join(out, "predictions.csv")
    write_csv_series(pred_path, res.predictions, names)
    summary = {
        "start": res.start,
        "model": {"mae": res.metrics.mae, "mape": res.metrics.mape, "mse": res.metrics.mse},
        "persistence": {"mae": res.persistence.mae, "mape": res.persistence.mape,
                        "mse": res.persistence.mse},
    }
    with open(os.path.join(out, "forecast.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"model       MSE {res.metrics.mse:.6g}  MAE {res.metrics.mae:.6g}", file=stdout)
    print(f"persistence MSE {res.persistence.mse:.6g}  MAE {res.persistence.mae:.6g}", file=stdout)
    print(f"wrote {pred_path}", file=stdout)
    return EXIT_OK


COMMANDS = {"check": cmd_check, "bench": cmd_bench, "simulate": cmd_simulate,
            "forecast": cmd_forecast}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        opts = resolve(args)
        validate(args.command, opts)
    except (UsageError, ParseError, VI2DError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](opts, stdout)
    except ParseError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_IO
    except VI2DError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
