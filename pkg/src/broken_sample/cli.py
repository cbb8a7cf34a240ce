"""Command line entry point.

    broken-sample detect        run detectors on dataset files
    broken-sample roc           ROC sweep to CSV
    broken-sample power         power-vs-rho sweep to CSV
    broken-sample second-moment exact second-moment report to JSON
    broken-sample limit-law     limit-law draws to a binary file
    broken-sample replay        recompute archived detector reports

Exit codes: 0 success, 2 configuration error, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import asymptotics, detectors, harness
from .errors import ConfigError, DegenerateStatisticError
from .models import load_dataset, model_from_config


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["gaussian", "bernoulli", "discrete"],
                   default="gaussian")
    p.add_argument("--d", type=int, default=1, help="dimension (gaussian/bernoulli)")
    p.add_argument("--rho", type=float, default=0.9, help="pair correlation")
    p.add_argument("--q", type=float, default=0.5, help="Bernoulli success probability")
    p.add_argument("--joint", help="path to a JSON matrix for discrete models")
    p.add_argument("--config", help="JSON experiment config; overrides the flags")


def _model_config(args) -> dict:
    if args.model == "gaussian":
        return {"kind": "gaussian", "d": args.d, "rho": args.rho}
    if args.model == "bernoulli":
        return {"kind": "bernoulli", "d": args.d, "q": args.q, "rho": args.rho}
    if not args.joint:
        raise ConfigError("model: discrete models need --joint <matrix.json>")
    with open(args.joint) as fh:
        return {"kind": "discrete", "joint": json.load(fh)}


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    _add_model_flags(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None,
                   help="sets m = round(alpha * n) when --m is absent")
    p.add_argument("--detector", action="append", default=None,
                   help="repeatable; one of " + ", ".join(sorted(harness._DETECTORS)))
    p.add_argument("--r", type=int, default=10, help="spectral rank")
    p.add_argument("--w", type=int, default=100, help="histogram cells")
    p.add_argument("--p", type=int, default=1, choices=[1, 2], help="Wasserstein order")
    p.add_argument("--replicates", type=int, default=None,
                   help="finite-n replicates or limit-law draw count")
    p.add_argument("--type1", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--source", choices=["finite_n", "limit_law"], default=None)
    p.add_argument("--grid", default=None,
                   help="comma-separated sweep grid (rho values or FPR values)")


def _detector_specs(args) -> list[dict]:
    names = args.detector or ["lr", "t_eigen", "t_hist", "t_means", "trivial"]
    specs = []
    for name in names:
        det: dict = {"name": name}
        if name in ("t_inner", "t_eigen"):
            det["r"] = args.r
        if name == "t_hist":
            det["w"] = args.w
        if name == "wasserstein":
            det["p"] = args.p
        specs.append(det)
    return specs


def _sweep_config(args, variable: str) -> harness.ExperimentConfig:
    if args.config:
        cfg = harness.ExperimentConfig.from_json(args.config)
        if args.out:
            cfg.out = args.out
        return cfg
    m = args.m
    if m is None:
        m = round((args.alpha if args.alpha is not None else 1.0) * args.n)
    detectors_req = _detector_specs(args)
    source = args.source
    if source is None:
        # Finite-n is the only implemented source for the Wasserstein test.
        finite_only = {"wasserstein", "t_top", "t_inner"}
        source = "finite_n" if all(d["name"] in finite_only | {"trivial"}
                                   for d in detectors_req) else "limit_law"
    replicates = args.replicates
    if replicates is None:
        replicates = 400 if source == "finite_n" else 200_000
    grid = None
    if args.grid:
        grid = sorted(float(v) for v in args.grid.split(","))
    return harness.ExperimentConfig(
        model=_model_config(args), n=args.n, m=m, detectors=detectors_req,
        sweep={"variable": variable, "grid": grid}, replicates=replicates,
        type1=args.type1, seed=args.seed, source=source, out=args.out)


def _cmd_detect(args) -> int:
    dataset, model = load_dataset(args.xs, args.ys, args.meta)
    specs = []
    for name in args.detector or ["t_eigen"]:
        det = {"name": name}
        if name in ("t_inner", "t_eigen"):
            det["r"] = args.r
        if name == "t_hist":
            det["w"] = args.w
        if name == "wasserstein":
            det["p"] = args.p
            if args.threshold is not None:
                det["threshold"] = args.threshold
        specs.append(det)
    reports = harness.detect_reports(dataset, model, specs, model.config())
    out = sys.stdout if args.out is None else open(args.out, "w")
    try:
        for rep in reports:
            out.write(json.dumps(rep, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_roc(args) -> int:
    cfg = _sweep_config(args, "fpr")
    points = harness.run_roc(cfg)
    if not cfg.out:
        harness.write_curves_csv(sys.stdout, "roc", points)
    return 0


def _cmd_power(args) -> int:
    cfg = _sweep_config(args, "rho")
    points = harness.run_power_sweep(cfg)
    if not cfg.out:
        harness.write_curves_csv(sys.stdout, "power", points)
    return 0


def _cmd_second_moment(args) -> int:
    cfg = _sweep_config(args, "rho")
    report = harness.run_second_moment_report(cfg)
    if not cfg.out:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


def _cmd_limit_law(args) -> int:
    model = model_from_config(_model_config(args))
    alpha = args.alpha if args.alpha is not None else 1.0
    count = args.replicates or 1_000_000
    if args.law == "xi":
        values, mult, _ = model.spectrum_tail(args.tail_tol)
        if args.hypothesis == "h0":
            law = asymptotics.sample_xi(values, alpha, count, args.seed,
                                        tail_tol=args.tail_tol, multiplicities=mult)
        else:
            law = asymptotics.h1_limit_law("lr", values, alpha, count, args.seed,
                                           multiplicities=mult)
    elif args.law == "xi_r":
        values = model.spectrum(args.r).values
        if args.hypothesis == "h0":
            law = asymptotics.sample_xi_r(values, alpha, args.r, count, args.seed)
        else:
            law = asymptotics.h1_limit_law("t_eigen", values[: args.r], alpha,
                                           count, args.seed)
    else:
        mu = detectors.histogram_structure(model, args.w).mu
        if args.hypothesis == "h0":
            law = asymptotics.sample_hist_null(mu, alpha, count, args.seed)
        else:
            law = asymptotics.h1_limit_law("t_hist", mu, alpha, count, args.seed)
    asymptotics.write_draws(args.out, law)
    return 0


def _cmd_replay(args) -> int:
    results = harness.replay(args.xs, args.ys, args.meta, args.report)
    ok = True
    for entry in results:
        sys.stdout.write(json.dumps(entry, sort_keys=True) + "\n")
        ok = ok and entry["status"] == "ok"
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="broken-sample", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run detectors on dataset files")
    p.add_argument("--xs", required=True)
    p.add_argument("--ys", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--detector", action="append")
    p.add_argument("--r", type=int, default=10)
    p.add_argument("--w", type=int, default=100)
    p.add_argument("--p", type=int, default=1, choices=[1, 2])
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_detect)

    p = sub.add_parser("roc", help="ROC sweep")
    _add_sweep_flags(p)
    p.set_defaults(fn=_cmd_roc)

    p = sub.add_parser("power", help="power sweep over rho")
    _add_sweep_flags(p)
    p.set_defaults(fn=_cmd_power)

    p = sub.add_parser("second-moment", help="exact second-moment report")
    _add_sweep_flags(p)
    p.set_defaults(fn=_cmd_second_moment)

    p = sub.add_parser("limit-law", help="emit limit-law draws")
    _add_model_flags(p)
    p.add_argument("--law", choices=["xi", "xi_r", "hist"], required=True)
    p.add_argument("--hypothesis", choices=["h0", "h1"], default="h0")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--r", type=int, default=10)
    p.add_argument("--w", type=int, default=100)
    p.add_argument("--tail-tol", type=float, default=1e-14)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_limit_law)

    p = sub.add_parser("replay", help="recompute archived reports")
    p.add_argument("--xs", required=True)
    p.add_argument("--ys", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenerateStatisticError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
