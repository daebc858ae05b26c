"""Command-line interface.

Subcommands: ``optimize`` (discrete methods), ``simulate`` (ODE/SDE
trajectories), ``variance-ode``, ``isometry``, ``warp``, ``verify`` (the
invariant battery), ``rates`` (bound tables).  Config-driven commands read
a JSON document; see the README for the schema.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from memgrad import continuum, harness, problems, theory, verify


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="path to a JSON config")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="output format (default csv)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent runs")


def _load_config(args, default=None) -> harness.ExperimentConfig:
    if args.config is not None:
        cfg = harness.ExperimentConfig.from_file(args.config)
    elif default is not None:
        cfg = default
    else:
        raise SystemExit("--config is required for this command")
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    if args.out is not None:
        cfg.output = dict(cfg.output, directory=str(args.out))
    return cfg


def _emit_formats(args) -> tuple:
    return ("csv", "json") if args.format == "json" else ("csv",)


def _run_config_command(args, expected_kind: str) -> int:
    cfg = _load_config(args)
    kind = cfg.run.get("kind", "optimize")
    if kind != expected_kind:
        raise SystemExit(
            f"config declares run.kind={kind!r}; this command runs {expected_kind!r}"
        )
    result = harness.run_experiment(cfg, threads=args.threads)
    out_dir = Path(cfg.output.get("directory", "out"))
    written = harness.emit(result, out_dir, formats=_emit_formats(args))
    for path in written:
        print(f"wrote {path}")
    n_div = sum(1 for t in result.traces if t.status != "completed")
    print(f"{len(result.traces)} runs ({n_div} diverged)")
    failures = 0
    for entry in cfg.bounds:
        spec = theory.BoundSpec(entry["kind"], entry.get("params", {}))
        report = harness.check_bounds(result.traces, spec, method=entry["method"])
        line = (
            f"bound {entry['kind']} on {entry['method']}: {report.status}"
            f" (checked={report.n_checked}, violations={report.n_violations})"
        )
        print(line)
        if report.status == "violations":
            failures += 1
    return 1 if failures else 0


def _cmd_optimize(args) -> int:
    return _run_config_command(args, "optimize")


def _cmd_simulate(args) -> int:
    return _run_config_command(args, "simulate")


def _cmd_variance_ode(args) -> int:
    states = continuum.integrate_variance_ode(
        args.model, args.t0, args.t_end, args.h, args.lam, args.sigma2,
        record_stride=args.stride,
    )
    p3 = np.array([s.p3 for s in states])
    print(f"{args.model}: sup p3 = {p3.max():.6g}, p3({states[-1].t:g}) = {p3[-1]:.6g}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "variance_ode.csv"
        lines = ["t,p1,p2,p3"]
        for s in states:
            lines.append(
                f"{s.t:.17g},{s.p1:.17g},{s.p2:.17g},{s.p3:.17g}"
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {path}")
    return 0


def _cmd_isometry(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    var, se = continuum.ito_isometry_mc(args.power, args.t, args.paths, args.h, rng)
    target = args.t ** (2 * args.power + 1) / (2 * args.power + 1)
    z = (var - target) / se if se > 0 else float("nan")
    print(
        f"power={args.power:g} t={args.t:g}: variance={var:.6g} "
        f"stderr={se:.3g} closed-form={target:.6g} z={z:+.2f}"
    )
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "isometry.csv"
        path.write_text(
            "power,t,n_paths,h,variance,stderr,closed_form\n"
            f"{args.power:.17g},{args.t:.17g},{args.paths},{args.h:.17g},"
            f"{var:.17g},{se:.17g},{target:.17g}\n",
            encoding="utf-8",
        )
        print(f"wrote {path}")
    return 0


def _cmd_warp(args) -> int:
    coeffs = [float(v) for v in args.coeffs.split(",")]
    obj = problems.quadratic_diag(coeffs)
    gap = continuum.warp_equivalence_check(
        obj, args.p, args.t_end, args.h, compare_from=args.compare_from
    )
    print(f"p={args.p:g} t_end={args.t_end:g} h={args.h:g}: sup path gap = {gap:.6g}")
    return 0


def _cmd_verify(args) -> int:
    cfg = _load_config(args, default=verify.default_verify_config())
    checks, result = verify.run_verification(cfg, threads=args.threads)
    out_dir = Path(cfg.output.get("directory", "verify_out"))
    written = harness.emit(result, out_dir, formats=("csv", "json"))
    report = {
        "config_sha256": cfg.config_hash(),
        "checks": [
            {"name": c.name, "passed": bool(c.passed), "detail": c.detail}
            for c in checks
        ],
    }
    report_path = out_dir / "verify_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    written.append(report_path)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    for path in written:
        print(f"wrote {path}")
    return 0 if all(c.passed for c in checks) else 1


def _cmd_rates(args) -> int:
    params = json.loads(args.params)
    spec = theory.BoundSpec(args.kind, params)
    indices = [float(v) for v in args.indices.split(",")]
    names = sorted(params)
    lines = ["kind," + ",".join(names) + ",t_or_k,bound"]
    for idx in indices:
        row = [args.kind] + [f"{float(params[n]):.17g}" for n in names]
        row += [f"{idx:.17g}", f"{spec.evaluate(idx):.17g}"]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "rates.csv"
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memgrad",
        description="Gradient-memory optimization lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run discrete optimization methods")
    _common_flags(p)
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("simulate", help="integrate ODE/SDE trajectories")
    _common_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("variance-ode", help="integrate the second-moment ODEs")
    _common_flags(p)
    p.add_argument("--model", choices=continuum.VARIANCE_MODELS, required=True)
    p.add_argument("--t0", type=float, default=0.1)
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--stride", type=int, default=100)
    p.set_defaults(func=_cmd_variance_ode)

    p = sub.add_parser("isometry", help="Monte-Carlo check of the noise-integral variance")
    _common_flags(p)
    p.add_argument("--power", type=float, required=True, help="integrand power p")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=10**5)
    p.add_argument("--h", type=float, default=1e-3)
    p.set_defaults(func=_cmd_isometry)

    p = sub.add_parser("warp", help="time-warp equivalence of memory and momentum paths")
    _common_flags(p)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--t-end", type=float, default=4.0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--coeffs", default="0.02,0.005",
                   help="diagonal quadratic coefficients")
    p.add_argument("--compare-from", type=float, default=0.1)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("verify", help="run the full invariant suite")
    _common_flags(p)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("rates", help="tabulate closed-form bounds as CSV")
    _common_flags(p)
    p.add_argument("--kind", choices=theory.BOUND_KINDS, required=True)
    p.add_argument("--params", required=True, help="bound parameters as JSON")
    p.add_argument("--indices", required=True,
                   help="comma-separated iteration counts or times")
    p.set_defaults(func=_cmd_rates)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
