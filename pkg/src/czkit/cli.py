"""Command line interface.

Subcommands: ``verify`` (run the invariant suites), ``scaling`` (norm
growth study), ``grids`` (grid probability study), ``norms`` (estimate
the norm of a kernel file).  Exit codes: 0 success, 1 verification
failure, 2 configuration error, 3 I/O error.

Reports land in the output directory as CSV and JSON lines (byte stable)
plus plot data and rendered PNG figures; ``--no-figures`` suppresses the
figure rendering.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .experiments import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    format_float,
    parse_config,
    run_grid_study,
    run_scaling,
    run_verification_suite,
)
from .fields import MixedNormDescriptor
from .kernel import load_kernel
from .norms import operator_norm_lower_bound, spectral_norm_oracle

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="czkit",
        description="truncated singular integral toolkit: verification suites, "
                    "scaling studies, grid statistics, norm estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.add_argument("--out", default=None)
    p_verify.add_argument("--no-figures", action="store_true")

    p_scaling = sub.add_parser("scaling", help="norm growth across the N grid")
    p_scaling.add_argument("--config", required=True)
    p_scaling.add_argument("--seed", type=int, default=None)
    p_scaling.add_argument("--out", default=None)
    p_scaling.add_argument("--no-figures", action="store_true")

    p_grids = sub.add_parser("grids", help="dyadic grid probability study")
    p_grids.add_argument("--n", type=int, required=True)
    p_grids.add_argument("--eps", type=float, action="append", required=True,
                         help="boundary layer width; repeatable")
    p_grids.add_argument("--trials", type=int, default=10_000)
    p_grids.add_argument("--seed", type=int, default=0)
    p_grids.add_argument("--out", default="czkit-out")
    p_grids.add_argument("--no-figures", action="store_true")

    p_norms = sub.add_parser("norms", help="estimate the norm of a kernel file")
    p_norms.add_argument("--file", required=True)
    p_norms.add_argument("--s", type=float, required=True)
    p_norms.add_argument("--p", type=float, required=True)
    p_norms.add_argument("--d", type=int, default=1)
    p_norms.add_argument("--restarts", type=int, default=8)
    p_norms.add_argument("--seed", type=int, default=0)
    return parser


def _ensure_out(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "out", None):
        cfg.out = args.out
    cfg.validate()
    return cfg


def _cmd_verify(args) -> int:
    cfg = _load_config(args)
    report = run_verification_suite(cfg)
    out = _ensure_out(cfg.out)
    emit_report(report, "csv", os.path.join(out, "verify.csv"))
    emit_report(report, "json-lines", os.path.join(out, "verify.jsonl"))
    if not args.no_figures:
        from .plots import render_verification_figure

        render_verification_figure(report, os.path.join(out, "verify.png"))
    for e in report.entries:
        status = "PASS" if e.passed else "FAIL"
        print(f"[{status}] {e.suite}:{e.name} achieved={format_float(e.achieved)} "
              f"bound={format_float(e.bound)}")
    if not report.passed:
        names = ", ".join(f"{e.suite}:{e.name}" for e in report.failures())
        print(f"verification FAILED: {names}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    print(f"verification passed ({len(report.entries)} checks) -> {out}")
    return EXIT_OK


def _cmd_scaling(args) -> int:
    cfg = _load_config(args)
    report = run_scaling(cfg)
    out = _ensure_out(cfg.out)
    emit_report(report, "csv", os.path.join(out, "scaling.csv"))
    emit_report(report, "json-lines", os.path.join(out, "scaling.jsonl"))
    emit_report(report, "plot-data", os.path.join(out, "scaling.dat"))
    if not args.no_figures:
        from .plots import render_scaling_figure

        render_scaling_figure(report, os.path.join(out, "scaling.png"))
    for row in report.rows:
        flag = "" if row["converged"] else "  [not converged; excluded from fit]"
        print(f"N={row['N']} n={format_float(row['n_index'])} "
              f"norm={format_float(row['norm_lower_bound'])} "
              f"trivial={format_float(row['trivial_bound'])}{flag}")
    if math.isnan(report.theta_hat):
        print("theta_hat: undefined (fewer than two usable rows)")
    else:
        print(f"theta_hat={format_float(report.theta_hat)} "
              f"residual={format_float(report.residual)}")
    print(f"reports -> {out}")
    return EXIT_OK


def _cmd_grids(args) -> int:
    if args.n < 2:
        raise ConfigError("need at least two points")
    for eps in args.eps:
        if not 0.0 < eps <= 1.0:
            raise ConfigError("eps must lie in (0, 1]")
    if args.trials < 1:
        raise ConfigError("need at least one trial")
    report = run_grid_study(args.n, sorted(args.eps), args.trials, args.seed)
    out = _ensure_out(args.out)
    emit_report(report, "csv", os.path.join(out, "grids.csv"))
    emit_report(report, "json-lines", os.path.join(out, "grids.jsonl"))
    if not args.no_figures:
        from .plots import render_grid_figure

        render_grid_figure(report, os.path.join(out, "grids.png"))
    for row in report.rows:
        print(json.dumps({k: (format_float(v) if isinstance(v, float) else v)
                          for k, v in row.items()}, sort_keys=True))
    print(f"reports -> {out}")
    return EXIT_OK


def _cmd_norms(args) -> int:
    try:
        kernel = load_kernel(args.file)
    except FileNotFoundError as exc:
        raise OSError(str(exc)) from exc
    desc = MixedNormDescriptor(args.s, args.p, args.d)
    result = {
        "file": args.file,
        "N": kernel.space.n_points,
        "s": args.s,
        "p": args.p,
        "d": args.d,
        "truncation_index": kernel.truncation_index,
    }
    if args.s == 2.0 and args.p == 2.0:
        result["spectral_norm"] = spectral_norm_oracle(kernel)
    if args.p == 1.0 or math.isinf(args.p):
        # the duality-map iteration is not monotone at the endpoint inner
        # exponents; only the brute-force oracle is available there
        from .norms import operator_norm_oracle_small

        result["norm_lower_bound"] = operator_norm_oracle_small(kernel, desc)
        result["converged"] = True
        result["method"] = "grid-search-oracle"
    else:
        est = operator_norm_lower_bound(kernel, desc, restarts=args.restarts,
                                        seed=args.seed)
        result["norm_lower_bound"] = est.estimate
        result["converged"] = est.converged
        result["method"] = "power-iteration"
    print(json.dumps({k: (format_float(v) if isinstance(v, float) else v)
                      for k, v in result.items()}, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "verify": _cmd_verify,
        "scaling": _cmd_scaling,
        "grids": _cmd_grids,
        "norms": _cmd_norms,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
