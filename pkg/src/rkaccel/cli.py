"""Command-line entry point: ``rkaccel {generate,solve,bench,compare}``.

Exit codes: 0 converged (or success), 2 stopped at max_iters, 3 diverged,
1 usage or I/O error.  ``RKACCEL_OUT_DIR`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .errors import KaczmarzError
from .probgen import FAMILIES, make_instance, save_instance
from .solvers import STEP_RULES

EXIT_CODES = {"converged": 0, "max_iters": 2, "diverged": 3}
OUT_ENV = "RKACCEL_OUT_DIR"


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "rkaccel_out"))


def _instance_ref(text: str):
    # a JSON object is a generator spec, anything else a directory path
    if text.lstrip().startswith("{"):
        return json.loads(text)
    return text


def _step_rule(text: str):
    if text in STEP_RULES:
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"step rule must be one of {STEP_RULES} or a positive number")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rkaccel", description="Randomized Kaczmarz solvers and benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance directory")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, help="columns (defaults to m)")
    g.add_argument("--alpha", type=float, help="spectrum exponent for power_spectrum")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, help="instance directory")

    s = sub.add_parser("solve", help="run one solver and write its trace")
    s.add_argument("instance", help="instance directory or JSON generator spec")
    s.add_argument("--algorithm", choices=harness.ALGORITHMS, default="rk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step-rule", type=_step_rule, default="one_over_L")
    s.add_argument("--mu", type=float)
    s.add_argument("--tol", type=float, default=harness.DEFAULT_TOL)
    s.add_argument("--check-interval", type=int)
    s.add_argument("--max-iters", type=int, default=harness.DEFAULT_MAX_ITERS)
    s.add_argument("--alpha-reg", type=float, default=harness.ApkOptions.alpha_reg)
    s.add_argument("--refit-interval", type=int)
    s.add_argument("--warmup-sweeps", type=int, default=2)
    s.add_argument("--lam", type=float, help="ARK lambda (estimated by burn-in if omitted)")
    s.add_argument("--k2-multiplier", type=int, default=15)
    s.add_argument("--zeta", type=float, default=harness.AdaGradOptions.zeta)
    s.add_argument("--lambda0", type=float, default=harness.AdaGradOptions.lambda0)
    s.add_argument("--trace-out", type=Path, help="trace CSV path")

    b = sub.add_parser("bench", help="run every config listed in a JSON file")
    b.add_argument("config", type=Path, help='JSON: {"runs": [config, ...]} or a list of configs')
    b.add_argument("--out", type=Path, help="output directory")
    b.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("compare", help="summarise a directory of traces")
    c.add_argument("trace_dir", type=Path)
    c.add_argument("--csv", type=Path, help="also write the summary as CSV")
    return p


def _cmd_generate(args) -> int:
    n = args.n if args.n is not None else args.m
    inst = make_instance(args.family, args.m, n, args.seed, args.alpha)
    out = args.out or _default_out() / f"{args.family}_{args.m}x{n}_s{args.seed}"
    save_instance(inst, out)
    print(f"wrote {out} (kappa_frob = {inst.kappa_frob:.4g})")
    return 0


def _cmd_solve(args) -> int:
    config = harness.ExperimentConfig(
        instance=_instance_ref(args.instance),
        algorithm=args.algorithm,
        seed=args.seed,
        step_rule=args.step_rule,
        tol=args.tol,
        check_interval=args.check_interval,
        max_iters=args.max_iters,
        mu=args.mu,
        apk=harness.ApkOptions(args.alpha_reg, args.refit_interval, args.warmup_sweeps),
        ark=harness.ArkOptions(args.lam, args.k2_multiplier),
        adagrad=harness.AdaGradOptions(args.zeta, args.lambda0),
    )
    trace = harness.run(config)
    out = args.trace_out or _default_out() / f"{args.algorithm}_s{args.seed}.csv"
    harness.emit_trace(trace, out)
    print(f"{trace.algorithm}: {trace.terminal} after {trace.total_iterations} iterations, "
          f"residual {trace.final_residual:.3e}, {trace.wall_seconds:.3f}s -> {out}")
    return EXIT_CODES[trace.terminal]


def _load_bench(path: Path) -> list:
    doc = json.loads(path.read_text())
    runs = doc["runs"] if isinstance(doc, dict) else doc
    return [harness.ExperimentConfig.from_dict(r) for r in runs]


def _cmd_bench(args) -> int:
    configs = _load_bench(args.config)
    out = args.out or _default_out()
    traces, rows = harness.compare(configs, workers=args.workers)
    for i, (cfg, tr) in enumerate(zip(configs, traces)):
        harness.emit_trace(tr, out / f"{i:03d}_{cfg.name}_s{cfg.seed}.csv")
    (out / "summary.csv").write_text(harness.summary_csv(rows))
    text = harness.summary_text(rows)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_compare(args) -> int:
    paths = sorted(args.trace_dir.glob("*.csv"))
    traces = [harness.read_trace(p) for p in paths if p.name != "summary.csv"]
    rows = harness.summarize(traces)
    sys.stdout.write(harness.summary_text(rows))
    if args.csv:
        args.csv.write_text(harness.summary_csv(rows))
    return 0


COMMANDS = {"generate": _cmd_generate, "solve": _cmd_solve, "bench": _cmd_bench, "compare": _cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, KaczmarzError) as exc:
        print(f"rkaccel: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
