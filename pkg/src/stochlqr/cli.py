"""Command-line entry point: ``stochlqr <command> [--config FILE] [--seed N] [--out PATH] [--format csv|json]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config, two_state_config
from .duality import closed_form_S, duality_check, kkt_residuals
from .errors import LqrError
from .harness import emit, render, run_algorithm, run_example1, run_sweep
from .matrix_pack import sym_indices, vech
from .model_based import are_residual, optimal_P, solve_are

KKT_TOL = 1e-6


def _load(args) -> ExperimentConfig:
    cfg = parse_config(Path(args.config)) if args.config else two_state_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(text: str, path) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def cmd_solve_are(args) -> int:
    cfg = _load(args)
    X, F = solve_are(cfg.system, cfg.cost, cfg.F0)
    res = are_residual(cfg.system, cfg.cost, X)
    if args.format == "json":
        text = json.dumps({"X": X.tolist(), "F": F.tolist(), "are_residual": res}, indent=2) + "\n"
    else:
        m, n = F.shape
        rows, cols = sym_indices(n)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"F_{i + 1}_{j + 1}" for i in range(m) for j in range(n)] + [f"X_{i + 1}_{j + 1}" for i, j in zip(rows, cols)] + ["are_residual"])
        w.writerow([_fmt(x) for x in F.ravel()] + [_fmt(x) for x in vech(X)] + [_fmt(res)])
        text = buf.getvalue()
    _out(text, args.out)
    return 0


def cmd_run(args) -> int:
    cfg = _load(args).with_algorithm(args.command)
    report = run_algorithm(cfg)
    emit(report, args.format, args.out)
    print(
        f"{cfg.algorithm}: {report.iterations} iterations, terminal |F - F*| = {report.terminal_error:.3e}",
        file=sys.stderr,
    )
    return 0


def _optimum(cfg):
    X, F = solve_are(cfg.system, cfg.cost, cfg.F0)
    P = optimal_P(cfg.system, cfg.cost, X)
    Gamma = cfg.pairs().gamma_matrix
    return F, P, Gamma


def cmd_kkt(args) -> int:
    cfg = _load(args)
    F, P, Gamma = _optimum(cfg)
    S = closed_form_S(cfg.system, F, Gamma, cfg.cost.gamma)
    r = kkt_residuals(S, F, P, np.zeros_like(P), cfg.system, cfg.cost, Gamma)
    ok = r.max() < KKT_TOL
    if args.format == "json":
        _out(json.dumps({**r.as_dict(), "ok": ok}, indent=2) + "\n", args.out)
    else:
        _out("residual,value\n" + "".join(f"{k},{_fmt(v)}\n" for k, v in r.as_dict().items()), args.out)
    return 0 if ok else 1


def cmd_duality(args) -> int:
    cfg = _load(args)
    Gamma = cfg.pairs().gamma_matrix
    d = duality_check(cfg.system, cfg.cost, Gamma, cfg.F0)
    ok = abs(d.gap) < KKT_TOL
    if args.format == "json":
        _out(json.dumps({"primal": d.primal, "dual": d.dual, "gap": d.gap, "ok": ok}, indent=2) + "\n", args.out)
    else:
        _out(f"primal,dual,gap\n{_fmt(d.primal)},{_fmt(d.dual)},{_fmt(d.gap)}\n", args.out)
    return 0 if ok else 1


def cmd_reproduce(args) -> int:
    res = run_example1()
    lines = ["quantity        computed      published   ok"]
    for c in res.comparisons:
        lines.append(f"{c.name:<14} {c.computed:>10.4f}   {c.expected:>10.4f}   {'yes' if c.ok else 'NO'}")
    lines.append(f"runtime: pi {res.pi.wall_time:.4f}s, mb-pd {res.mbpd.wall_time:.4f}s")
    if res.failures:
        lines.append(f"{len(res.failures)} comparison(s) outside tolerance: " + ", ".join(c.name for c in res.failures))
    print("\n".join(lines), file=sys.stderr if args.out else sys.stdout)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = args.format
        (out / f"example1_pi.{ext}").write_text(render(res.pi, ext))
        (out / f"example1_mbpd.{ext}").write_text(render(res.mbpd, ext))
    return 1 if res.failures else 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.algorithm:
        cfg = cfg.with_algorithm(args.algorithm)
    result = run_sweep(cfg, workers=args.workers)
    emit(result, args.format, args.out)
    for alpha, err in result.terminal_errors().items():
        print(f"alpha={alpha:g}: terminal mean error {err:.4e}", file=sys.stderr)
    for alpha, rep, msg in result.failures:
        print(f"alpha={alpha:g} run {rep} failed: {msg}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (defaults to the published two-state setup)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output path; stdout when omitted")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="stochlqr", description="Discounted stochastic LQR solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-are", parents=[common], help="optimal gain and value matrix").set_defaults(func=cmd_solve_are)
    for name, text in (
        ("pi", "model-based policy iteration"),
        ("mb-pd", "model-based primal-dual iteration"),
        ("mf-oppi", "model-free off-policy policy iteration"),
        ("mb-pd-mf", "trajectory-driven primal-dual iteration"),
    ):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=cmd_run)
    sub.add_parser("kkt-check", parents=[common], help="optimality residuals at the ARE solution").set_defaults(func=cmd_kkt)
    sub.add_parser("duality-check", parents=[common], help="primal and dual objectives at the optimum").set_defaults(func=cmd_duality)
    rep = sub.add_parser("reproduce", parents=[common], help="rerun a published worked example")
    rep.add_argument("example", choices=("example1",))
    rep.set_defaults(func=cmd_reproduce)
    sw = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep over noise scales")
    sw.add_argument("--algorithm", choices=("pi", "mb-pd", "mf-oppi", "mb-pd-mf"))
    sw.add_argument("--workers", type=int, help="parallel worker processes")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LqrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
