"""Experiment driver: single runs, the scalar worked example, noise sweeps and output files."""
from __future__ import annotations

import csv
import io
import json
import sys as pysys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .duality import EquivalenceRow, verify_equivalence
from .errors import LqrError
from .linear_model import CostSpec, LtiSystem
from .matrix_pack import sym_indices, vech
from .mb_pd import mb_pd_model_free_run, mb_pd_run
from .mf_oppi import mf_oppi_run
from .model_based import classical_pi, solve_are
from .trace import IterateTrace

EXAMPLE1_TOL = 5e-4
SWEEP_STEPS = {"pi": 10, "mb-pd": 10, "mf-oppi": 10, "mb-pd-mf": 15}

# Published four-step tables of the scalar example
EXAMPLE1_X = (6.6666, 4.0675, 3.9353, 3.9345)
EXAMPLE1_F = (-1.6471, -1.4801, -1.4673, -1.4673)
EXAMPLE1_XP = (6.6667, 4.0675, 3.9353, 3.9345)
EXAMPLE1_P = (
    ((19.6666, 9.3333), (9.3333, 5.6667)),
    ((12.3889, 5.6945), (5.6945, 3.8472)),
    ((12.0188, 5.5094), (5.5094, 3.7547)),
    ((12.0116, 5.5083), (5.5083, 3.7542)),
)


@dataclass
class RunReport:
    trace: IterateTrace
    terminal_error: float
    seed: Optional[int] = None
    wall_time: float = 0.0

    @property
    def algorithm(self) -> str:
        return self.trace.algorithm

    @property
    def iterations(self) -> int:
        return self.trace.iterations

    @property
    def terminal_gain(self) -> np.ndarray:
        return self.trace.final_gain

    def to_dict(self, include_timing: bool = False) -> dict:
        t = self.trace
        out = {
            "algorithm": t.algorithm,
            "value_name": t.value_name,
            "iterations": t.iterations,
            "converged": t.converged,
            "seed": self.seed,
            "terminal_gain": t.final_gain.tolist(),
            "terminal_error": self.terminal_error,
            "gains": [g.tolist() for g in t.gains],
            "values": [v.tolist() for v in t.values],
            "deviations": list(t.deviations),
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        trace = IterateTrace(
            d["algorithm"],
            d["value_name"],
            [np.array(g, dtype=float) for g in d["gains"]],
            [np.array(v, dtype=float) for v in d["values"]],
            [float(x) for x in d["deviations"]],
            bool(d["converged"]),
        )
        return cls(trace, float(d["terminal_error"]), d.get("seed"), float(d.get("wall_time", 0.0)))


def _report(trace: IterateTrace, sys: LtiSystem, cost: CostSpec, F0, seed, started: float) -> RunReport:
    wall = time.perf_counter() - started
    _, Fstar = solve_are(sys, cost, F0)
    err = float(np.linalg.norm(trace.final_gain - Fstar))
    return RunReport(trace, err, seed, wall)


def _run_trace(cfg: ExperimentConfig, seed, epsilon, max_iter) -> IterateTrace:
    sys, cost, F0 = cfg.system, cfg.cost, cfg.F0
    if cfg.algorithm == "pi":
        return classical_pi(sys, cost, F0, epsilon, max_iter)
    if cfg.algorithm == "mb-pd":
        return mb_pd_run(sys, cost, F0, epsilon, max_iter)
    if cfg.algorithm == "mf-oppi":
        return mf_oppi_run(
            sys, cost, F0, K=cfg.resolved_K(), N=cfg.N, epsilon=epsilon,
            max_iter=max_iter, seed=seed, amplitude=cfg.amplitude,
        )
    return mb_pd_model_free_run(
        sys, cost, F0, cfg.pairs(), K=cfg.resolved_K(), N=cfg.N, epsilon=epsilon,
        max_iter=max_iter, seed=seed,
    )


def run_algorithm(cfg: ExperimentConfig, seed: Optional[int] = None) -> RunReport:
    """Run the configured algorithm once and score it against a fresh ARE solve.

    ``cfg.steps`` switches to a fixed number of iterations with no stopping rule.
    """
    seed = cfg.seed if seed is None else seed
    if cfg.steps is not None:
        epsilon, max_iter = None, cfg.steps
    else:
        epsilon, max_iter = cfg.resolved_epsilon(), cfg.max_iter
    started = time.perf_counter()
    trace = _run_trace(cfg, seed, epsilon, max_iter)
    return _report(trace, cfg.system, cfg.cost, cfg.F0, seed, started)


@dataclass(frozen=True)
class Comparison:
    name: str
    computed: float
    expected: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.computed - self.expected) <= self.tolerance


@dataclass
class Example1Result:
    pi: RunReport
    mbpd: RunReport
    equivalence: list[EquivalenceRow]
    comparisons: list[Comparison]

    @property
    def failures(self) -> list[Comparison]:
        return [c for c in self.comparisons if not c.ok]


def example1_problem() -> tuple[LtiSystem, CostSpec, np.ndarray]:
    sys = LtiSystem(np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]]))
    return sys, CostSpec(np.eye(1), np.eye(1), 0.7), np.array([[-1.0]])


def run_example1() -> Example1Result:
    """Four steps of policy iteration and of the primal-dual method on the scalar example.

    The starting gain has a closed-loop pole on the unit circle, so the
    primal-dual run uses the discounted admissibility test.
    """
    sys, cost, F0 = example1_problem()
    t0 = time.perf_counter()
    pi = classical_pi(sys, cost, F0, epsilon=None, max_iter=4)
    pi_report = _report(pi, sys, cost, F0, None, t0)
    t0 = time.perf_counter()
    pd = mb_pd_run(sys, cost, F0, epsilon=None, max_iter=4, stability="discounted")
    pd_report = _report(pd, sys, cost, F0, None, t0)

    cmp: list[Comparison] = []
    for s in range(1, 5):
        cmp.append(Comparison(f"X^{s}", float(pi.values[s - 1][0, 0]), EXAMPLE1_X[s - 1], EXAMPLE1_TOL))
        cmp.append(Comparison(f"F^{s}", float(pi.gains[s][0, 0]), EXAMPLE1_F[s - 1], EXAMPLE1_TOL))
    for s in range(1, 5):
        P = pd.values[s - 1]
        for i, j in ((0, 0), (0, 1), (1, 1)):
            cmp.append(Comparison(f"P_p^{s}[{i},{j}]", float(P[i, j]), EXAMPLE1_P[s - 1][i][j], EXAMPLE1_TOL))
        Fb = np.vstack([np.eye(1), pd.gains[s - 1]])
        cmp.append(Comparison(f"X_p^{s}", float((Fb.T @ P @ Fb)[0, 0]), EXAMPLE1_XP[s - 1], EXAMPLE1_TOL))
        cmp.append(Comparison(f"F_p^{s}", float(pd.gains[s][0, 0]), EXAMPLE1_F[s - 1], EXAMPLE1_TOL))
    eq = verify_equivalence(pi, pd)
    for row in eq:
        cmp.append(Comparison(f"|F^{row.s} - F_p^{row.s}|", row.gain_deviation, 0.0, 1e-9))
    return Example1Result(pi_report, pd_report, eq, cmp)


@dataclass(frozen=True)
class SweepRow:
    algorithm: str
    alpha: float
    s: int
    mean_gain: np.ndarray
    mean_error: float
    runs: int


@dataclass
class SweepResult:
    algorithm: str
    steps: int
    rows: list[SweepRow]
    failures: list[tuple[float, int, str]] = field(default_factory=list)

    def terminal_errors(self) -> dict[float, float]:
        out = {}
        for row in self.rows:
            if row.s == self.steps:
                out[row.alpha] = row.mean_error
        return out


def _sweep_cell(args):
    cfg, alpha, rep, steps = args
    cfg = cfg.with_noise(alpha * np.eye(cfg.system.n))
    seed = np.random.SeedSequence(cfg.seed, spawn_key=(rep,))
    try:
        trace = _run_trace(cfg, seed, None, steps)
    except (LqrError, np.linalg.LinAlgError) as exc:
        return alpha, rep, None, f"{type(exc).__name__}: {exc}"
    return alpha, rep, np.array(trace.gains), None


def run_sweep(cfg: ExperimentConfig, workers: Optional[int] = None) -> SweepResult:
    """Monte-Carlo sweep over noise covariances ``alpha * I``.

    Each of the ``Y`` repetitions runs a fixed number of steps.  Repetition
    ``y`` uses the same derived seed at every ``alpha``, so the noise draws
    differ across the grid only by their scale.  Failed runs are recorded
    and left out of the averages.
    """
    if cfg.Y < 1:
        raise ValueError("Y must be at least 1")
    if not cfg.alpha_grid:
        raise ValueError("alpha_grid must not be empty")
    steps = cfg.steps if cfg.steps is not None else SWEEP_STEPS[cfg.algorithm]
    _, Fstar = solve_are(cfg.system, cfg.cost, cfg.F0)
    jobs = [(cfg, float(a), y, steps) for a in cfg.alpha_grid for y in range(cfg.Y)]
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]

    rows: list[SweepRow] = []
    failures = []
    for a in cfg.alpha_grid:
        runs = []
        for alpha, rep, gains, err in results:
            if alpha != float(a):
                continue
            if err is not None:
                failures.append((alpha, rep, err))
            else:
                runs.append(gains)
        if not runs:
            continue
        G = np.stack(runs)  # (runs, steps + 1, m, n)
        errs = np.linalg.norm(G - Fstar, axis=(2, 3))
        for s in range(steps + 1):
            rows.append(SweepRow(cfg.algorithm, float(a), s, G[:, s].mean(axis=0), float(errs[:, s].mean()), len(runs)))
    return SweepResult(cfg.algorithm, steps, rows, failures)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_header(trace: IterateTrace) -> list[str]:
    m, n = trace.gains[0].shape
    d = n if trace.value_name == "X" else n + m
    rows, cols = sym_indices(d)
    head = ["s"] + [f"F_{i + 1}_{j + 1}" for i in range(m) for j in range(n)]
    head += [f"{trace.value_name}_{i + 1}_{j + 1}" for i, j in zip(rows, cols)]
    return head + ["deviation"]


def trace_rows(trace: IterateTrace) -> list[list[str]]:
    out = []
    for s in range(1, trace.iterations + 1):
        row = [str(s)] + [_fmt(x) for x in trace.gains[s].ravel()]
        row += [_fmt(x) for x in vech(trace.values[s - 1])]
        out.append(row + [_fmt(trace.deviations[s - 1])])
    return out


def sweep_header(m: int, n: int) -> list[str]:
    return ["algorithm", "alpha", "s"] + [f"F_{i + 1}_{j + 1}" for i in range(m) for j in range(n)] + ["mean_error", "runs"]


def _write(text: str, path) -> None:
    if path is None or str(path) == "-":
        pysys.stdout.write(text)
    else:
        Path(path).write_text(text)


def render(obj, fmt: str = "csv", include_timing: bool = False) -> str:
    """Serialize a run report or sweep result; identical inputs give identical text."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format '{fmt}'; expected csv or json")
    if isinstance(obj, SweepResult):
        return _render_sweep(obj, fmt)
    if fmt == "json":
        return json.dumps(obj.to_dict(include_timing), indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(obj.trace))
    w.writerows(trace_rows(obj.trace))
    return buf.getvalue()


def _render_sweep(res: SweepResult, fmt: str) -> str:
    if fmt == "json":
        d = {
            "algorithm": res.algorithm,
            "steps": res.steps,
            "rows": [
                {"alpha": r.alpha, "s": r.s, "mean_gain": r.mean_gain.tolist(), "mean_error": r.mean_error, "runs": r.runs}
                for r in res.rows
            ],
            "terminal_errors": [[a, e] for a, e in res.terminal_errors().items()],
            "failures": [list(f) for f in res.failures],
        }
        return json.dumps(d, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if res.rows:
        m, n = res.rows[0].mean_gain.shape
        w.writerow(sweep_header(m, n))
    for r in res.rows:
        w.writerow([r.algorithm, _fmt(r.alpha), str(r.s)] + [_fmt(x) for x in r.mean_gain.ravel()] + [_fmt(r.mean_error), str(r.runs)])
    return buf.getvalue()


def emit(obj, fmt: str = "csv", path=None, include_timing: bool = False) -> None:
    """Write ``render(obj, fmt)`` to ``path`` (stdout when ``None`` or ``-``)."""
    _write(render(obj, fmt, include_timing), path)


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))
