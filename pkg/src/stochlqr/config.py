"""Experiment configuration: a YAML document with four optional sections.

Grammar (every key optional; omitted keys take the defaults below)::

    algorithm: mf-oppi          # pi | mb-pd | mf-oppi | mb-pd-mf
    seed: 0
    system:
      A: [[0.5, 1.0], [0.25, 0.5]]
      B: [[1.0], [1.0]]
      noise_cov: [[1.0, 0.0], [0.0, 1.0]]
    cost:
      Q: [[1.0, 0.0], [0.0, 1.0]]
      R: [[1.0]]
      gamma: 0.7
    solver:
      F0: [[-1.0, 0.0]]
      epsilon: 1e-3             # per-algorithm default when omitted
      max_iter: 100
      K: 20                     # 20 for mf-oppi, 10 for mb-pd-mf
      N: 15
      r: 3
      initial_pairs: [[-1, 3, -2], [2, -1, -5], [-3, 3, -8]]
      amplitude: 10.0
    experiment:
      Y: 10
      alpha_grid: [0.0, 0.25, 0.5, 1.0]
      steps: null               # fixed iteration count per sweep run
      workers: 1

Matrices are nested row-major lists; a bare number is accepted for 1x1
matrices.  Numbers written without a decimal point, such as ``1e-3``, are
accepted even though YAML reads them as strings.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import LqrError
from .linear_model import CostSpec, InitialPairSet, LtiSystem
from . import mb_pd, mf_oppi, model_based

ALGORITHMS = ("pi", "mb-pd", "mf-oppi", "mb-pd-mf")

TWO_STATE_A = [[0.5, 1.0], [0.25, 0.5]]
TWO_STATE_B = [[1.0], [1.0]]
TWO_STATE_F0 = [[-1.0, 0.0]]

_SECTIONS = {
    "system": ("A", "B", "noise_cov"),
    "cost": ("Q", "R", "gamma"),
    "solver": ("F0", "epsilon", "max_iter", "K", "N", "r", "initial_pairs", "amplitude"),
    "experiment": ("Y", "alpha_grid", "steps", "workers"),
}
_TOP = ("algorithm", "seed") + tuple(_SECTIONS)


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field and source line when known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class ExperimentConfig:
    system: LtiSystem
    cost: CostSpec
    algorithm: str = "mf-oppi"
    F0: np.ndarray = field(default_factory=lambda: np.array(TWO_STATE_F0))
    epsilon: Optional[float] = None
    max_iter: int = 100
    K: Optional[int] = None
    N: int = 15
    initial_pairs: Optional[InitialPairSet] = None
    amplitude: float = mf_oppi.DEFAULT_AMPLITUDE
    seed: int = 0
    Y: int = 10
    alpha_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    steps: Optional[int] = None
    workers: int = 1

    @property
    def r(self) -> int:
        return self.pairs().r

    def pairs(self) -> InitialPairSet:
        if self.initial_pairs is not None:
            return self.initial_pairs
        return mb_pd.default_initial_pairs(self.system.n, self.system.m, self.seed)

    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return {
            "pi": model_based.DEFAULT_EPSILON,
            "mb-pd": model_based.DEFAULT_EPSILON,
            "mf-oppi": mf_oppi.DEFAULT_EPSILON,
            "mb-pd-mf": mb_pd.DEFAULT_EPSILON,
        }[self.algorithm]

    def resolved_K(self) -> int:
        if self.K is not None:
            return self.K
        return mb_pd.DEFAULT_K if self.algorithm == "mb-pd-mf" else mf_oppi.DEFAULT_K

    def with_algorithm(self, algorithm: str) -> "ExperimentConfig":
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm '{algorithm}'; expected one of {', '.join(ALGORITHMS)}", "algorithm")
        return replace(self, algorithm=algorithm)

    def with_noise(self, noise_cov) -> "ExperimentConfig":
        return replace(self, system=self.system.with_noise(noise_cov))


def two_state_config(**overrides) -> ExperimentConfig:
    """The published simulation setup (noise covariance defaults to the identity)."""
    sys = LtiSystem(np.array(TWO_STATE_A), np.array(TWO_STATE_B), np.eye(2))
    cost = CostSpec(np.eye(2), np.eye(1), 0.7)
    return replace(ExperimentConfig(sys, cost), **overrides)


def _line_map(text: str) -> dict[str, int]:
    """Map dotted key paths to 1-based source lines using the composed node tree."""
    lines: dict[str, int] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    walk(root, "")
    return lines


class _Reader:
    def __init__(self, data: dict, lines: dict[str, int]):
        self.data = data
        self.lines = lines

    def fail(self, msg: str, path: str):
        raise ConfigError(msg, path, self.lines.get(path))

    def get(self, section: Optional[str], key: str):
        src = self.data if section is None else (self.data.get(section) or {})
        return src.get(key, None), (key if section is None else f"{section}.{key}")

    def number(self, value, path: str) -> float:
        if isinstance(value, bool):
            self.fail("expected a number, got a boolean", path)
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        self.fail(f"expected a number, got {value!r}", path)

    def integer(self, value, path: str, minimum: int) -> int:
        x = self.number(value, path)
        if x != int(x) or x < minimum:
            self.fail(f"expected an integer >= {minimum}, got {value!r}", path)
        return int(x)

    def matrix(self, value, path: str) -> np.ndarray:
        if not isinstance(value, list):
            return np.array([[self.number(value, path)]])
        rows = value if value and isinstance(value[0], list) else [value]
        if any(not isinstance(r, list) for r in rows):
            self.fail("mixes nested and flat rows", path)
        width = {len(r) for r in rows}
        if len(width) != 1 or 0 in width:
            self.fail("rows must be nonempty and of equal length", path)
        return np.array([[self.number(x, path) for x in r] for r in rows])


def parse_config(source) -> ExperimentConfig:
    """Parse and validate a configuration from a path or from YAML text."""
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and os.path.isfile(source)):
        text = Path(source).read_text()
    else:
        text = str(source)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line=None if mark is None else mark.line + 1) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    rd = _Reader(data, _line_map(text))

    for key in data:
        if key not in _TOP:
            rd.fail("unknown key", str(key))
    for section, keys in _SECTIONS.items():
        body = data.get(section)
        if body is None:
            continue
        if not isinstance(body, dict):
            rd.fail("section must be a mapping", section)
        for key in body:
            if key not in keys:
                rd.fail("unknown key", f"{section}.{key}")

    base = two_state_config()
    kw: dict[str, Any] = {}

    if "algorithm" in data:
        alg, path = rd.get(None, "algorithm")
        if alg is None or str(alg).strip() == "":
            rd.fail("algorithm must not be empty", path)
        if alg not in ALGORITHMS:
            rd.fail(f"unknown algorithm '{alg}'; expected one of {', '.join(ALGORITHMS)}", path)
        kw["algorithm"] = alg

    seed, path = rd.get(None, "seed")
    if seed is not None:
        kw["seed"] = rd.integer(seed, path, 0)

    mats = {}
    for section, key, default in (
        ("system", "A", base.system.A),
        ("system", "B", base.system.B),
        ("cost", "Q", base.cost.Q),
        ("cost", "R", base.cost.R),
    ):
        value, path = rd.get(section, key)
        mats[key] = (default if value is None else rd.matrix(value, path), path)
    n, m = mats["B"][0].shape
    for key, shape in (("A", (n, n)), ("Q", (n, n)), ("R", (m, m))):
        M, path = mats[key]
        if M.shape != shape:
            rd.fail(f"expected shape {shape[0]}x{shape[1]} to match B ({n}x{m}), got {M.shape[0]}x{M.shape[1]}", path)

    value, path = rd.get("system", "noise_cov")
    W = np.eye(n) if value is None else rd.matrix(value, path)
    if W.shape != (n, n):
        rd.fail(f"expected shape {n}x{n}, got {W.shape[0]}x{W.shape[1]}", path)

    value, path = rd.get("cost", "gamma")
    gamma = base.cost.gamma if value is None else rd.number(value, path)
    if not 0.0 < gamma < 1.0:
        rd.fail(f"gamma must lie in the open interval (0, 1), got {gamma:g}", path)

    try:
        kw["system"] = LtiSystem(mats["A"][0], mats["B"][0], W)
    except (ValueError, LqrError) as exc:
        rd.fail(str(exc), "system")
    try:
        kw["cost"] = CostSpec(mats["Q"][0], mats["R"][0], gamma)
    except (ValueError, LqrError) as exc:
        rd.fail(str(exc), "cost")

    value, path = rd.get("solver", "F0")
    if value is not None:
        F0 = rd.matrix(value, path)
    elif (n, m) == (2, 1):
        F0 = np.array(TWO_STATE_F0)
    else:
        F0 = np.zeros((m, n))
    if F0.shape != (m, n):
        rd.fail(f"expected shape {m}x{n}, got {F0.shape[0]}x{F0.shape[1]}", path)
    kw["F0"] = F0

    value, path = rd.get("solver", "epsilon")
    if value is not None:
        eps = rd.number(value, path)
        if eps <= 0:
            rd.fail("epsilon must be positive", path)
        kw["epsilon"] = eps
    for key, minimum in (("max_iter", 1), ("K", 1), ("N", 1)):
        value, path = rd.get("solver", key)
        if value is not None:
            kw[key] = rd.integer(value, path, minimum)
    value, path = rd.get("solver", "amplitude")
    if value is not None:
        kw["amplitude"] = rd.number(value, path)

    value, path = rd.get("solver", "initial_pairs")
    if value is not None:
        V = rd.matrix(value, path)
        if V.shape[1] != n + m:
            rd.fail(f"each pair needs {n + m} entries [z; u], got {V.shape[1]}", path)
        try:
            kw["initial_pairs"] = InitialPairSet(V)
        except LqrError as exc:
            rd.fail(str(exc), path)
    r_value, r_path = rd.get("solver", "r")
    if r_value is not None:
        r = rd.integer(r_value, r_path, 1)
        pairs = kw.get("initial_pairs")
        if pairs is None:
            if (n, m) != (2, 1) or r != 3:
                rd.fail("r other than the published 3 pairs requires solver.initial_pairs", r_path)
        elif pairs.r != r:
            rd.fail(f"r = {r} but {pairs.r} initial pairs are listed", r_path)

    for key, minimum in (("Y", 1), ("workers", 1)):
        value, path = rd.get("experiment", key)
        if value is not None:
            kw[key] = rd.integer(value, path, minimum)
    value, path = rd.get("experiment", "steps")
    if value is not None:
        kw["steps"] = rd.integer(value, path, 1)
    value, path = rd.get("experiment", "alpha_grid")
    if value is not None:
        grid = value if isinstance(value, list) else [value]
        alphas = tuple(rd.number(a, path) for a in grid)
        if not alphas:
            rd.fail("alpha_grid must not be empty", path)
        if any(a < 0 for a in alphas):
            rd.fail("noise scales must be nonnegative", path)
        kw["alpha_grid"] = alphas

    return replace(base, **kw)
