from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import settings

from stochlqr.linear_model import CostSpec, InitialPairSet, LtiSystem, spectral_radius

settings.register_profile("reproducible", derandomize=True, deadline=None)
settings.load_profile("reproducible")

TWO_STATE_A = np.array([[0.5, 1.0], [0.25, 0.5]])
TWO_STATE_B = np.array([[1.0], [1.0]])
TWO_STATE_F0 = np.array([[-1.0, 0.0]])
TWO_STATE_FSTAR = np.array([[-0.24460665562102632, -0.48921331124205264]])


@dataclass
class Instance:
    sys: LtiSystem
    cost: CostSpec
    F0: np.ndarray
    Gamma: np.ndarray


def two_state(noise=None) -> tuple[LtiSystem, CostSpec]:
    W = np.eye(2) if noise is None else np.asarray(noise, dtype=float)
    return LtiSystem(TWO_STATE_A, TWO_STATE_B, W), CostSpec(np.eye(2), np.eye(1), 0.7)


def example1(noise=1.0) -> tuple[LtiSystem, CostSpec]:
    return LtiSystem([[2.0]], [[1.0]], [[noise]]), CostSpec([[1.0]], [[1.0]], 0.7)


def random_psd(rng, n, floor=0.0):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + floor * np.eye(n)


def random_instance(rng: np.random.Generator, n: int | None = None, m: int | None = None) -> Instance:
    """Stabilizable instance built backwards from a stable closed loop: A = A_cl - B F0."""
    n = int(rng.integers(1, 5)) if n is None else n
    m = int(rng.integers(1, 3)) if m is None else m
    A_cl = rng.standard_normal((n, n))
    A_cl *= rng.uniform(0.1, 0.9) / max(spectral_radius(A_cl), 1e-3)
    B = rng.standard_normal((n, m))
    F0 = rng.standard_normal((m, n))
    A = A_cl - B @ F0
    sys = LtiSystem(A, B, random_psd(rng, n) * rng.uniform(0.0, 2.0))
    cost = CostSpec(random_psd(rng, n, 0.1), random_psd(rng, m, 0.5), rng.uniform(0.3, 0.95))
    pairs = InitialPairSet(rng.standard_normal((n + m + 1, n + m)))
    return Instance(sys, cost, F0, pairs.gamma_matrix)


def random_instances(count: int, seed: int) -> list[Instance]:
    rng = np.random.default_rng(seed)
    return [random_instance(rng) for _ in range(count)]


# Acceptance report: one PASS/FAIL line per criterion after the run.

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    number, text = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (text, "PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        outcome.get_result()._acceptance = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        text, verdict = _ACCEPTANCE[number]
        terminalreporter.write_line(f"AC{number:<2} {verdict}  {text}")
