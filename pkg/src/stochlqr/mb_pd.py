"""Primal-dual solver: dual Lyapunov update, primal gain update, and its data-driven form.

The data-driven variant never injects probing noise: every trajectory is run
under the current iterate ``u_k = F x_k`` after a prescribed initial input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linear_model
from .errors import ConvergenceError, DimensionError, ExcitationError
from .linear_model import (
    CostSpec,
    InitialPairSet,
    LtiSystem,
    as_gain,
    augmented_matrix,
    require_stabilizing,
    spawn_generators,
    spawn_seeds,
)
from .matrix_pack import duplication_matrix, sym_indices
from .model_based import gain_from_P, solve_lyapunov_discounted
from .trace import IterateTrace

DEFAULT_K = 10
DEFAULT_N = 15
DEFAULT_EPSILON = 5e-3
DEFAULT_MAX_ITER = 100
CONDITION_LIMIT = 1e12

TWO_STATE_PAIRS = np.array(
    [
        [-1.0, 3.0, -2.0],
        [2.0, -1.0, -5.0],
        [-3.0, 3.0, -8.0],
    ]
)


@dataclass(frozen=True)
class CorrelationPair:
    S_tilde: np.ndarray
    W_tilde: np.ndarray
    K: int
    r: int
    N: int


def dual_update(sys: LtiSystem, cost: CostSpec, F) -> np.ndarray:
    """Solve ``g A_F' P A_F + Lambda = P`` for the dual variable ``P``."""
    A_F = augmented_matrix(sys, F)
    return solve_lyapunov_discounted(A_F, cost.lambda_block(), cost.gamma)


def primal_update(P, n: int) -> np.ndarray:
    """Gain ``-P22^{-1} P12'`` read off the blocks of ``P``."""
    return gain_from_P(P, n)


def mb_pd_run(
    sys: LtiSystem,
    cost: CostSpec,
    F0,
    epsilon: float | None = 1e-8,
    max_iter: int = DEFAULT_MAX_ITER,
    stability: str = "strict",
) -> IterateTrace:
    """Alternate dual and primal updates until the gain stops moving.

    ``stability`` picks the admissibility test applied to ``F0``; pass
    ``"discounted"`` for marginally stable starting gains.
    """
    cost.check_against(sys)
    F = as_gain(F0, sys)
    require_stabilizing(sys, F, stability, cost.gamma)
    trace = IterateTrace("mb-pd", "P", [F])
    for _ in range(max_iter):
        P = dual_update(sys, cost, F)
        F = primal_update(P, sys.n)
        dev = trace.append(P, F)
        if epsilon is not None and dev <= epsilon:
            trace.converged = True
            return trace
    if epsilon is not None:
        raise ConvergenceError(
            f"primal-dual iteration did not reach |dF| <= {epsilon:g} in {max_iter} steps",
            trace,
        )
    return trace


def default_initial_pairs(n: int, m: int, seed=None) -> InitialPairSet:
    """The three published pairs when ``n == 2, m == 1``; otherwise ``n + m`` random ones."""
    if (n, m) == (2, 1):
        return InitialPairSet(TWO_STATE_PAIRS.copy())
    rng = linear_model.make_rng(seed)
    while True:
        V = rng.standard_normal((n + m, n + m))
        if np.linalg.eigvalsh(V.T @ V / (n + m)).min() > 1e-6:
            return InitialPairSet(V)


def _pair_policy(F: np.ndarray, u0: np.ndarray):
    return lambda x, k: u0 if k == 0 else F @ x


def estimate_correlations(
    sys: LtiSystem,
    F,
    pairs: InitialPairSet,
    K: int = DEFAULT_K,
    N: int = DEFAULT_N,
    seed=None,
    *,
    gamma: float,
) -> CorrelationPair:
    """Truncated discounted correlations of ``v_k = [x_k; u_k]`` from simulated data.

    For each initial pair the plant is started at ``x_0 = z_(i)`` with input
    ``u_0 = u_(i)`` and driven by ``u_k = F x_k`` afterwards; ``K + 1`` steps
    are simulated so that ``v_{K+1}`` is available for the lagged sum.
    """
    F = as_gain(F, sys)
    n = sys.n
    if pairs.pairs.shape[1] != n + sys.m:
        raise DimensionError(f"initial pairs must have {n + sys.m} columns")
    disc = gamma ** np.arange(K + 1)
    r = pairs.r
    gens = spawn_generators(seed, r * N)
    S = np.zeros((n + sys.m, n + sys.m))
    W = np.zeros_like(S)
    for i, v0 in enumerate(pairs.pairs):
        S_bar = np.zeros_like(S)
        W_bar = np.zeros_like(S)
        policy = _pair_policy(F, v0[n:])
        for q in range(N):
            traj = linear_model.simulate(sys, policy, v0[:n], K + 1, gens[i * N + q])
            V = np.hstack([traj.states, traj.inputs])
            Vk, Vnext = V[:-1], V[1:]
            S_bar += (Vk * disc[:, None]).T @ Vk
            W_bar += (Vnext * disc[:, None]).T @ Vk
        S += S_bar / N
        W += W_bar / N
    S /= r
    W /= r
    return CorrelationPair(0.5 * (S + S.T), W, K, r, N)


def solve_P_from_data(corr: CorrelationPair, Lambda, gamma: float) -> np.ndarray:
    """Least-squares solution of ``S'PS - g W'PW = S'(Lambda)S`` over symmetric ``P``."""
    S, W = corr.S_tilde, corr.W_tilde
    d = S.shape[0]
    op = np.kron(S.T, S.T) - gamma * np.kron(W.T, W.T)
    T = op @ duplication_matrix(d)
    rhs = (S.T @ np.asarray(Lambda, dtype=float) @ S).reshape(-1, order="F")
    sv = np.linalg.svd(T, compute_uv=False)
    if sv[-1] <= 0.0 or (sv[0] / sv[-1]) ** 2 > CONDITION_LIMIT:
        raise ExcitationError(
            f"correlation data is too poorly conditioned to recover P (cond = {sv[0] / max(sv[-1], 1e-300):.3e})"
        )
    p, *_ = np.linalg.lstsq(T, rhs, rcond=None)
    rows, cols = sym_indices(d)
    P = np.empty((d, d))
    P[rows, cols] = p
    P[cols, rows] = p
    return P


def mb_pd_model_free_run(
    sys: LtiSystem,
    cost: CostSpec,
    F0,
    pairs: InitialPairSet | None = None,
    K: int = DEFAULT_K,
    N: int = DEFAULT_N,
    epsilon: float | None = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    seed=None,
    stability: str = "strict",
) -> IterateTrace:
    """Primal-dual iteration with ``P`` recovered from fresh trajectories every step."""
    cost.check_against(sys)
    F = as_gain(F0, sys)
    require_stabilizing(sys, F, stability, cost.gamma)
    if pairs is None:
        pairs = default_initial_pairs(sys.n, sys.m, seed)
    Lam = cost.lambda_block()
    step_seeds = spawn_seeds(seed, max_iter)
    trace = IterateTrace("mb-pd-mf", "P", [F])
    for s in range(max_iter):
        corr = estimate_correlations(sys, F, pairs, K, N, step_seeds[s], gamma=cost.gamma)
        P = solve_P_from_data(corr, Lam, cost.gamma)
        F = primal_update(P, sys.n)
        dev = trace.append(P, F)
        if epsilon is not None and dev <= epsilon:
            trace.converged = True
            return trace
    if epsilon is not None:
        raise ConvergenceError(
            f"data-driven primal-dual iteration did not reach |dF| <= {epsilon:g} in {max_iter} steps "
            f"(last |dF| = {trace.deviations[-1]:.3e})",
            trace,
        )
    return trace
