"""Model-based reference solvers for the discounted stochastic LQR problem.

Everything here assumes ``A`` and ``B`` are known.  These routines are the
ground truth the data-driven algorithms are compared against.
"""
from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DefinitenessError, LqrError, StabilityError
from .linear_model import (
    CostSpec,
    LtiSystem,
    as_gain,
    closed_loop,
    require_stabilizing,
    spectral_radius,
)
from .matrix_pack import duplication_matrix, sym_indices
from .trace import IterateTrace

DEFAULT_EPSILON = 1e-8
DEFAULT_MAX_ITER = 100
ARE_EPSILON = 1e-10


def solve_lyapunov_discounted(A_cl, M, gamma: float) -> np.ndarray:
    """Solve ``X = gamma * A_cl' X A_cl + M`` for symmetric ``X``.

    The equation is restricted to the symmetric subspace (``n(n+1)/2``
    unknowns) and solved as one dense linear system.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = A_cl.shape[0]
    rho = spectral_radius(A_cl)
    if not rho * np.sqrt(gamma) < 1.0:
        raise StabilityError(
            f"discounted Lyapunov equation needs rho(A) < 1/sqrt(gamma) = {1 / np.sqrt(gamma):.6g}, got {rho:.6g}"
        )
    M = 0.5 * (M + M.T)
    rows, cols = sym_indices(n)
    pick = rows + cols * n  # vec positions of the vech coordinates
    D = duplication_matrix(n)
    op = np.eye(n * n) - gamma * np.kron(A_cl.T, A_cl.T)
    T = op[pick] @ D
    try:
        x = np.linalg.solve(T, M[rows, cols])
    except np.linalg.LinAlgError as exc:
        raise LqrError(f"Lyapunov system is singular: {exc}") from exc
    X = np.empty((n, n))
    X[rows, cols] = x
    X[cols, rows] = x
    return X


def lyapunov_residual(A_cl, M, X, gamma: float) -> float:
    A_cl = np.atleast_2d(A_cl)
    return float(np.max(np.abs(X - gamma * A_cl.T @ X @ A_cl - M)))


def evaluate_gain(sys: LtiSystem, cost: CostSpec, F) -> np.ndarray:
    """Value matrix of ``u = F x``: the solution of ``X = g (A+BF)' X (A+BF) + Q + F'RF``."""
    F = as_gain(F, sys)
    return solve_lyapunov_discounted(closed_loop(sys, F), cost.Q + F.T @ cost.R @ F, cost.gamma)


def improve_gain(sys: LtiSystem, cost: CostSpec, X) -> np.ndarray:
    g = cost.gamma
    H = cost.R + g * sys.B.T @ X @ sys.B
    return -g * np.linalg.solve(H, sys.B.T @ X @ sys.A)


def value_function(sys: LtiSystem, cost: CostSpec, F, state_second_moment) -> float:
    """Expected discounted cost from a state with second moment ``E[x x']``."""
    X = evaluate_gain(sys, cost, F)
    Sigma = np.atleast_2d(np.asarray(state_second_moment, dtype=float))
    g = cost.gamma
    return float(np.trace(X @ Sigma) + g / (1.0 - g) * np.trace(X @ sys.noise_cov))


def classical_pi(
    sys: LtiSystem,
    cost: CostSpec,
    F0,
    epsilon: float | None = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
) -> IterateTrace:
    """Hewer's policy iteration with exact Lyapunov policy evaluation.

    With ``epsilon=None`` exactly ``max_iter`` steps are taken and no
    convergence error is raised.
    """
    cost.check_against(sys)
    F = as_gain(F0, sys)
    require_stabilizing(sys, F, "discounted", cost.gamma)
    trace = IterateTrace("pi", "X", [F])
    for _ in range(max_iter):
        X = evaluate_gain(sys, cost, F)
        F = improve_gain(sys, cost, X)
        dev = trace.append(X, F)
        if epsilon is not None and dev <= epsilon:
            trace.converged = True
            return trace
    if epsilon is not None:
        raise ConvergenceError(
            f"policy iteration did not reach |dF| <= {epsilon:g} in {max_iter} steps "
            f"(last |dF| = {trace.deviations[-1]:.3e})",
            trace,
        )
    return trace


def default_initial_gain(sys: LtiSystem, cost: CostSpec) -> np.ndarray:
    F0 = np.zeros((sys.m, sys.n))
    if spectral_radius(sys.A) * np.sqrt(cost.gamma) >= 1.0:
        raise StabilityError("A is not discounted-stable; pass a stabilizing initial gain F0")
    return F0


def solve_are(sys: LtiSystem, cost: CostSpec, F0=None) -> tuple[np.ndarray, np.ndarray]:
    """Optimal value matrix ``X*`` and gain ``F*`` via policy iteration to 1e-10.

    ``F0`` defaults to the zero gain, which is only valid when ``A`` itself
    is discounted-stable.
    """
    if F0 is None:
        F0 = default_initial_gain(sys, cost)
    trace = classical_pi(sys, cost, F0, epsilon=ARE_EPSILON, max_iter=DEFAULT_MAX_ITER)
    X = trace.values[-1]
    return X, trace.final_gain


def are_residual(sys: LtiSystem, cost: CostSpec, X) -> float:
    A, B, g = sys.A, sys.B, cost.gamma
    H = cost.R + g * B.T @ X @ B
    rhs = cost.Q + g * A.T @ X @ A - g * g * A.T @ X @ B @ np.linalg.solve(H, B.T @ X @ A)
    return float(np.max(np.abs(X - rhs)))


def optimal_P(sys: LtiSystem, cost: CostSpec, Xstar) -> np.ndarray:
    """Quadratic form on ``[x; u]`` built from a value matrix.

    Blocks are ``Q + g A'XA``, ``g A'XB`` and ``R + g B'XB``.
    """
    g = cost.gamma
    AB = np.hstack([sys.A, sys.B])
    return cost.lambda_block() + g * AB.T @ Xstar @ AB


def p_blocks(P, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``P`` into ``(P11, P12, P22)`` with ``P11`` of size ``n x n``."""
    P = np.asarray(P)
    return P[:n, :n], P[:n, n:], P[n:, n:]


def gain_from_P(P, n: int) -> np.ndarray:
    """Minimizing gain ``-P22^{-1} P12'`` of the quadratic form ``P``."""
    _, P12, P22 = p_blocks(P, n)
    try:
        np.linalg.cholesky(0.5 * (P22 + P22.T))
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("P22 block is not positive definite") from exc
    return -np.linalg.solve(P22, P12.T)
