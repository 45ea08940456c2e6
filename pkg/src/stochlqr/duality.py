"""Primal/dual objects of the covariance formulation and their optimality checks.

The primal variable ``S`` is the discounted second moment of ``v = [x; u]``;
the dual variable ``P`` is the multiplier of its Lyapunov constraint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DefinitenessError, DimensionError
from .linear_model import CostSpec, LtiSystem, as_gain, augmented_matrix, gain_bar
from .model_based import optimal_P, p_blocks, solve_are, solve_lyapunov_discounted
from .trace import IterateTrace


def _noise_weight(gamma: float) -> float:
    return gamma / (1.0 - gamma)


def _source(sys: LtiSystem, F: np.ndarray, Gamma, gamma: float) -> np.ndarray:
    Fb = gain_bar(F)
    return np.asarray(Gamma, dtype=float) + _noise_weight(gamma) * Fb @ sys.noise_cov @ Fb.T


def closed_form_S(sys: LtiSystem, F, Gamma, gamma: float) -> np.ndarray:
    """Unique ``S`` with ``g A_F S A_F' + Gamma + g/(1-g) Fb W Fb' = S``."""
    F = as_gain(F, sys)
    M = _source(sys, F, Gamma, gamma)
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0.0:
        raise DefinitenessError("Gamma plus the noise term must be positive definite")
    # X = g A' X A + M with A = A_F' is the transposed (covariance) equation
    return solve_lyapunov_discounted(augmented_matrix(sys, F).T, M, gamma)


def S_series(sys: LtiSystem, F, Gamma, gamma: float, terms: int) -> np.ndarray:
    """Truncated series ``sum_k g^k E[v_k v_k']`` averaged over the initial pairs."""
    F = as_gain(F, sys)
    A_F = augmented_matrix(sys, F)
    Fb = gain_bar(F)
    noise = Fb @ sys.noise_cov @ Fb.T
    C = np.asarray(Gamma, dtype=float).copy()
    S = np.zeros_like(C)
    for k in range(terms):
        S += gamma**k * C
        C = A_F @ C @ A_F.T + noise
    return S


def primal_objective(S, Lambda) -> float:
    return float(np.trace(np.asarray(Lambda) @ np.asarray(S)))


def lagrangian(P, P0, F, S, sys: LtiSystem, cost: CostSpec, Gamma) -> float:
    F = as_gain(F, sys)
    A_F = augmented_matrix(sys, F)
    g = cost.gamma
    defect = g * A_F @ S @ A_F.T + _source(sys, F, Gamma, g) - S
    return float(np.trace(cost.lambda_block() @ S) - np.trace(S @ P0) + np.trace(defect @ P))


def lagrangian_grad_F(P, F, S, sys: LtiSystem, cost: CostSpec) -> np.ndarray:
    """Analytic gradient of the Lagrangian with respect to ``F`` (``P`` symmetric)."""
    F = as_gain(F, sys)
    n = sys.n
    _, P12, P22 = p_blocks(P, n)
    AB = np.hstack([sys.A, sys.B])
    g = cost.gamma
    Z = g * AB @ S @ AB.T + _noise_weight(g) * sys.noise_cov
    return 2.0 * (P12.T + P22 @ F) @ Z


def dual_objective(P, F, Gamma, noise_cov, gamma: float) -> float:
    """``tr(Gamma P) + g/(1-g) tr(W Fb' P Fb)``: the dual function on its feasible set."""
    Fb = gain_bar(F)
    return float(np.trace(np.asarray(Gamma) @ P) + _noise_weight(gamma) * np.trace(noise_cov @ Fb.T @ P @ Fb))


@dataclass(frozen=True)
class KktResiduals:
    r_primal_lyap: float
    r_primal_pd: float
    r_dual: float
    r_stationary_P: float
    r_stationary_F: float

    def max(self) -> float:
        return max(self.r_primal_lyap, self.r_primal_pd, self.r_dual, self.r_stationary_P, self.r_stationary_F)

    def as_dict(self) -> dict[str, float]:
        return {
            "r_primal_lyap": self.r_primal_lyap,
            "r_primal_pd": self.r_primal_pd,
            "r_dual": self.r_dual,
            "r_stationary_P": self.r_stationary_P,
            "r_stationary_F": self.r_stationary_F,
        }


def _inf(M) -> float:
    return float(np.max(np.abs(M), initial=0.0))


def kkt_residuals(S, F, P, P0, sys: LtiSystem, cost: CostSpec, Gamma) -> KktResiduals:
    """Entrywise max-norm defects of the five optimality conditions."""
    F = as_gain(F, sys)
    S = np.asarray(S, dtype=float)
    P = np.asarray(P, dtype=float)
    A_F = augmented_matrix(sys, F)
    g = cost.gamma
    lyap = g * A_F @ S @ A_F.T + _source(sys, F, Gamma, g) - S
    stat_P = g * A_F.T @ P @ A_F + cost.lambda_block() - P
    return KktResiduals(
        r_primal_lyap=_inf(lyap),
        r_primal_pd=max(0.0, -float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())),
        r_dual=_inf(P0),
        r_stationary_P=_inf(stat_P),
        r_stationary_F=_inf(lagrangian_grad_F(P, F, S, sys, cost)),
    )


def check_schur_dominance(P, F, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of ``Fb' P Fb - (P11 - P12 P22^{-1} P12')``.

    The gap is nonnegative for every ``F`` and vanishes at ``F = -P22^{-1} P12'``.
    """
    P = np.asarray(P, dtype=float)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    m, n = F.shape
    if P.shape != (n + m, n + m):
        raise DimensionError(f"P must be {n + m}x{n + m} for a {m}x{n} gain")
    if np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -tol:
        raise DefinitenessError("P must be positive semidefinite")
    P11, P12, P22 = p_blocks(P, n)
    if np.linalg.eigvalsh(0.5 * (P22 + P22.T)).min() <= 0.0:
        raise DefinitenessError("P22 must be positive definite")
    Fb = gain_bar(F)
    D = Fb.T @ P @ Fb - (P11 - P12 @ np.linalg.solve(P22, P12.T))
    return float(np.linalg.eigvalsh(0.5 * (D + D.T)).min())


@dataclass(frozen=True)
class EquivalenceRow:
    s: int
    gain_deviation: float
    value_deviation: float  # nan at s = 0


def verify_equivalence(pi_trace: IterateTrace, mbpd_trace: IterateTrace) -> list[EquivalenceRow]:
    """Compare policy iteration with the primal-dual iterates step by step.

    At step ``s`` the value matrix of policy iteration is compared with
    ``Fb' P Fb``, where ``Fb`` stacks the gain that ``P`` evaluated.  Only the
    common prefix of the two traces is compared.
    """
    steps = min(len(pi_trace.gains), len(mbpd_trace.gains))
    rows = []
    for s in range(steps):
        dF = _inf(pi_trace.gains[s] - mbpd_trace.gains[s])
        if s == 0:
            dX = float("nan")
        else:
            Fb = gain_bar(mbpd_trace.gains[s - 1])
            dX = _inf(pi_trace.values[s - 1] - Fb.T @ mbpd_trace.values[s - 1] @ Fb)
        rows.append(EquivalenceRow(s, dF, dX))
    return rows


@dataclass(frozen=True)
class DualityCheck:
    primal: float
    dual: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def duality_check(sys: LtiSystem, cost: CostSpec, Gamma, F0=None) -> DualityCheck:
    """Primal and dual objective values at the model-based optimum ``(S*, F*, P*)``."""
    Xstar, Fstar = solve_are(sys, cost, F0)
    Pstar = optimal_P(sys, cost, Xstar)
    S = closed_form_S(sys, Fstar, Gamma, cost.gamma)
    return DualityCheck(
        primal_objective(S, cost.lambda_block()),
        dual_objective(Pstar, Fstar, Gamma, sys.noise_cov, cost.gamma),
    )


def duality_gap(sys: LtiSystem, cost: CostSpec, Gamma, F0=None) -> float:
    return duality_check(sys, cost, Gamma, F0).gap
