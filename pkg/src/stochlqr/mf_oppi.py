"""Model-free off-policy policy iteration with batch least squares.

Phase 1 runs a behavior policy on the plant once and keeps only the per-step
moments.  Phase 2 evaluates and improves the target gain repeatedly from
those moments; the model matrices are never touched after Phase 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linear_model
from .errors import ConvergenceError, DefinitenessError, DimensionError, ExcitationError
from .linear_model import CostSpec, LtiSystem, MomentEstimates, as_gain, require_stabilizing
from .matrix_pack import sym_dim, unvecn, unvecs, vech, vecn
from .trace import IterateTrace

DEFAULT_K = 20
DEFAULT_N = 15
DEFAULT_EPSILON = 1e-3
DEFAULT_MAX_ITER = 100
CONDITION_LIMIT = 1e12
DEFAULT_AMPLITUDE = 10.0


def probing_noise(k, amplitude: float = 1.0):
    """Sum-of-sinusoids excitation added to the behavior input at step ``k``."""
    k = np.asarray(k, dtype=float)
    e = 0.2 * np.sin(1.009 * k) + np.cos(0.538 * k) ** 2 + np.sin(0.9 * k) + np.cos(100.0 * k)
    out = amplitude * e
    return float(out) if out.ndim == 0 else out


def unknown_count(n: int, m: int) -> int:
    """Number of scalar unknowns in one off-policy evaluation step."""
    return sym_dim(n) + m * n + sym_dim(m)


@dataclass(frozen=True)
class OffPolicyDataset:
    moments: MomentEstimates
    noise_cov: np.ndarray
    seed: object = None

    def __post_init__(self):
        n = self.moments.Exx.shape[1]
        m = self.moments.Euu.shape[1]
        need = unknown_count(n, m)
        if self.K < need:
            raise ValueError(f"need at least K = {need} sampled steps for n={n}, m={m}; got K = {self.K}")
        if np.shape(self.noise_cov) != (n, n):
            raise DimensionError(f"noise_cov must be {n}x{n}")

    @property
    def K(self) -> int:
        return self.moments.K

    @property
    def N(self) -> Optional[int]:
        return self.moments.N


@dataclass(frozen=True)
class BellmanRegression:
    Psi: np.ndarray  # (K, unknown_count)
    Phi: np.ndarray  # (K,)
    n: int
    m: int


@dataclass(frozen=True)
class EvaluationTriple:
    X: np.ndarray  # n x n value matrix
    X1: np.ndarray  # m x n, estimates B'XA
    X2: np.ndarray  # m x m, estimates B'XB


def collect_offpolicy_data(
    sys: LtiSystem,
    behavior,
    K: int = DEFAULT_K,
    N: int = DEFAULT_N,
    seed=None,
    x0_sampler=None,
) -> OffPolicyDataset:
    """Phase 1: average behavior-policy moments over ``N`` trajectories of ``K`` steps."""
    moments = linear_model.estimate_moments(sys, behavior, x0_sampler, K, N, seed)
    return OffPolicyDataset(moments, sys.noise_cov, seed)


def build_regression(data: OffPolicyDataset, F, cost: CostSpec, noise_cov=None) -> BellmanRegression:
    """Stack the vectorized off-policy Bellman equation over ``K`` consecutive steps.

    Row ``i`` pairs the moments at steps ``i-1`` and ``i`` (window starting at
    ``k = 0``).  The ``u u'`` block is symmetrized before half-vectorization
    so the pairing with the doubled off-diagonals of ``X2`` stays exact for
    ``m > 1``.
    """
    mom = data.moments
    W = data.noise_cov if noise_cov is None else np.asarray(noise_cov, dtype=float)
    n, m = mom.Exx.shape[1], mom.Euu.shape[1]
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (m, n):
        raise DimensionError(f"gain must be {m}x{n}, got shape {F.shape}")
    K = mom.K
    if K < unknown_count(n, m):
        raise ValueError(f"insufficient rows: K = {K} < {unknown_count(n, m)}")
    g = cost.gamma
    target_weight = cost.Q + F.T @ cost.R @ F
    vech_noise = vech(W)

    Psi = np.empty((K, unknown_count(n, m)))
    Phi = np.empty(K)
    for i in range(1, K + 1):
        Exx, Exx_next = mom.Exx[i - 1], mom.Exx[i]
        Exu, Euu = mom.Exu[i - 1], mom.Euu[i - 1]
        h_xx = vech(Exx) - g * vech(Exx_next) + g * vech_noise
        # E[(u - F x) x'] and E[(u - F x)(u + F x)']
        d_x = Exu.T - F @ Exx
        d_u = Euu + Exu.T @ F.T - F @ Exu - F @ Exx @ F.T
        h_xu = 2.0 * g * vecn(d_x)
        h_uu = g * vech(0.5 * (d_u + d_u.T))
        Psi[i - 1] = np.concatenate([h_xx, h_xu, h_uu])
        Phi[i - 1] = np.trace(target_weight @ Exx)
    return BellmanRegression(Psi, Phi, n, m)


def bls_solve(reg: BellmanRegression) -> EvaluationTriple:
    """Normal-equation least squares for ``[vecs(X); vecn(X1); vecs(X2)]``."""
    G = reg.Psi.T @ reg.Psi
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise ExcitationError(
            f"regressor is not persistently exciting (cond(Psi'Psi) = {cond:.3e}); add probing noise to the behavior policy"
        )
    theta = np.linalg.solve(G, reg.Psi.T @ reg.Phi)
    n, m = reg.n, reg.m
    a, b = sym_dim(n), sym_dim(n) + m * n
    X = unvecs(theta[:a], n)
    X1 = unvecn(theta[a:b], m, n)
    X2 = unvecs(theta[b:], m)
    return EvaluationTriple(X, X1, X2)


def policy_improve(triple: EvaluationTriple, R, gamma: float) -> np.ndarray:
    """Greedy gain ``-g (R + g X2)^{-1} X1`` from an evaluation triple."""
    H = np.atleast_2d(R) + gamma * triple.X2
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("R + gamma*X2 is not positive definite") from exc
    return -gamma * np.linalg.solve(H, triple.X1)


def mf_oppi_iterate(
    data: OffPolicyDataset,
    cost: CostSpec,
    F0,
    epsilon: float | None = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
) -> IterateTrace:
    """Phase 2: policy iteration on a fixed dataset."""
    F = np.atleast_2d(np.asarray(F0, dtype=float))
    trace = IterateTrace("mf-oppi", "X", [F])
    for _ in range(max_iter):
        triple = bls_solve(build_regression(data, F, cost))
        F = policy_improve(triple, cost.R, cost.gamma)
        dev = trace.append(triple.X, F)
        if epsilon is not None and dev <= epsilon:
            trace.converged = True
            return trace
    if epsilon is not None:
        raise ConvergenceError(
            f"off-policy iteration did not reach |dF| <= {epsilon:g} in {max_iter} steps "
            f"(last |dF| = {trace.deviations[-1]:.3e})",
            trace,
        )
    return trace


def mf_oppi_run(
    sys: LtiSystem,
    cost: CostSpec,
    F0,
    behavior=None,
    K: int = DEFAULT_K,
    N: int = DEFAULT_N,
    epsilon: float | None = DEFAULT_EPSILON,
    max_iter: int = DEFAULT_MAX_ITER,
    seed=None,
    amplitude: float = DEFAULT_AMPLITUDE,
    x0_sampler=None,
) -> IterateTrace:
    """Collect data once under the behavior policy, then iterate on it.

    The default behavior policy is ``u_k = F0 x_k + probing_noise(k, amplitude)``
    on every input channel; initial states default to ``N(0, I)``.
    """
    cost.check_against(sys)
    F0 = as_gain(F0, sys)
    require_stabilizing(sys, F0, "discounted", cost.gamma)
    if behavior is None:
        behavior = linear_model.default_behavior(F0, amplitude, probing_noise)
    data = collect_offpolicy_data(sys, behavior, K, N, seed, x0_sampler)
    return mf_oppi_iterate(data, cost, F0, epsilon, max_iter)
