"""Noisy LTI plant, cost weights, spectral checks and Monte-Carlo sampling.

The plant is ``x[k+1] = A x[k] + B u[k] + w[k]`` with ``w[k] ~ N(0, noise_cov)``
i.i.d.  Feedback gains are plain ``(m, n)`` arrays acting as ``u = F x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import DefinitenessError, DimensionError, DivergenceError, StabilityError

DIVERGENCE_BOUND = 1e9
SYMMETRY_TOL = 1e-12
PSD_TOL = -1e-10

Policy = Callable[[np.ndarray, int], np.ndarray]
SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    return M


def _check_symmetric_psd(M: np.ndarray, name: str, strict: bool = False) -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(M), initial=0.0)):
        raise DefinitenessError(f"{name} is not symmetric")
    lam_min = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if strict and lam_min <= 0.0:
        raise DefinitenessError(f"{name} must be positive definite (min eigenvalue {lam_min:.3e})")
    if lam_min < PSD_TOL:
        raise DefinitenessError(f"{name} must be positive semidefinite (min eigenvalue {lam_min:.3e})")


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        W = _as_matrix(self.noise_cov, "noise_cov")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows but A is {n}x{n}")
        if W.shape != (n, n):
            raise DimensionError(f"noise_cov must be {n}x{n}, got shape {W.shape}")
        _check_symmetric_psd(W, "noise_cov")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "noise_cov", 0.5 * (W + W.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_noise(self, noise_cov) -> "LtiSystem":
        return LtiSystem(self.A, self.B, noise_cov)


@dataclass(frozen=True)
class CostSpec:
    Q: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        _check_symmetric_psd(Q, "Q")
        _check_symmetric_psd(R, "R", strict=True)
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValueError(f"gamma must lie in the open interval (0, 1), got {gamma}")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "R", 0.5 * (R + R.T))
        object.__setattr__(self, "gamma", gamma)

    def lambda_block(self) -> np.ndarray:
        """Block-diagonal weight ``[[Q, 0], [0, R]]`` on the stacked ``[x; u]``."""
        n, m = self.Q.shape[0], self.R.shape[0]
        L = np.zeros((n + m, n + m))
        L[:n, :n] = self.Q
        L[n:, n:] = self.R
        return L

    def check_against(self, sys: LtiSystem) -> None:
        if self.Q.shape != (sys.n, sys.n) or self.R.shape != (sys.m, sys.m):
            raise DimensionError(
                f"cost weights Q{self.Q.shape}, R{self.R.shape} do not fit n={sys.n}, m={sys.m}"
            )


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (K+1, n)
    inputs: np.ndarray  # (K+1, m)
    seed: object = None

    def __post_init__(self):
        if self.states.shape[0] != self.inputs.shape[0]:
            raise DimensionError("states and inputs must have the same length")

    @property
    def K(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class MomentEstimates:
    """Per-step averages of ``x x'``, ``x u'`` and ``u u'``.

    ``N`` is the number of averaged trajectories, or ``None`` when the
    moments were propagated analytically.
    """

    Exx: np.ndarray  # (K+1, n, n)
    Exu: np.ndarray  # (K+1, n, m)
    Euu: np.ndarray  # (K+1, m, m)
    N: Optional[int]

    @property
    def K(self) -> int:
        return self.Exx.shape[0] - 1


@dataclass(frozen=True)
class InitialPairSet:
    """Initial augmented states ``v_(i) = [z_(i); u_(i)]`` stored row-wise."""

    pairs: np.ndarray  # (r, n+m)

    def __post_init__(self):
        pairs = np.atleast_2d(np.asarray(self.pairs, dtype=float))
        object.__setattr__(self, "pairs", pairs)
        lam = np.linalg.eigvalsh(self.gamma_matrix).min()
        if lam <= 0.0:
            raise DefinitenessError(
                f"initial pairs do not span R^{pairs.shape[1]} (min eigenvalue of Gamma {lam:.3e}); "
                f"need at least {pairs.shape[1]} linearly independent pairs"
            )

    @classmethod
    def from_states_inputs(cls, states, inputs) -> "InitialPairSet":
        z = np.atleast_2d(np.asarray(states, dtype=float))
        u = np.asarray(inputs, dtype=float).reshape(z.shape[0], -1)
        return cls(np.hstack([z, u]))

    @property
    def r(self) -> int:
        return self.pairs.shape[0]

    @property
    def gamma_matrix(self) -> np.ndarray:
        V = self.pairs
        return V.T @ V / V.shape[0]


def as_gain(F, sys: LtiSystem) -> np.ndarray:
    """Coerce ``F`` to an ``(m, n)`` float array, accepting flat input for ``m == 1``."""
    F = np.asarray(F, dtype=float)
    if F.ndim < 2 and F.size == sys.m * sys.n:
        F = F.reshape(sys.m, sys.n)
    if F.shape != (sys.m, sys.n):
        raise DimensionError(f"gain must be {sys.m}x{sys.n}, got shape {F.shape}")
    return F


def spectral_radius(M) -> float:
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def gain_bar(F) -> np.ndarray:
    """Stack ``[I_n; F]`` so that ``[x; F x] == gain_bar(F) @ x``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return np.vstack([np.eye(F.shape[1]), F])


def augmented_matrix(sys: LtiSystem, F) -> np.ndarray:
    """Transition matrix ``[[A, B], [F A, F B]]`` of ``v = [x; u]`` under ``u = F x``."""
    F = as_gain(F, sys)
    AB = np.hstack([sys.A, sys.B])
    return gain_bar(F) @ AB


def closed_loop(sys: LtiSystem, F) -> np.ndarray:
    return sys.A + sys.B @ as_gain(F, sys)


def is_stabilizing(sys: LtiSystem, F, policy: str = "strict", gamma: float | None = None) -> bool:
    """Membership test for the set of admissible gains.

    ``strict`` requires ``rho(A + B F) < 1``; ``discounted`` only requires
    ``rho(A + B F) < 1/sqrt(gamma)``, which is what finiteness of the
    discounted cost needs.
    """
    rho = spectral_radius(closed_loop(sys, F))
    if policy == "strict":
        return rho < 1.0
    if policy == "discounted":
        if gamma is None:
            raise ValueError("the discounted stability policy needs gamma")
        return rho < 1.0 / np.sqrt(gamma)
    raise ValueError(f"unknown stability policy {policy!r}")


def require_stabilizing(sys: LtiSystem, F, policy: str, gamma: float | None = None) -> None:
    if not is_stabilizing(sys, F, policy, gamma):
        rho = spectral_radius(closed_loop(sys, F))
        raise StabilityError(f"gain is not stabilizing under the {policy!r} policy (rho(A+BF) = {rho:.6g})")


def noise_factor(cov: np.ndarray) -> np.ndarray:
    """Square factor ``L`` with ``L L' == cov``; clips tiny negative eigenvalues."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(lam, 0.0, None))


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed: SeedLike, count: int) -> list:
    """Independent child seeds (sequences, or generators if ``seed`` is a generator)."""
    if isinstance(seed, np.random.Generator):
        return list(seed.spawn(count))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(count)


def spawn_generators(seed: SeedLike, count: int) -> list[np.random.Generator]:
    """Independent generators, one per index; results do not depend on call order."""
    return [make_rng(child) for child in spawn_seeds(seed, count)]


def gain_policy(F) -> Policy:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return lambda x, k: F @ x


def _resolve_policy(policy, sys: LtiSystem) -> Policy:
    if callable(policy):
        return policy
    return gain_policy(as_gain(policy, sys))


def simulate(sys: LtiSystem, policy, x0, K: int, seed: SeedLike = None) -> Trajectory:
    """Roll the plant forward ``K`` steps.

    ``policy`` is either a gain matrix or a callable ``policy(x, k) -> u``.
    Returns states ``x_0 .. x_K`` and inputs ``u_0 .. u_K`` (the last input is
    evaluated at ``x_K`` but not applied).
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    policy = _resolve_policy(policy, sys)
    rng = make_rng(seed)
    n, m = sys.n, sys.m
    x = np.asarray(x0, dtype=float).reshape(n)
    L = noise_factor(sys.noise_cov)
    w = rng.standard_normal((K, n)) @ L.T

    states = np.empty((K + 1, n))
    inputs = np.empty((K + 1, m))
    states[0] = x
    for k in range(K):
        u = np.asarray(policy(x, k), dtype=float).reshape(m)
        inputs[k] = u
        x = sys.A @ x + sys.B @ u + w[k]
        norm = float(np.linalg.norm(x))
        if not np.isfinite(norm) or norm > DIVERGENCE_BOUND:
            raise DivergenceError(k + 1, norm)
        states[k + 1] = x
    inputs[K] = np.asarray(policy(x, K), dtype=float).reshape(m)
    return Trajectory(states, inputs, seed if not isinstance(seed, np.random.Generator) else None)


def standard_normal_sampler(n: int) -> Callable[[np.random.Generator], np.ndarray]:
    return lambda rng: rng.standard_normal(n)


def _resolve_sampler(x0, n: int):
    if x0 is None:
        return standard_normal_sampler(n)
    if callable(x0):
        return x0
    fixed = np.asarray(x0, dtype=float).reshape(n)
    return lambda rng: fixed


def estimate_moments(
    sys: LtiSystem,
    behavior_policy,
    x0_sampler=None,
    K: int = 20,
    N: int = 15,
    seed: SeedLike = None,
) -> MomentEstimates:
    """Average ``x x'``, ``x u'``, ``u u'`` per time step over ``N`` trajectories.

    Trajectory ``q`` draws its initial state and its noise from its own
    sub-stream of ``seed``.  ``x0_sampler`` may be a callable taking a
    generator, a fixed vector, or ``None`` for ``N(0, I)``.
    """
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    policy = _resolve_policy(behavior_policy, sys)
    sampler = _resolve_sampler(x0_sampler, sys.n)
    Sxx = np.zeros((K + 1, sys.n, sys.n))
    Sxu = np.zeros((K + 1, sys.n, sys.m))
    Suu = np.zeros((K + 1, sys.m, sys.m))
    for rng in spawn_generators(seed, N):
        x0 = sampler(rng)
        traj = simulate(sys, policy, x0, K, rng)
        X, U = traj.states, traj.inputs
        Sxx += X[:, :, None] * X[:, None, :]
        Sxu += X[:, :, None] * U[:, None, :]
        Suu += U[:, :, None] * U[:, None, :]
    Exx = Sxx / N
    Euu = Suu / N
    return MomentEstimates(
        0.5 * (Exx + Exx.transpose(0, 2, 1)),
        Sxu / N,
        0.5 * (Euu + Euu.transpose(0, 2, 1)),
        N,
    )


def propagate_moments(
    sys: LtiSystem,
    behavior_gain,
    K: int,
    x0_mean=None,
    x0_cov=None,
    offset: Optional[Callable[[int], np.ndarray]] = None,
) -> MomentEstimates:
    """Exact moments under ``u_k = F_b x_k + offset(k)`` with a deterministic offset.

    Propagates the mean and second moment of the state analytically; this is
    the infinite-``N`` counterpart of :func:`estimate_moments`.
    """
    n, m = sys.n, sys.m
    Fb = as_gain(behavior_gain, sys)
    mu = np.zeros(n) if x0_mean is None else np.asarray(x0_mean, dtype=float).reshape(n)
    C = np.eye(n) if x0_cov is None else _as_matrix(x0_cov, "x0_cov")
    M = C + np.outer(mu, mu)
    Acl = sys.A + sys.B @ Fb
    Exx = np.empty((K + 1, n, n))
    Exu = np.empty((K + 1, n, m))
    Euu = np.empty((K + 1, m, m))
    for k in range(K + 1):
        e = np.zeros(m) if offset is None else np.asarray(offset(k), dtype=float).reshape(m)
        Exx[k] = M
        Exu[k] = M @ Fb.T + np.outer(mu, e)
        Euu[k] = Fb @ M @ Fb.T + Fb @ np.outer(mu, e) + np.outer(e, mu) @ Fb.T + np.outer(e, e)
        Be = sys.B @ e
        cross = Acl @ np.outer(mu, Be)
        M = Acl @ M @ Acl.T + cross + cross.T + np.outer(Be, Be) + sys.noise_cov
        M = 0.5 * (M + M.T)
        mu = Acl @ mu + Be
    Euu = 0.5 * (Euu + Euu.transpose(0, 2, 1))
    return MomentEstimates(Exx, Exu, Euu, None)


def empirical_cost(
    sys: LtiSystem,
    cost,
    F,
    x0=None,
    horizon: int = 100,
    N: int = 1000,
    seed: SeedLike = None,
) -> float:
    """Monte-Carlo estimate of the discounted cost of ``u = F x``, truncated at ``horizon``."""
    F = as_gain(F, sys)
    require_stabilizing(sys, F, "discounted", cost.gamma)
    sampler = _resolve_sampler(x0, sys.n)
    discounts = cost.gamma ** np.arange(horizon)
    total = 0.0
    for rng in spawn_generators(seed, N):
        traj = simulate(sys, F, sampler(rng), horizon, rng)
        X, U = traj.states[:horizon], traj.inputs[:horizon]
        stage = np.einsum("ki,ij,kj->k", X, cost.Q, X) + np.einsum("ki,ij,kj->k", U, cost.R, U)
        total += float(discounts @ stage)
    return total / N


def default_behavior(F0, amplitude: float, probe: Callable[[int, float], float]) -> Policy:
    """``u_k = F0 x_k + probe(k, amplitude)`` on every input channel."""
    F0 = np.atleast_2d(np.asarray(F0, dtype=float))
    ones = np.ones(F0.shape[0])
    return lambda x, k: F0 @ x + probe(k, amplitude) * ones

