import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_STATE_F0, example1, random_instance, random_psd, two_state
from stochlqr.duality import (
    S_series,
    check_schur_dominance,
    closed_form_S,
    dual_objective,
    duality_check,
    duality_gap,
    kkt_residuals,
    lagrangian,
    lagrangian_grad_F,
    primal_objective,
    verify_equivalence,
)
from stochlqr.errors import DefinitenessError, DimensionError
from stochlqr.linear_model import InitialPairSet, LtiSystem, augmented_matrix, gain_bar
from stochlqr.mb_pd import TWO_STATE_PAIRS, dual_update, mb_pd_run
from stochlqr.model_based import classical_pi, optimal_P, solve_are

GAMMA6 = InitialPairSet(TWO_STATE_PAIRS).gamma_matrix


def optimum(sys, cost, Gamma, F0=None):
    X, F = solve_are(sys, cost, F0)
    return closed_form_S(sys, F, Gamma, cost.gamma), F, optimal_P(sys, cost, X)


class TestClosedFormS:
    def test_residual_and_series(self):
        sys, cost = two_state()
        S = closed_form_S(sys, TWO_STATE_F0, GAMMA6, cost.gamma)
        A_F = augmented_matrix(sys, TWO_STATE_F0)
        Fb = gain_bar(TWO_STATE_F0)
        M = GAMMA6 + cost.gamma / (1 - cost.gamma) * Fb @ sys.noise_cov @ Fb.T
        assert np.abs(cost.gamma * A_F @ S @ A_F.T + M - S).max() < 1e-12
        np.testing.assert_allclose(S, S_series(sys, TWO_STATE_F0, GAMMA6, cost.gamma, 400), atol=1e-10)
        ref = sla.solve_discrete_lyapunov(np.sqrt(cost.gamma) * A_F, M)
        np.testing.assert_allclose(S, ref, atol=1e-10)

    def test_nilpotent_augmented_matrix(self):
        sys = LtiSystem(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 2)))
        S = closed_form_S(sys, np.zeros((1, 2)), GAMMA6, 0.7)
        np.testing.assert_allclose(S, GAMMA6, atol=1e-15)

    def test_requires_positive_source(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        with pytest.raises(DefinitenessError):
            closed_form_S(sys, TWO_STATE_F0, np.zeros((3, 3)), cost.gamma)

    def test_cost_matches_noiseless_rollouts(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        F = TWO_STATE_F0
        S = closed_form_S(sys, F, GAMMA6, cost.gamma)
        total = 0.0
        for v in TWO_STATE_PAIRS:
            x, u = v[:2].copy(), v[2:].copy()
            for k in range(200):
                total += cost.gamma**k * (x @ cost.Q @ x + u @ cost.R @ u)
                x = sys.A @ x + sys.B @ u
                u = F @ x
        assert primal_objective(S, cost.lambda_block()) == pytest.approx(total / len(TWO_STATE_PAIRS), rel=1e-10)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_primal_value_equals_dual_value_of_current_gain(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        S = closed_form_S(inst.sys, inst.F0, inst.Gamma, inst.cost.gamma)
        P = dual_update(inst.sys, inst.cost, inst.F0)
        primal = primal_objective(S, inst.cost.lambda_block())
        dual = dual_objective(P, inst.F0, inst.Gamma, inst.sys.noise_cov, inst.cost.gamma)
        assert primal == pytest.approx(dual, rel=1e-8)


class TestLagrangian:
    def test_equals_objective_on_feasible_set(self):
        sys, cost = two_state()
        S = closed_form_S(sys, TWO_STATE_F0, GAMMA6, cost.gamma)
        P = random_psd(np.random.default_rng(0), 3)
        L = lagrangian(P, np.zeros((3, 3)), TWO_STATE_F0, S, sys, cost, GAMMA6)
        assert L == pytest.approx(primal_objective(S, cost.lambda_block()), rel=1e-10)

    def test_equals_dual_when_stationary_in_S(self):
        sys, cost = two_state()
        P = dual_update(sys, cost, TWO_STATE_F0)
        S = random_psd(np.random.default_rng(1), 3)
        L = lagrangian(P, np.zeros((3, 3)), TWO_STATE_F0, S, sys, cost, GAMMA6)
        assert L == pytest.approx(dual_objective(P, TWO_STATE_F0, GAMMA6, sys.noise_cov, cost.gamma), rel=1e-10)

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng)
        sys, cost = inst.sys, inst.cost
        n, m = sys.n, sys.m
        S = random_psd(rng, n + m, 0.1)
        P = random_psd(rng, n + m, 0.1)
        F = inst.F0
        G = lagrangian_grad_F(P, F, S, sys, cost)
        h = 1e-6
        num = np.zeros_like(F)
        for i in range(m):
            for j in range(n):
                E = np.zeros_like(F)
                E[i, j] = h
                up = lagrangian(P, 0 * P, F + E, S, sys, cost, inst.Gamma)
                dn = lagrangian(P, 0 * P, F - E, S, sys, cost, inst.Gamma)
                num[i, j] = (up - dn) / (2 * h)
        scale = max(1.0, np.abs(G).max())
        assert np.abs(G - num).max() / scale < 1e-5


class TestKkt:
    def test_optimum(self):
        sys, cost = two_state()
        S, F, P = optimum(sys, cost, GAMMA6)
        res = kkt_residuals(S, F, P, np.zeros((3, 3)), sys, cost, GAMMA6)
        assert res.max() < 1e-6
        assert set(res.as_dict()) == {"r_primal_lyap", "r_primal_pd", "r_dual", "r_stationary_P", "r_stationary_F"}

    def test_suboptimal_gain(self):
        sys, cost = two_state()
        S = closed_form_S(sys, TWO_STATE_F0, GAMMA6, cost.gamma)
        P = dual_update(sys, cost, TWO_STATE_F0)
        res = kkt_residuals(S, TWO_STATE_F0, P, np.zeros((3, 3)), sys, cost, GAMMA6)
        assert res.r_stationary_P < 1e-9 and res.r_primal_lyap < 1e-9
        assert res.r_stationary_F > 1e-2

    def test_nonzero_multiplier(self):
        sys, cost = two_state()
        S, F, P = optimum(sys, cost, GAMMA6)
        assert kkt_residuals(S, F, P, np.eye(3), sys, cost, GAMMA6).r_dual == 1.0

    def test_indefinite_primal(self):
        sys, cost = two_state()
        _, F, P = optimum(sys, cost, GAMMA6)
        res = kkt_residuals(-np.eye(3), F, P, np.zeros((3, 3)), sys, cost, GAMMA6)
        assert res.r_primal_pd == pytest.approx(1.0)

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1))
    def test_random_optimum(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        S, F, P = optimum(inst.sys, inst.cost, inst.Gamma, inst.F0)
        res = kkt_residuals(S, F, P, np.zeros_like(P), inst.sys, inst.cost, inst.Gamma)
        scale = max(1.0, np.abs(P).max(), np.abs(S).max())
        assert res.max() < 1e-6 * scale


class TestSchurDominance:
    def test_identity(self):
        assert check_schur_dominance(np.eye(3), np.zeros((1, 2))) == pytest.approx(0.0, abs=1e-14)
        assert check_schur_dominance(np.eye(3), [[1.0, 0.0]]) == pytest.approx(0.0, abs=1e-14)

    def test_zero_at_minimizer(self):
        rng = np.random.default_rng(2)
        P = random_psd(rng, 4, 0.2)
        _, P12, P22 = P[:3, :3], P[:3, 3:], P[3:, 3:]
        F = -np.linalg.solve(P22, P12.T)
        assert abs(check_schur_dominance(P, F)) < 1e-10

    def test_errors(self):
        with pytest.raises(DimensionError):
            check_schur_dominance(np.eye(4), np.zeros((1, 2)))
        with pytest.raises(DefinitenessError):
            check_schur_dominance(-np.eye(3), np.zeros((1, 2)))
        with pytest.raises(DefinitenessError):
            check_schur_dominance(np.diag([1.0, 1.0, 0.0]), np.zeros((1, 2)))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
    def test_nonnegative(self, seed, n, m):
        rng = np.random.default_rng(seed)
        P = random_psd(rng, n + m, 0.05)
        F = 3 * rng.standard_normal((m, n))
        assert check_schur_dominance(P, F) >= -1e-10 * max(1.0, np.abs(P).max())


class TestEquivalence:
    def test_example1(self):
        sys, cost = example1()
        pi = classical_pi(sys, cost, -1.0, epsilon=None, max_iter=4)
        pd = mb_pd_run(sys, cost, -1.0, epsilon=None, max_iter=4, stability="discounted")
        rows = verify_equivalence(pi, pd)
        assert [r.s for r in rows] == [0, 1, 2, 3, 4]
        assert np.isnan(rows[0].value_deviation) and rows[0].gain_deviation == 0.0
        assert max(max(r.gain_deviation, r.value_deviation if r.s else 0) for r in rows) < 1e-10

    def test_common_prefix(self):
        sys, cost = two_state()
        pi = classical_pi(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=3)
        pd = mb_pd_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=6)
        assert len(verify_equivalence(pi, pd)) == 4

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1))
    def test_random(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        pi = classical_pi(inst.sys, inst.cost, inst.F0, epsilon=None, max_iter=6)
        pd = mb_pd_run(inst.sys, inst.cost, inst.F0, epsilon=None, max_iter=6, stability="discounted")
        for r in verify_equivalence(pi, pd)[1:]:
            scale = max(1.0, np.abs(pi.values[r.s - 1]).max())
            assert r.gain_deviation < 1e-8 * scale and r.value_deviation < 1e-8 * scale


class TestDualityGap:
    def test_two_state(self):
        sys, cost = two_state()
        chk = duality_check(sys, cost, GAMMA6)
        assert abs(chk.gap) < 1e-6 * max(1.0, abs(chk.primal))

    def test_noiseless(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        assert abs(duality_gap(sys, cost, GAMMA6)) < 1e-8

    def test_example1(self):
        sys, cost = example1()
        Gamma = InitialPairSet([[1.0, 0.0], [0.0, 1.0]]).gamma_matrix
        assert abs(duality_gap(sys, cost, Gamma, F0=-1.0)) < 1e-8

    def test_dual_objective_minimized_over_gain_at_block_solution(self):
        sys, cost = two_state()
        _, Fstar, P = optimum(sys, cost, GAMMA6)
        best = dual_objective(P, Fstar, GAMMA6, sys.noise_cov, cost.gamma)
        rng = np.random.default_rng(4)
        for _ in range(20):
            F = Fstar + 0.3 * rng.standard_normal(Fstar.shape)
            assert dual_objective(P, F, GAMMA6, sys.noise_cov, cost.gamma) >= best - 1e-12

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1))
    def test_random(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        chk = duality_check(inst.sys, inst.cost, inst.Gamma, inst.F0)
        assert abs(chk.gap) < 1e-6 * max(1.0, abs(chk.primal))
