from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_STATE_F0, TWO_STATE_FSTAR, example1, random_instance, two_state
from stochlqr import linear_model
from stochlqr.duality import S_series, closed_form_S
from stochlqr.errors import ExcitationError, StabilityError
from stochlqr.linear_model import InitialPairSet, augmented_matrix, gain_bar, is_stabilizing
from stochlqr.mb_pd import (
    TWO_STATE_PAIRS,
    CorrelationPair,
    default_initial_pairs,
    dual_update,
    estimate_correlations,
    mb_pd_model_free_run,
    mb_pd_run,
    primal_update,
    solve_P_from_data,
)
from stochlqr.model_based import optimal_P, solve_are

P1 = np.array([[19.6666, 9.3333], [9.3333, 5.6667]])
PAIRS = InitialPairSet(TWO_STATE_PAIRS)


def exact_corr(sys, F, Gamma, gamma, K):
    S = S_series(sys, F, Gamma, gamma, K + 1)
    return CorrelationPair(S, augmented_matrix(sys, F) @ S, K, 0, 0)


class TestDualPrimal:
    def test_example1_first_step(self):
        sys, cost = example1()
        P = dual_update(sys, cost, -1.0)
        np.testing.assert_allclose(P, P1, atol=5e-4)
        Fb = gain_bar([[-1.0]])
        assert (Fb.T @ P @ Fb)[0, 0] == pytest.approx(6.6667, abs=1e-4)
        assert primal_update(P, 1)[0, 0] == pytest.approx(-1.6471, abs=1e-4)

    def test_zero_weight(self):
        sys, _ = two_state()
        stub = SimpleNamespace(lambda_block=lambda: np.zeros((3, 3)), gamma=0.7)
        np.testing.assert_array_equal(dual_update(sys, stub, TWO_STATE_F0), 0)

    def test_primal_update_zero_cross_block(self):
        np.testing.assert_array_equal(primal_update(np.eye(3), 2), 0)

    def test_primal_update_at_optimum(self):
        sys, cost = two_state()
        X, F = solve_are(sys, cost)
        np.testing.assert_allclose(primal_update(optimal_P(sys, cost, X), 2), F, atol=1e-9)

    def test_dual_update_precondition(self):
        sys, cost = example1()
        with pytest.raises(StabilityError):
            dual_update(sys, cost, 0.0)


class TestModelBasedRun:
    def test_example1_table(self):
        sys, cost = example1()
        tr = mb_pd_run(sys, cost, -1.0, epsilon=None, max_iter=4, stability="discounted")
        published = [P1, [[12.3889, 5.6945], [5.6945, 3.8472]], [[12.0188, 5.5094], [5.5094, 3.7547]]]
        for s, P in enumerate(published):
            np.testing.assert_allclose(tr.values[s], P, atol=5e-4)
        # fourth iterate checked against its own closed form: P11 = 1 + 2.8 X^4
        P4 = tr.values[3]
        np.testing.assert_allclose(P4, [[12.0166, 5.5083], [5.5083, 3.7542]], atol=5e-4)
        np.testing.assert_allclose([g[0, 0] for g in tr.gains[1:]], [-1.6471, -1.4801, -1.4673, -1.4673], atol=5e-4)

    def test_strict_policy_rejects_marginal_start(self):
        sys, cost = example1()
        with pytest.raises(StabilityError):
            mb_pd_run(sys, cost, -1.0)

    def test_fixed_point(self):
        sys, cost = two_state()
        tr = mb_pd_run(sys, cost, TWO_STATE_FSTAR, epsilon=1e-9)
        assert tr.iterations == 1

    def test_limit(self):
        sys, cost = two_state()
        tr = mb_pd_run(sys, cost, TWO_STATE_F0)
        assert tr.converged
        np.testing.assert_allclose(tr.final_gain, TWO_STATE_FSTAR, atol=1e-6)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_strictly_stabilizing(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        tr = mb_pd_run(inst.sys, inst.cost, inst.F0, epsilon=None, max_iter=8)
        for F in tr.gains:
            assert is_stabilizing(inst.sys, F, "strict")
        for Pa, Pb in zip(tr.values, tr.values[1:]):
            assert np.linalg.eigvalsh(Pa - Pb).min() >= -1e-8 * max(1.0, np.abs(Pa).max())


class TestCorrelations:
    def test_horizon_zero_gives_gamma(self):
        sys, cost = two_state()
        corr = estimate_correlations(sys, TWO_STATE_F0, PAIRS, K=0, N=4, seed=0, gamma=cost.gamma)
        np.testing.assert_allclose(corr.S_tilde, PAIRS.gamma_matrix, atol=1e-14)

    def test_noiseless_lag_identity(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        corr = estimate_correlations(sys, TWO_STATE_F0, PAIRS, K=10, N=2, seed=0, gamma=cost.gamma)
        A_F = augmented_matrix(sys, TWO_STATE_F0)
        assert np.abs(corr.W_tilde - A_F @ corr.S_tilde).max() < 1e-10

    def test_noiseless_long_horizon_matches_closed_form(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        K = 60
        corr = estimate_correlations(sys, TWO_STATE_F0, PAIRS, K=K, N=1, seed=0, gamma=cost.gamma)
        S = closed_form_S(sys, TWO_STATE_F0, PAIRS.gamma_matrix, cost.gamma)
        # tail of the series decays like (gamma * rho^2)^(K+1)
        tail = (cost.gamma * 0.5) ** (K + 1) * np.abs(S).max() * 10
        assert np.abs(corr.S_tilde - S).max() < max(tail, 1e-12)

    def test_noisy_expectation(self):
        sys, cost = two_state()
        corr = estimate_correlations(sys, TWO_STATE_F0, PAIRS, K=10, N=3000, seed=1, gamma=cost.gamma)
        S = S_series(sys, TWO_STATE_F0, PAIRS.gamma_matrix, cost.gamma, 11)
        np.testing.assert_allclose(corr.S_tilde, S, rtol=0.03, atol=0.03 * np.abs(S).max())

    def test_no_probing_noise_is_injected(self, monkeypatch):
        sys, cost = two_state()
        seen = []
        real = linear_model.simulate

        def spy(s, policy, x0, K, seed=None):
            seen.append((policy, np.array(x0)))
            return real(s, policy, x0, K, seed)

        monkeypatch.setattr(linear_model, "simulate", spy)
        F = np.array([[-0.3, -0.4]])
        estimate_correlations(sys, F, PAIRS, K=5, N=2, seed=0, gamma=cost.gamma)
        assert len(seen) == PAIRS.r * 2
        rng = np.random.default_rng(0)
        for i, (policy, x0) in enumerate(seen):
            v0 = PAIRS.pairs[i // 2]
            np.testing.assert_array_equal(x0, v0[:2])
            np.testing.assert_array_equal(policy(x0, 0), v0[2:])
            for k in range(1, 6):
                x = rng.standard_normal(2)
                np.testing.assert_array_equal(policy(x, k), F @ x)

    def test_default_pairs(self):
        np.testing.assert_array_equal(default_initial_pairs(2, 1).pairs, TWO_STATE_PAIRS)
        pairs = default_initial_pairs(3, 2, seed=5)
        assert pairs.r == 5
        assert np.linalg.eigvalsh(pairs.gamma_matrix).min() > 1e-6


class TestSolveP:
    def test_exact_correlations_recover_dual_update(self):
        sys, cost = two_state()
        corr = exact_corr(sys, TWO_STATE_F0, PAIRS.gamma_matrix, cost.gamma, 10)
        P = solve_P_from_data(corr, cost.lambda_block(), cost.gamma)
        np.testing.assert_allclose(P, dual_update(sys, cost, TWO_STATE_F0), atol=1e-6)

    def test_zero_weight(self):
        sys, cost = two_state()
        corr = exact_corr(sys, TWO_STATE_F0, PAIRS.gamma_matrix, cost.gamma, 10)
        np.testing.assert_allclose(solve_P_from_data(corr, np.zeros((3, 3)), cost.gamma), 0, atol=1e-12)

    def test_example1_from_trajectories(self):
        sys, cost = example1(noise=0.0)
        pairs = default_initial_pairs(1, 1, seed=3)
        corr = estimate_correlations(sys, -1.0, pairs, K=30, N=1, seed=0, gamma=cost.gamma)
        np.testing.assert_allclose(solve_P_from_data(corr, cost.lambda_block(), cost.gamma), P1, atol=1e-3)

    def test_degenerate_data(self):
        corr = CorrelationPair(np.zeros((3, 3)), np.zeros((3, 3)), 1, 1, 1)
        with pytest.raises(ExcitationError):
            solve_P_from_data(corr, np.eye(3), 0.7)

    @settings(max_examples=20)
    @given(st.integers(0, 2**32 - 1))
    def test_exact_recovery_random(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        corr = exact_corr(inst.sys, inst.F0, inst.Gamma, inst.cost.gamma, 10)
        P = solve_P_from_data(corr, inst.cost.lambda_block(), inst.cost.gamma)
        ref = dual_update(inst.sys, inst.cost, inst.F0)
        np.testing.assert_allclose(P, ref, atol=1e-6 * max(1.0, np.abs(ref).max()))


class TestModelFreeRun:
    def test_noiseless_converges(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        tr = mb_pd_model_free_run(sys, cost, TWO_STATE_F0, seed=0)
        assert tr.converged and tr.iterations <= 10
        assert np.linalg.norm(tr.final_gain - TWO_STATE_FSTAR) < 1e-3

    def test_noiseless_trace_matches_model_based(self):
        sys, cost = two_state(noise=np.zeros((2, 2)))
        mf = mb_pd_model_free_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=5, seed=0)
        mb = mb_pd_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=5)
        for Pa, Pb in zip(mf.values, mb.values):
            np.testing.assert_allclose(Pa, Pb, atol=1e-5)
        for Fa, Fb in zip(mf.gains, mb.gains):
            np.testing.assert_allclose(Fa, Fb, atol=1e-5)

    def test_noisy_fixed_steps(self):
        sys, cost = two_state()
        tr = mb_pd_model_free_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=15, seed=0)
        assert np.linalg.norm(tr.final_gain - TWO_STATE_FSTAR) < 0.05

    def test_deterministic(self):
        sys, cost = two_state()
        a = mb_pd_model_free_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=4, seed=8)
        b = mb_pd_model_free_run(sys, cost, TWO_STATE_F0, epsilon=None, max_iter=4, seed=8)
        assert np.array(a.values).tobytes() == np.array(b.values).tobytes()

    def test_random_pairs_for_other_dimensions(self):
        inst = random_instance(np.random.default_rng(12), n=3, m=2)
        sys = inst.sys.with_noise(np.zeros((3, 3)))
        tr = mb_pd_model_free_run(sys, inst.cost, inst.F0, epsilon=None, max_iter=6, seed=1)
        mb = mb_pd_run(sys, inst.cost, inst.F0, epsilon=None, max_iter=6)
        np.testing.assert_allclose(tr.final_gain, mb.final_gain, atol=1e-5)
