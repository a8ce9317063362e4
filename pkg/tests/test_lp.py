import numpy as np
import pytest

from wcmdp.lp_relax import (LpSolution, build_lp, check_solution,
                            extract_policy, solve_lp)
from wcmdp.model import GeneratorConfig, WcmdpInstance, generate

from oracles import rvi_average_reward, single_state_arm, tiny_instance, zero_cost_copy


class TestBuildLp:
    def test_counts_small(self):
        instance = tiny_instance(seed=0, n=2, s=2, a=2, k=1)
        prob = build_lp(instance)
        assert prob.num_variables == 8
        assert prob.num_rows == 1 + 4 + 2

    def test_counts_large(self):
        instance = tiny_instance(seed=0, n=100, s=10, a=4, k=4)
        prob = build_lp(instance)
        assert prob.num_variables == 4000
        assert prob.num_rows == 4 + 1000 + 100

    def test_budget_row_coefficients_are_cost_over_n(self):
        instance = tiny_instance(seed=1, n=3, s=2, a=2, k=2)
        prob = build_lp(instance)
        dense = prob.budget.toarray()
        for i, arm in enumerate(instance.arms):
            block = dense[:, i * 4:(i + 1) * 4]
            assert np.allclose(block, arm.cost.reshape(2, 4) / 3.0)
        assert np.array_equal(prob.budget_rhs, instance.alpha)


class TestSolveLp:
    def test_zero_costs_match_per_arm_value_iteration(self):
        instance = zero_cost_copy(tiny_instance(seed=7, n=4, s=3, a=2, k=1))
        solution = solve_lp(build_lp(instance))
        expected = np.mean([rvi_average_reward(a.transition, a.reward)
                            for a in instance.arms])
        assert solution.objective == pytest.approx(expected, abs=1e-7)

    def test_hand_solved_one_variable_lp(self):
        arm = single_state_arm([0.0, 0.7], [[0.0, 1.0]])
        instance = WcmdpInstance.from_arms([arm], [0.5])
        solution = solve_lp(build_lp(instance))
        assert solution.objective == pytest.approx(0.35, abs=1e-9)
        assert solution.y[0, 0, 1] == pytest.approx(0.5, abs=1e-9)

    def test_homogeneous_matches_single_arm_lp(self):
        cfg = GeneratorConfig(seed=4, num_arms=6, num_states=3, num_actions=2,
                              num_constraints=1, family="typed", num_types=1)
        instance = generate(cfg)
        single = WcmdpInstance.from_arms(instance.arms[:1], instance.alpha)
        many = solve_lp(build_lp(instance))
        one = solve_lp(build_lp(single))
        assert many.objective == pytest.approx(one.objective, abs=1e-7)

    def test_duplicating_arms_leaves_objective_unchanged(self):
        instance = tiny_instance(seed=11, n=5, s=3, a=2, k=2)
        doubled = WcmdpInstance.from_arms(instance.arms * 2, instance.alpha)
        r1 = solve_lp(build_lp(instance)).objective
        r2 = solve_lp(build_lp(doubled)).objective
        assert r2 == pytest.approx(r1, abs=1e-7)

    def test_solution_invariants(self, small_solved):
        instance, solution, _ = small_solved
        assert np.all(solution.y >= 0.0)
        assert np.max(np.abs(solution.y.sum(axis=(1, 2)) - 1.0)) <= 1e-8
        report = check_solution(instance, solution)
        assert report.ok, report
        assert solution.duals.shape == (instance.num_constraints,)

    def test_solution_json_schema(self, small_solved):
        _, solution, _ = small_solved
        d = solution.to_json_dict()
        assert set(d) == {"R_rel", "y", "duals"}


class TestExtractPolicy:
    def test_normalization_arithmetic(self):
        # frequencies 0.2/0.1 on one state normalize to 2/3 and 1/3
        arm_inst = tiny_instance(seed=2, n=1, s=2, a=2, k=1)
        y = np.array([[[0.2, 0.1], [0.35, 0.35]]])
        solution = LpSolution(y=y, objective=0.0, solver_status="manual",
                              duals=np.zeros(1))
        policy = extract_policy(arm_inst, solution)
        assert policy.pi[0, 0] == pytest.approx([2 / 3, 1 / 3])
        assert policy.pi[0, 1] == pytest.approx([0.5, 0.5])

    def test_zero_marginal_state_gets_uniform_policy(self):
        arm_inst = tiny_instance(seed=2, n=1, s=2, a=4, k=1)
        y = np.zeros((1, 2, 4))
        y[0, 0] = [0.5, 0.5, 0.0, 0.0]
        solution = LpSolution(y=y, objective=0.0, solver_status="manual",
                              duals=np.zeros(1))
        policy = extract_policy(arm_inst, solution)
        assert policy.pi[0, 1] == pytest.approx([0.25, 0.25, 0.25, 0.25])

    def test_zero_costs_give_zero_expected_costs(self):
        instance = zero_cost_copy(tiny_instance(seed=8, n=3, s=3, a=2, k=2))
        solution = solve_lp(build_lp(instance))
        policy = extract_policy(instance, solution)
        assert np.all(policy.C_star == 0.0)

    def test_derived_chain_quantities(self, small_solved):
        instance, solution, policy = small_solved
        n = instance.num_arms
        # pi rows are distributions
        assert np.allclose(policy.pi.sum(axis=2), 1.0, atol=1e-12)
        # induced chain is the policy-weighted kernel
        i = 7
        manual = np.einsum("sat,sa->st", instance.arms[i].transition,
                           policy.pi[i])
        assert np.allclose(policy.induced_P[i], manual)
        # stationary distributions match the y marginals and are invariant
        marg = solution.y.sum(axis=2)
        marg /= marg.sum(axis=1, keepdims=True)
        assert np.allclose(policy.mu_star, marg, atol=1e-12)
        drift = max(np.abs(policy.mu_star[i] @ policy.induced_P[i]
                           - policy.mu_star[i]).sum() for i in range(n))
        assert drift <= 1e-7
        # expected costs/rewards match their defining sums
        k0 = np.einsum("nsa,nsa->n", solution.y,
                       np.stack([a.cost[0] for a in instance.arms]))
        assert np.allclose(policy.C_star[0], k0, atol=1e-12)
        r_manual = np.einsum("sa,sa->s", policy.pi[i], instance.arms[i].reward)
        assert np.allclose(policy.r_star[i], r_manual)


class TestCheckSolution:
    def test_perturbed_solution_reports_linear_residual(self, small_solved):
        instance, solution, _ = small_solved
        y = solution.y.copy()
        y[0, 0, 0] += 1e-3
        bad = LpSolution(y=y, objective=solution.objective,
                         solver_status="perturbed", duals=solution.duals)
        report = check_solution(instance, bad)
        assert report.max_normalization_residual == pytest.approx(1e-3, abs=1e-10)
        assert 1e-4 <= report.max_balance_residual <= 1e-3 + 1e-9
        assert not report.ok

    def test_exact_toy_has_zero_residuals_at_tol_zero(self):
        arm = single_state_arm([0.0, 0.7], [[0.0, 1.0]])
        instance = WcmdpInstance.from_arms([arm], [0.5])
        y = np.array([[[0.5, 0.5]]])
        solution = LpSolution(y=y, objective=0.35, solver_status="manual",
                              duals=np.zeros(1))
        report = check_solution(instance, solution, tol=0.0)
        assert report.max_normalization_residual == 0.0
        assert report.max_balance_residual == 0.0
        assert report.max_budget_excess <= 0.0
        assert report.max_negativity == 0.0
        assert report.ok
