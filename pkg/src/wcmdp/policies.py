"""Per-step execution of the ID policy and the ERC baseline, plus an exact
small-instance oracle for the N-armed problem.

Both policies first sample an ideal action for every arm from its
single-armed policy and then enforce the hard budgets:

* ID policy: walk arms in ascending reassigned ID and keep ideal actions
  while every budget still covers the running prefix cost; all remaining
  arms take the free action 0, whatever their individual cost would be.
* ERC baseline: rank arms each step by expected reward at their current
  state and greedily keep ideal actions that still fit every running budget,
  continuing past arms that do not fit.

Feasibility is structural: action 0 costs nothing, so the emitted system
action always satisfies every budget.

RNG discipline: each step draws one uniform per arm for ideal actions (arms
in the runner's ID order), and state transitions later draw one uniform per
arm in the same order. Identical inputs and generator state reproduce the
step exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .lp_relax import SingleArmPolicy
from .model import SystemState, WcmdpInstance
from .reassign import ReassignmentResult

ORACLE_MAX_PAIRS = 10 ** 6
ORACLE_MAX_DENSE = 5 * 10 ** 7


class OracleSizeError(RuntimeError):
    """Product MDP too large for the exact oracle."""


class OracleNumericalError(RuntimeError):
    """Exact oracle solution failed its residual audit."""


@dataclass(frozen=True)
class StepOutcome:
    """Actions taken at one step and the induced reward/cost totals.

    conforming_count is the number of arms that played their sampled ideal
    action; under the ID policy it is also the length of the conforming
    prefix. step_costs never exceeds any budget.
    """

    actions: np.ndarray         # (N,)
    ideal_actions: np.ndarray   # (N,)
    conforming_count: int
    step_reward: float
    step_costs: np.ndarray      # (K,)


def _states_array(state) -> np.ndarray:
    if isinstance(state, SystemState):
        return state.states
    return np.asarray(state, dtype=np.int64)


def _sample_from_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling; clip guards a final cumsum a hair below 1
    return np.minimum((cdf_rows <= u[:, None]).sum(axis=1),
                      cdf_rows.shape[1] - 1)


class _RunnerBase:
    """Shared tensor caches for the per-step policy runners."""

    def __init__(self, instance: WcmdpInstance, policy: SingleArmPolicy,
                 order: np.ndarray):
        n = instance.num_arms
        self.num_arms = n
        self.num_constraints = instance.num_constraints
        self.order = order
        self.budget = instance.alpha * n
        transition = np.stack([arm.transition for arm in instance.arms])[order]
        self.reward = np.stack([arm.reward for arm in instance.arms])[order]
        cost = np.stack([arm.cost for arm in instance.arms])[order]
        self.cost = np.ascontiguousarray(cost.transpose(0, 2, 3, 1))  # (N,S,A,K)
        self.pi_cdf = np.cumsum(policy.pi[order], axis=-1)
        self.trans_cdf = np.cumsum(transition, axis=-1)
        self._ar = np.arange(n)

    def sample_ideal(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.num_arms)
        return _sample_from_cdf(self.pi_cdf[self._ar, states], u)

    def transition_step(self, states: np.ndarray, actions: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
        """Sample every arm's next state, one uniform per arm in ID order."""
        u = rng.random(self.num_arms)
        rows = self.trans_cdf[self._ar, states, actions]
        return _sample_from_cdf(rows, u)

    def _outcome(self, states, actions, ideal, conforming) -> StepOutcome:
        step_reward = float(self.reward[self._ar, states, actions].sum())
        step_costs = self.cost[self._ar, states, actions].sum(axis=0)
        return StepOutcome(actions=actions, ideal_actions=ideal,
                           conforming_count=int(conforming),
                           step_reward=step_reward, step_costs=step_costs)

    def to_original_order(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        out[self.order] = values
        return out


class IdPolicyRunner(_RunnerBase):
    """ID policy executor; all vectors are indexed by reassigned ID."""

    def __init__(self, instance: WcmdpInstance, policy: SingleArmPolicy,
                 reassignment: ReassignmentResult):
        super().__init__(instance, policy, reassignment.order())
        self.reassignment = reassignment

    def step(self, states, rng: np.random.Generator) -> StepOutcome:
        states = _states_array(states)
        ideal = self.sample_ideal(states, rng)
        costs = self.cost[self._ar, states, ideal]        # (N, K)
        prefix = np.cumsum(costs, axis=0)
        feasible = (prefix <= self.budget[None, :]).all(axis=1)
        blocked = np.flatnonzero(~feasible)
        conforming = self.num_arms if blocked.size == 0 else int(blocked[0])
        actions = ideal.copy()
        actions[conforming:] = 0
        return self._outcome(states, actions, ideal, conforming)


class ErcPolicyRunner(_RunnerBase):
    """ERC baseline executor; vectors are indexed by original arm ID."""

    def __init__(self, instance: WcmdpInstance, policy: SingleArmPolicy):
        super().__init__(instance, policy, np.arange(instance.num_arms))
        self.index_table = policy.r_star                  # (N, S)

    def step(self, states, rng: np.random.Generator) -> StepOutcome:
        states = _states_array(states)
        ideal = self.sample_ideal(states, rng)
        costs = self.cost[self._ar, states, ideal]        # (N, K)
        # indices recomputed from the current states every step
        indices = self.index_table[self._ar, states]
        rank = np.argsort(-indices, kind="stable")        # ties: arm ID ascending
        actions = ideal.copy()

        # zero-cost draws can never break a budget, so only the rest queue up
        needs_check = costs.max(axis=1) > 0.0
        queue = rank[needs_check[rank]]
        if queue.size:
            budget = self.budget.tolist()
            running = [0.0] * self.num_constraints
            ks = range(self.num_constraints)
            for i, row in zip(queue.tolist(), costs[queue].tolist()):
                if all(running[k] + row[k] <= budget[k] for k in ks):
                    for k in ks:
                        running[k] += row[k]
                else:
                    actions[i] = 0
        conforming = int((actions == ideal).sum())
        return self._outcome(states, actions, ideal, conforming)


def id_policy_step(instance: WcmdpInstance, policy: SingleArmPolicy,
                   reassignment: ReassignmentResult, state,
                   rng: np.random.Generator) -> StepOutcome:
    """One ID-policy step; state is indexed by reassigned ID."""
    return IdPolicyRunner(instance, policy, reassignment).step(state, rng)


def erc_policy_step(instance: WcmdpInstance, policy: SingleArmPolicy, state,
                    rng: np.random.Generator) -> StepOutcome:
    """One ERC-baseline step; state is indexed by original arm ID."""
    return ErcPolicyRunner(instance, policy).step(state, rng)


def exact_oracle(instance: WcmdpInstance, tol: float = 1e-6) -> float:
    """Optimal long-run average reward per arm of the hard-budget problem.

    Builds the product MDP over joint states, restricts each joint-action set
    to the budget-feasible combinations, and solves the average-reward linear
    program for (possibly multichain) finite MDPs. Returns the best value
    over initial states, divided by the number of arms.

    Raises OracleSizeError when the joint state-action enumeration exceeds
    the size guard, and OracleNumericalError when the returned solution
    violates its own constraints by more than tol.
    """
    n, s, a, k = (instance.num_arms, instance.num_states,
                  instance.num_actions, instance.num_constraints)
    n_states = s ** n
    n_pairs = n_states * a ** n
    if n_pairs > ORACLE_MAX_PAIRS:
        raise OracleSizeError(
            f"{n_pairs} joint state-action pairs exceed the guard {ORACLE_MAX_PAIRS}")

    joint_states = np.array(list(itertools.product(range(s), repeat=n)),
                            dtype=np.int64)
    joint_actions = np.array(list(itertools.product(range(a), repeat=n)),
                             dtype=np.int64)
    budget = instance.alpha * n

    rows_g = []
    rows_gh = []
    rhs_gh = []
    weights = np.zeros(n_states)
    for si, sv in enumerate(joint_states):
        for av in joint_actions:
            cost = np.zeros(k)
            reward = 0.0
            trans = np.ones(1)
            for i, arm in enumerate(instance.arms):
                cost += arm.cost[:, sv[i], av[i]]
                reward += arm.reward[sv[i], av[i]]
                trans = np.kron(trans, arm.transition[sv[i], av[i]])
            if np.any(cost > budget):
                continue
            row = trans.copy()
            row[si] -= 1.0
            rows_g.append((si, row))
            rows_gh.append((si, row))
            rhs_gh.append(-reward)
        weights[si] = 1.0 / n_states
    if len(rows_g) * n_states > ORACLE_MAX_DENSE:
        raise OracleSizeError("feasible joint-action enumeration too large")

    m = len(rows_g)
    a_ub = np.zeros((2 * m, 2 * n_states))
    b_ub = np.zeros(2 * m)
    for r, (si, row) in enumerate(rows_g):
        a_ub[r, :n_states] = row                       # P g - g(s) <= 0
    for r, (si, row) in enumerate(rows_gh):
        a_ub[m + r, si] = -1.0                         # -g(s) + P h - h(s) <= -r
        a_ub[m + r, n_states:] = row
        b_ub[m + r] = rhs_gh[r]

    c = np.concatenate([weights, np.zeros(n_states)])
    res = linprog(c=c, A_ub=sp.csr_matrix(a_ub), b_ub=b_ub,
                  bounds=(None, None), method="highs")
    if res.status != 0:
        raise OracleNumericalError(f"linprog status {res.status}: {res.message}")
    residual = float(np.max(a_ub @ res.x - b_ub))
    if residual > tol:
        raise OracleNumericalError(
            f"oracle solution violates constraints by {residual:.3e} > {tol:.3e}")
    gain = res.x[:n_states]
    return float(gain.max()) / n
