"""Data model for weakly-coupled MDP instances.

An instance is a collection of N arms, each a small MDP over a shared state
space S and action space A, plus K per-step budget constraints. Action 0 is
the distinguished free action: it incurs zero cost of every type for every
arm in every state, which guarantees that a feasible system action always
exists.

Instances are immutable after construction and safe to share across threads.
The JSON file format is a single self-describing document:

    {"N": ..., "S": ..., "A": ..., "K": ...,
     "alpha": [...],
     "arms": [{"P": [[[...]]], "r": [[...]], "c": [[[...]]]}, ...]}

Floats are serialized with Python's shortest round-trip representation, so a
serialize/deserialize cycle reproduces the instance bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-9

FULLY_HETEROGENEOUS = "fully_heterogeneous"
TYPED = "typed"
COST_STATE_ACTION = "state_action"
COST_ACTION_ONLY = "action_only"

# Budget coefficients are drawn from {0.05, 0.10, ..., 0.45}: one uniform
# integer in [1, 9] per constraint, times the grid step.
ALPHA_GRID_STEP = 0.05


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ArmModel:
    """One arm's MDP: transition kernel, rewards, and K cost tables.

    transition[s, a, s'] is the probability of moving to s' when action a is
    taken in state s; reward[s, a] the immediate reward; cost[k, s, a] the
    type-k cost. Arrays are stored read-only.
    """

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray      # (S, A)
    cost: np.ndarray        # (K, S, A)

    def __post_init__(self):
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "reward", _readonly(self.reward))
        object.__setattr__(self, "cost", _readonly(self.cost))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.cost.shape[0]


@dataclass(frozen=True)
class WcmdpInstance:
    """N arms plus the per-arm budget coefficient vector alpha.

    The type-k budget available to the whole system at every step is
    alpha[k] * N. r_max and c_max cache the largest absolute reward and the
    largest cost over all arms; they feed constants used elsewhere.
    """

    arms: tuple[ArmModel, ...]
    alpha: np.ndarray  # (K,)
    r_max: float
    c_max: float

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(self, "alpha", _readonly(self.alpha))

    @classmethod
    def from_arms(cls, arms: Sequence[ArmModel], alpha) -> "WcmdpInstance":
        """Build an instance, computing the cached maxima from the contents."""
        arms = tuple(arms)
        r_max = max(float(np.max(np.abs(a.reward))) for a in arms)
        c_max = max(float(np.max(a.cost)) for a in arms)
        return cls(arms=arms, alpha=np.asarray(alpha, dtype=np.float64),
                   r_max=r_max, c_max=c_max)

    @property
    def num_arms(self) -> int:
        return len(self.arms)

    @property
    def num_states(self) -> int:
        return self.arms[0].num_states

    @property
    def num_actions(self) -> int:
        return self.arms[0].num_actions

    @property
    def num_constraints(self) -> int:
        return len(self.alpha)

    def to_json_dict(self) -> dict:
        return {
            "N": self.num_arms,
            "S": self.num_states,
            "A": self.num_actions,
            "K": self.num_constraints,
            "alpha": self.alpha.tolist(),
            "arms": [
                {"P": a.transition.tolist(),
                 "r": a.reward.tolist(),
                 "c": a.cost.tolist()}
                for a in self.arms
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "WcmdpInstance":
        arms = tuple(
            ArmModel(transition=np.array(a["P"], dtype=np.float64),
                     reward=np.array(a["r"], dtype=np.float64),
                     cost=np.array(a["c"], dtype=np.float64))
            for a in d["arms"]
        )
        return cls.from_arms(arms, np.array(d["alpha"], dtype=np.float64))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "WcmdpInstance":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SystemState:
    """States of all N arms; exposes the one-hot row-matrix view."""

    states: np.ndarray  # (N,) int

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.states, dtype=np.int64))
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def num_arms(self) -> int:
        return self.states.shape[0]

    def one_hot(self, num_states: int) -> np.ndarray:
        """(N, S) matrix with exactly one 1 per row."""
        x = np.zeros((self.num_arms, num_states))
        x[np.arange(self.num_arms), self.states] = 1.0
        return x


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the random instance generators.

    family selects the sampling scheme; num_types is only meaningful for the
    typed family and must divide num_arms. cost_mode = action_only makes each
    cost table depend on the action alone (identical across states).
    """

    seed: int
    num_arms: int
    num_states: int
    num_actions: int
    num_constraints: int
    family: str = FULLY_HETEROGENEOUS
    num_types: int = 1
    cost_mode: str = COST_STATE_ACTION

    def check(self) -> None:
        if self.num_arms < 1 or self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_arms, num_states, num_actions must be positive")
        if self.num_constraints < 1:
            raise ValueError("num_constraints must be positive")
        if self.family not in (FULLY_HETEROGENEOUS, TYPED):
            raise ValueError(f"unknown family {self.family!r}")
        if self.cost_mode not in (COST_STATE_ACTION, COST_ACTION_ONLY):
            raise ValueError(f"unknown cost_mode {self.cost_mode!r}")
        if self.family == TYPED:
            if self.num_types < 1:
                raise ValueError("num_types must be positive")
            if self.num_arms % self.num_types != 0:
                raise ValueError(
                    f"num_arms={self.num_arms} not divisible by num_types={self.num_types}")


def _simplex_rows(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Rows uniform on the probability simplex via normalized exponentials."""
    e = rng.exponential(1.0, shape)
    e /= e.sum(axis=-1, keepdims=True)
    # second pass so stored row sums are 1 at the last ulp
    e /= e.sum(axis=-1, keepdims=True)
    return e


def _sample_arm(rng: np.random.Generator, cfg: GeneratorConfig) -> ArmModel:
    S, A, K = cfg.num_states, cfg.num_actions, cfg.num_constraints
    reward = np.zeros((S, A))
    if A > 1:
        reward[:, 1:] = rng.random((S, A - 1))
    transition = _simplex_rows(rng, (S, A, S))
    cost = np.zeros((K, S, A))
    if A > 1:
        if cfg.cost_mode == COST_ACTION_ONLY:
            per_action = rng.random((K, A - 1))
            cost[:, :, 1:] = per_action[:, None, :]
        else:
            cost[:, :, 1:] = rng.random((K, S, A - 1))
    return ArmModel(transition=transition, reward=reward, cost=cost)


def _sample_alpha(rng: np.random.Generator, k: int) -> np.ndarray:
    return rng.integers(1, 10, size=k).astype(np.float64) * ALPHA_GRID_STEP


def generate_fully_heterogeneous(cfg: GeneratorConfig) -> WcmdpInstance:
    """Instance with every arm sampled independently.

    Per arm: rewards of action 0 are 0 and other rewards are U[0,1];
    transition rows are uniform on the simplex; costs of action 0 are 0 and
    other costs are U[0,1]. Budget coefficients come from the 0.05 grid.
    Deterministic given cfg.seed: alpha is drawn first, then the arms in
    index order (reward table, transition tensor, cost tensor).
    """
    cfg.check()
    if cfg.family != FULLY_HETEROGENEOUS:
        raise ValueError("config family is not fully_heterogeneous")
    rng = np.random.default_rng(cfg.seed)
    alpha = _sample_alpha(rng, cfg.num_constraints)
    arms = [_sample_arm(rng, cfg) for _ in range(cfg.num_arms)]
    return WcmdpInstance.from_arms(arms, alpha)


def generate_typed(cfg: GeneratorConfig) -> WcmdpInstance:
    """Instance with num_types parameter sets, equal-size contiguous blocks.

    Each type is sampled like a fully heterogeneous arm and shared verbatim
    by all arms of that type. Requires num_arms divisible by num_types.
    """
    cfg.check()
    if cfg.family != TYPED:
        raise ValueError("config family is not typed")
    rng = np.random.default_rng(cfg.seed)
    alpha = _sample_alpha(rng, cfg.num_constraints)
    prototypes = [_sample_arm(rng, cfg) for _ in range(cfg.num_types)]
    block = cfg.num_arms // cfg.num_types
    arms = [prototypes[i // block] for i in range(cfg.num_arms)]
    return WcmdpInstance.from_arms(arms, alpha)


def generate(cfg: GeneratorConfig) -> WcmdpInstance:
    if cfg.family == TYPED:
        return generate_typed(cfg)
    return generate_fully_heterogeneous(cfg)


def validate(instance: WcmdpInstance) -> list[str]:
    """Check every model invariant; return one message per violation.

    An empty list means the instance is well formed. Messages name the arm
    index, the offending field, and the measured value.
    """
    out: list[str] = []
    if not instance.arms:
        return ["instance: no arms"]
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    if instance.alpha.shape != (K,):
        out.append(f"instance: alpha has shape {instance.alpha.shape}, expected ({K},)")
    for k, a in enumerate(instance.alpha):
        if not a > 0:
            out.append(f"instance: alpha[{k}] = {a} is not positive")

    r_seen = 0.0
    c_seen = 0.0
    for i, arm in enumerate(instance.arms):
        if arm.transition.shape != (S, A, S):
            out.append(f"arm {i}: transition shape {arm.transition.shape} != ({S},{A},{S})")
            continue
        if arm.reward.shape != (S, A):
            out.append(f"arm {i}: reward shape {arm.reward.shape} != ({S},{A})")
            continue
        if arm.cost.shape != (K, S, A):
            out.append(f"arm {i}: cost shape {arm.cost.shape} != ({K},{S},{A})")
            continue
        sums = arm.transition.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
        for s, a in bad:
            out.append(f"arm {i}: transition row ({s},{a}) sums to {sums[s, a]:.12g}")
        if np.any(arm.transition < 0.0) or np.any(arm.transition > 1.0):
            worst = float(arm.transition.min()) if arm.transition.min() < 0 \
                else float(arm.transition.max())
            out.append(f"arm {i}: transition entry out of [0,1]: {worst:.12g}")
        if np.any(arm.cost < 0.0):
            out.append(f"arm {i}: negative cost entry {float(arm.cost.min()):.12g}")
        nz = np.argwhere(arm.cost[:, :, 0] != 0.0)
        for k, s in nz:
            out.append(
                f"arm {i}: cost[{k}][{s}][0] = {arm.cost[k, s, 0]:.12g}, "
                "action 0 must be cost-free")
        if not np.all(np.isfinite(arm.reward)):
            out.append(f"arm {i}: non-finite reward entry")
        else:
            r_here = float(np.max(np.abs(arm.reward)))
            if r_here > instance.r_max:
                out.append(
                    f"arm {i}: |reward| up to {r_here:.12g} exceeds cached r_max "
                    f"{instance.r_max:.12g}")
            r_seen = max(r_seen, r_here)
        c_seen = max(c_seen, float(np.max(arm.cost)))

    if not out:
        if r_seen != instance.r_max:
            out.append(
                f"instance: cached r_max {instance.r_max:.12g} != measured {r_seen:.12g}")
        if c_seen != instance.c_max:
            out.append(
                f"instance: cached c_max {instance.c_max:.12g} != measured {c_seen:.12g}")
    return out
