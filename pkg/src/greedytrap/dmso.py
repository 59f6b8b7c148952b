"""Decision making with structured observations: finite models mapping
policies to reward-observation distributions, maximum-likelihood greedy play,
KL/ratio divergences, and the ghost-process diagnostics used to study when
the likelihood maximizer gets trapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import GreedyTrapError, RngStream, TieError

__all__ = [
    "OutcomeSpace",
    "Model",
    "ModelClass",
    "LikelihoodState",
    "DmsoEpisodeResult",
    "log_likelihood_update",
    "kl_divergence",
    "renyi_inf",
    "model_gap",
    "phi_expected",
    "mle_greedy_step",
    "default_warmup_size",
    "warmup_policy_sequence",
    "run_dmso_episode",
    "is_self_identifiable_dmso",
    "find_decoys_dmso",
    "model_class_from_cb",
]


class BoundedRatioError(GreedyTrapError):
    """The class violates the bounded mass-ratio requirement: some outcome has
    zero mass under one model and positive mass under another (same policy)."""


@dataclass(frozen=True)
class OutcomeSpace:
    rewards: tuple
    observations: tuple

    def __post_init__(self):
        rewards = tuple(float(r) for r in self.rewards)
        observations = tuple(str(o) for o in self.observations)
        if not rewards or not observations:
            raise ValueError("rewards and observations must be nonempty")
        if len(set(rewards)) != len(rewards) or len(set(observations)) != len(observations):
            raise ValueError("duplicate reward values or observation labels")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "observations", observations)

    @property
    def n_outcomes(self) -> int:
        return len(self.rewards) * len(self.observations)

    def reward_of_outcome(self) -> np.ndarray:
        """Reward value per flattened (reward, observation) outcome index."""
        r = np.asarray(self.rewards, dtype=np.float64)
        return np.repeat(r, len(self.observations))


@dataclass(frozen=True)
class Model:
    """One probability table over reward-observation outcomes per policy;
    shape (n_policies, n_rewards * n_observations)."""

    outcome_space: OutcomeSpace
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim == 3:
            probs = probs.reshape(probs.shape[0], -1)
        if probs.ndim != 2 or probs.shape[1] != self.outcome_space.n_outcomes:
            raise ValueError("probability table shape does not match the outcome space")
        if np.any(probs < 0):
            raise ValueError("negative probability mass")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each policy's outcome distribution must sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_policies(self) -> int:
        return self.probs.shape[0]

    def distribution(self, policy: int) -> np.ndarray:
        return self.probs[policy]

    def expected_reward(self, policy: int) -> float:
        return float(np.dot(self.probs[policy], self.outcome_space.reward_of_outcome()))

    def expected_rewards(self) -> np.ndarray:
        return self.probs @ self.outcome_space.reward_of_outcome()

    def coincides_on(self, other: "Model", policy: int) -> bool:
        return bool(np.array_equal(self.probs[policy], other.probs[policy]))


def _max_mass_ratio(members: Sequence[Model]) -> tuple[float, bool]:
    """(largest finite mass ratio across models/policies/outcomes, support_ok).
    support_ok is False when zero-mass outcomes are not shared per policy."""
    stacked = np.stack([m.probs for m in members])  # (m, n_pol, n_out)
    zero = stacked == 0.0
    support_ok = bool(np.all(zero.all(axis=0) | (~zero).all(axis=0)))
    pos = np.where(stacked > 0, stacked, np.nan)
    with np.errstate(invalid="ignore"):
        hi = np.nanmax(pos, axis=0)
        lo = np.nanmin(pos, axis=0)
        ratios = hi / lo
    b = float(np.nanmax(ratios)) if np.isfinite(ratios).any() else 1.0
    return b, support_ok


@dataclass(frozen=True)
class ModelClass:
    """A finite, realizable model class.

    By default construction enforces the bounded mass-ratio requirement
    (shared zero sets per policy) and that every member has a unique optimal
    policy; pass ``validate=False`` to experiment with degenerate classes.
    """

    members: tuple
    true_index: int
    validate: bool = True
    mass_ratio_bound: float = field(init=False, default=math.inf)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("model class must be nonempty")
        space = members[0].outcome_space
        shape = members[0].probs.shape
        for i, m in enumerate(members):
            if m.outcome_space != space or m.probs.shape != shape:
                raise ValueError(f"member {i} has a mismatched outcome space")
        if not 0 <= self.true_index < len(members):
            raise ValueError("true_index out of range")
        b, support_ok = _max_mass_ratio(members)
        if self.validate:
            if not support_ok:
                raise BoundedRatioError(
                    "zero-mass outcomes must be zero in all members or in none, per policy")
            for i, m in enumerate(members):
                vals = m.expected_rewards()
                if (vals == vals.max()).sum() > 1:
                    raise TieError(f"member {i} has tied optimal policies",
                                   arms=np.flatnonzero(vals == vals.max()))
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "mass_ratio_bound", b if support_ok else math.inf)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def outcome_space(self) -> OutcomeSpace:
        return self.members[0].outcome_space

    @property
    def n_policies(self) -> int:
        return self.members[0].n_policies

    @property
    def true_model(self) -> Model:
        return self.members[self.true_index]

    def optimal_policies(self) -> np.ndarray:
        """Each member's optimal policy (lowest index on exact value ties)."""
        return np.array([int(np.argmax(m.expected_rewards())) for m in self.members],
                        dtype=np.int64)

    def log_probs(self) -> np.ndarray:
        """(n_policies, n_outcomes, n_members) log-mass table; -inf at zeros."""
        stacked = np.stack([m.probs for m in self.members])  # (m, pol, out)
        with np.errstate(divide="ignore"):
            lp = np.log(stacked)
        return np.transpose(lp, (1, 2, 0))


class LikelihoodState:
    """Running log-likelihood per member; starts at 0 (unit likelihood)."""

    def __init__(self, n_members: int):
        self.log_likelihood = np.zeros(n_members)
        self.round = 0

    def copy(self) -> "LikelihoodState":
        other = LikelihoodState(len(self.log_likelihood))
        other.log_likelihood = self.log_likelihood.copy()
        other.round = self.round
        return other


def log_likelihood_update(state: LikelihoodState, cls: ModelClass, policy: int,
                          outcome_index: int) -> LikelihoodState:
    """Add each member's log-mass of the observed outcome. Members assigning
    zero mass drop to -inf permanently."""
    if not 0 <= outcome_index < cls.outcome_space.n_outcomes:
        raise ValueError("outcome index outside the outcome space")
    masses = np.array([m.probs[policy, outcome_index] for m in cls.members])
    if np.all(masses == 0.0):
        raise ValueError("observed outcome has zero mass under every member")
    with np.errstate(divide="ignore"):
        state.log_likelihood += np.log(masses)
    state.round += 1
    return state


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) over a shared finite outcome set; +inf on support violation."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(support & (q == 0)):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def renyi_inf(p: np.ndarray, q: np.ndarray) -> float:
    """Max-log-ratio divergence: max over outcomes with p > 0 of ln(p/q)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    support = p > 0
    if np.any(support & (q == 0)):
        import warnings
        warnings.warn("support violation: max-ratio divergence is infinite")
        return math.inf
    return float(np.max(np.log(p[support] / q[support])))


def model_gap(cls: ModelClass, index: Optional[int] = None) -> float:
    """Smallest KL between the given member's outcome distribution and any
    other member's, over policies where they differ; +inf if none differ."""
    i = cls.true_index if index is None else index
    base = cls.members[i]
    best = math.inf
    for j, other in enumerate(cls.members):
        if j == i:
            continue
        for policy in range(cls.n_policies):
            if base.coincides_on(other, policy):
                continue
            best = min(best, kl_divergence(base.distribution(policy),
                                           other.distribution(policy)))
    return best


def phi_expected(cls: ModelClass, model: Model, reference: Model, policy: int) -> float:
    """Expected per-round log-likelihood advantage of ``reference`` over
    ``model`` when outcomes follow reference's distribution: exactly the KL
    between the two outcome distributions (0 iff they coincide)."""
    return kl_divergence(reference.distribution(policy), model.distribution(policy))


def mle_greedy_step(state: LikelihoodState, cls: ModelClass) -> tuple[int, int]:
    """(policy, member index): the highest-likelihood member (lowest index on
    exact ties) and its optimal policy. A tied optimal policy is an error."""
    idx = int(np.argmax(state.log_likelihood))
    vals = cls.members[idx].expected_rewards()
    top = np.flatnonzero(vals == vals.max())
    if len(top) > 1:
        raise TieError(f"member {idx} has tied optimal policies", arms=top)
    return int(top[0]), idx


def default_warmup_size(cls: ModelClass, c0: float = 4.0) -> int:
    """Per-policy warm-up sample count: c0 * (ln(B)/gap)^2 * ln|class|,
    rounded up to an even integer (the decoy-round bookkeeping splits it in
    half). c0 is a tunable knob, not a derived constant."""
    b = cls.mass_ratio_bound
    gap = model_gap(cls)
    if not math.isfinite(b) or not math.isfinite(gap) or gap <= 0:
        raise ValueError("warm-up sizing needs a finite mass-ratio bound and a positive gap")
    raw = c0 * (math.log(b) / gap) ** 2 * math.log(max(len(cls), 2))
    n0 = max(2, int(math.ceil(raw)))
    return n0 + (n0 % 2)


def warmup_policy_sequence(cls: ModelClass, n0: int, decoy_index: int) -> np.ndarray:
    """Exogenous warm-up order: every policy n0 times, with the decoy model's
    optimal policy occupying the final block so its last n0/2 rounds come
    after the warm-up prefix used by the first trap event."""
    if n0 % 2 != 0:
        raise ValueError("per-policy warm-up count must be even")
    decoy_policy = int(cls.optimal_policies()[decoy_index])
    order = [p for p in range(cls.n_policies) if p != decoy_policy] + [decoy_policy]
    return np.repeat(np.asarray(order, dtype=np.int64), n0)


@dataclass
class DmsoEpisodeResult:
    policies: np.ndarray            # (T,) chosen policy per round (warm-up included)
    outcomes: np.ndarray            # (T,) flattened outcome index
    log_likelihood: np.ndarray      # final per-member log-likelihood
    warmup_size: int

    @property
    def horizon(self) -> int:
        return len(self.policies)
    e1_held: bool
    e2_held_through_j: int          # decoy-round counter, not a global round
    stuck_on_decoy: bool
    first_deviation_round: Optional[int]
    regret: np.ndarray              # (T,) cumulative mean-reward regret
    ghost: bool


def run_dmso_episode(cls: ModelClass, horizon: int, n0: int, rng: RngStream,
                     decoy_index: int, ghost: bool = False) -> DmsoEpisodeResult:
    """One maximum-likelihood greedy trajectory with explicit warm-up ordering
    and trap diagnostics. ``ghost`` draws warm-up outcomes from the decoy
    model instead of the true one (the counterfactual measure used to
    lower-bound trap probabilities)."""
    from . import _engine_dmso

    res = _engine_dmso.run_dmso_trials(
        cls, horizon=horizon, n0=n0, master_seed=rng.master_seed,
        trial_indices=[rng.stream_id], decoy_index=decoy_index, ghost=ghost,
        record_trajectory=True)
    return res.trajectories[0]


def is_self_identifiable_dmso(cls: ModelClass):
    """Distribution-level analogue of the reward-table check: pinning a
    suboptimal policy's true outcome distribution must rule it out under
    every member that matches it. Returns (verdict, witness member index)."""
    decoys = find_decoys_dmso(cls)
    if decoys:
        return False, decoys[0]
    return True, None


def find_decoys_dmso(cls: ModelClass) -> list[int]:
    """Members whose optimal policy's outcome distribution coincides with the
    true model's while the policy earns strictly less true expected reward."""
    true = cls.true_model
    true_vals = true.expected_rewards()
    vstar = true_vals.max()
    out = []
    for i, member in enumerate(cls.members):
        if i == cls.true_index:
            continue
        vals = member.expected_rewards()
        pol = int(np.argmax(vals))
        if member.coincides_on(true, pol) and true_vals[pol] < vstar:
            out.append(i)
    return out


def model_class_from_cb(instance, reward_grid: Sequence[float],
                        noise_width: float, max_policies: int = 256) -> ModelClass:
    """Embed a finite-class contextual instance as a model class: policies are
    context-to-arm maps, observations are context labels, and rewards follow a
    discretized Gaussian on a shared grid so mass ratios stay finite.

    ``noise_width`` is the discretized noise scale. Intended for small
    cross-checking instances, not production simulation.
    """
    import itertools

    X, K = instance.n_contexts, instance.n_arms
    if K ** X > max_policies:
        raise ValueError(f"policy space {K}**{X} exceeds the cap {max_policies}")
    grid = np.asarray(sorted(float(v) for v in reward_grid))
    space = OutcomeSpace(rewards=tuple(grid), observations=tuple(f"x{j}" for j in range(X)))
    policies = list(itertools.product(range(K), repeat=X))

    def noise_pmf(mean: float) -> np.ndarray:
        w = np.exp(-0.5 * ((grid - mean) / noise_width) ** 2)
        return w / w.sum()

    members = []
    for f in instance.function_class.members:
        table = np.zeros((len(policies), len(grid), X))
        for p_idx, pol in enumerate(policies):
            for x in range(X):
                table[p_idx, :, x] = instance.context_probs[x] * noise_pmf(f.values[x, pol[x]])
        members.append(Model(space, table.reshape(len(policies), -1)))
    return ModelClass(tuple(members), true_index=instance.true_index, validate=False)
