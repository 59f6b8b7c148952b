"""Shared domain types: reward tables, function classes, problem instances,
round-by-round history, and deterministic RNG streams.

A multi-armed bandit is represented as a contextual problem with a single
context, so every table has shape (n_contexts, n_arms) and all generic code
paths work on (context, arm) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "GreedyTrapError",
    "ShapeMismatchError",
    "TieError",
    "MissingWarmupError",
    "RewardFunction",
    "FunctionClass",
    "Policy",
    "ProblemInstance",
    "History",
    "RngStream",
    "sample_reward",
    "sample_rewards",
    "sample_context",
]


class GreedyTrapError(Exception):
    """Base class for structured errors raised by this package."""


class ShapeMismatchError(GreedyTrapError):
    pass


class TieError(GreedyTrapError):
    """Raised in strict mode when an argmax over arms is not unique."""

    def __init__(self, message: str, arms: Sequence[int], context: int = 0):
        super().__init__(message)
        self.arms = tuple(int(a) for a in arms)
        self.context = int(context)


class MissingWarmupError(GreedyTrapError):
    pass


def _as_table(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"reward table must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RewardFunction:
    """A finite table of expected rewards, one entry per (context, arm) pair.

    ``grid_units``/``grid_eps``, when set, record that every value is exactly
    ``unit * grid_eps`` for an integer unit. Generators use this to construct
    value coincidences that compare equal under ``==`` (never via arithmetic
    that could round differently).
    """

    values: np.ndarray
    grid_units: Optional[np.ndarray] = None
    grid_eps: Optional[float] = None

    def __post_init__(self):
        table = _as_table(self.values)
        table.setflags(write=False)
        object.__setattr__(self, "values", table)
        if not np.all(np.isfinite(table)):
            raise ValueError("reward table contains non-finite values")
        if self.grid_units is not None:
            units = np.array(self.grid_units, dtype=np.int64)
            if units.ndim == 1:
                units = units[None, :]
            if units.shape != table.shape:
                raise ShapeMismatchError("grid_units shape does not match values")
            if self.grid_eps is None or self.grid_eps <= 0:
                raise ValueError("grid_units requires a positive grid_eps")
            if not np.array_equal(units.astype(np.float64) * self.grid_eps, table):
                raise ValueError("values are not exactly grid_units * grid_eps")
            units.setflags(write=False)
            object.__setattr__(self, "grid_units", units)

    @classmethod
    def from_units(cls, units, eps: float) -> "RewardFunction":
        units = np.asarray(units, dtype=np.int64)
        if units.ndim == 1:
            units = units[None, :]
        return cls(units.astype(np.float64) * eps, grid_units=units, grid_eps=eps)

    @property
    def n_contexts(self) -> int:
        return self.values.shape[0]

    @property
    def n_arms(self) -> int:
        return self.values.shape[1]

    def value(self, context: int, arm: int) -> float:
        return float(self.values[context, arm])

    def same_shape(self, other: "RewardFunction") -> bool:
        return self.values.shape == other.values.shape

    def equals(self, other: "RewardFunction") -> bool:
        return self.same_shape(other) and bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class Policy:
    """A total mapping from contexts to arms; a single arm for the MAB case."""

    arms: np.ndarray

    def __post_init__(self):
        arr = np.array(self.arms, dtype=np.int64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "arms", arr)

    def arm(self, context: int = 0) -> int:
        return int(self.arms[context])

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.arms, other.arms)

    def __hash__(self):
        return hash(self.arms.tobytes())


@dataclass(frozen=True)
class FunctionClass:
    """An ordered, finite set of reward functions with identical shape.

    ``best_arm_unique`` declares (and is validated to mean) that every member
    has a unique per-context argmax, which the strict tie mode relies on.
    """

    members: tuple
    best_arm_unique: bool = False

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("function class must be nonempty")
        shape = members[0].values.shape
        for i, m in enumerate(members):
            if m.values.shape != shape:
                raise ShapeMismatchError(f"member {i} has shape {m.values.shape}, expected {shape}")
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                if members[i].equals(members[j]):
                    raise ValueError(f"duplicate members at indices {i} and {j}")
        if self.best_arm_unique:
            for i, m in enumerate(members):
                maxima = m.values.max(axis=1, keepdims=True)
                if np.any((m.values == maxima).sum(axis=1) > 1):
                    raise ValueError(f"member {i} has a tied per-context argmax but "
                                     "best_arm_unique was declared")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i: int) -> RewardFunction:
        return self.members[i]

    @property
    def n_contexts(self) -> int:
        return self.members[0].n_contexts

    @property
    def n_arms(self) -> int:
        return self.members[0].n_arms

    def stacked(self) -> np.ndarray:
        """All member tables as one (n_members, X, K) array."""
        return np.stack([m.values for m in self.members])

    def index_of(self, f: RewardFunction) -> int:
        for i, m in enumerate(self.members):
            if m.equals(f):
                return i
        raise ValueError("function is not a member of this class")


@dataclass(frozen=True)
class ProblemInstance:
    """A realizable instance: the true table, its class, Gaussian noise scale,
    context arrival distribution, and exogenous warm-up sample counts."""

    true_function: RewardFunction
    function_class: FunctionClass
    noise_sigma: float
    context_probs: Optional[np.ndarray] = None
    warmup_counts: Optional[np.ndarray] = None
    bounded_rewards: bool = True

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        shape = self.true_function.values.shape
        if self.function_class.members[0].values.shape != shape:
            raise ShapeMismatchError("class shape does not match true function")
        self.function_class.index_of(self.true_function)  # realizability
        X, K = shape
        if self.context_probs is None:
            probs = np.full(X, 1.0 / X)
        else:
            probs = np.array(self.context_probs, dtype=np.float64).reshape(-1)
            if probs.shape[0] != X:
                raise ShapeMismatchError("context_probs length does not match contexts")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("context_probs must be a probability distribution")
            if np.any(probs <= 0):
                raise ValueError("every context must have positive arrival probability")
        probs.setflags(write=False)
        object.__setattr__(self, "context_probs", probs)
        if self.warmup_counts is None:
            counts = np.ones((X, K), dtype=np.int64)
        else:
            counts = np.array(self.warmup_counts, dtype=np.int64)
            if counts.ndim == 1:
                counts = counts[None, :]
            if counts.shape != shape:
                raise ShapeMismatchError("warmup_counts shape does not match instance")
            if np.any(counts < 0):
                raise ValueError("warmup counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "warmup_counts", counts)
        if self.bounded_rewards:
            vals = np.concatenate([m.values.ravel() for m in self.function_class.members])
            if vals.min() < 0.0 or vals.max() > 1.0:
                raise ValueError("bounded_rewards declared but some mean lies outside [0, 1]")

    @property
    def n_contexts(self) -> int:
        return self.true_function.n_contexts

    @property
    def n_arms(self) -> int:
        return self.true_function.n_arms

    @property
    def true_index(self) -> int:
        return self.function_class.index_of(self.true_function)

    @property
    def p0(self) -> float:
        """Smallest context arrival probability."""
        return float(self.context_probs.min())

    @property
    def warmup_total(self) -> int:
        return int(self.warmup_counts.sum())

    @property
    def is_mab(self) -> bool:
        return self.n_contexts == 1


class History:
    """Round log plus incremental per-(context, arm) pull counts and sums.

    Empirical means are derived as sum/count on read, so they always equal the
    arithmetic mean of the logged rewards; a replay of the raw log reproduces
    the incremental state exactly.
    """

    def __init__(self, n_contexts: int, n_arms: int):
        self.n_contexts = int(n_contexts)
        self.n_arms = int(n_arms)
        self.rounds: list[tuple[int, int, float]] = []
        self.counts = np.zeros((n_contexts, n_arms), dtype=np.int64)
        self.sums = np.zeros((n_contexts, n_arms), dtype=np.float64)
        self.warmup_size = 0

    def record(self, context: int, arm: int, reward: float) -> "History":
        if not (0 <= context < self.n_contexts) or not (0 <= arm < self.n_arms):
            raise ShapeMismatchError(
                f"(context={context}, arm={arm}) outside ({self.n_contexts}, {self.n_arms})")
        reward = float(reward)
        self.rounds.append((int(context), int(arm), reward))
        self.counts[context, arm] += 1
        self.sums[context, arm] += reward
        return self

    def mark_warmup_complete(self):
        self.warmup_size = len(self.rounds)

    def __len__(self) -> int:
        return len(self.rounds)

    def count(self, context: int, arm: int) -> int:
        return int(self.counts[context, arm])

    def mean(self, context: int, arm: int) -> float:
        n = self.counts[context, arm]
        if n == 0:
            raise MissingWarmupError(f"(context={context}, arm={arm}) has no samples")
        return float(self.sums[context, arm] / n)

    def means(self) -> np.ndarray:
        """Empirical mean table with NaN marking never-sampled pairs."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.sums / self.counts
        out[self.counts == 0] = np.nan
        return out

    def replay_state(self) -> tuple[np.ndarray, np.ndarray]:
        """Recompute (counts, sums) from the raw round log."""
        counts = np.zeros_like(self.counts)
        sums = np.zeros_like(self.sums)
        for context, arm, reward in self.rounds:
            counts[context, arm] += 1
            sums[context, arm] += reward
        return counts, sums

    def copy(self) -> "History":
        other = History(self.n_contexts, self.n_arms)
        other.rounds = list(self.rounds)
        other.counts = self.counts.copy()
        other.sums = self.sums.copy()
        other.warmup_size = self.warmup_size
        return other


@dataclass(frozen=True)
class RngStream:
    """Addressable deterministic random stream.

    The same (master_seed, stream_id) pair reproduces the identical draw
    sequence bit-for-bit regardless of process, thread count, or how many
    other streams exist. Monte Carlo trials own stream_id = trial index.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))


def sample_reward(instance: ProblemInstance, context: int, arm: int,
                  rng: np.random.Generator) -> float:
    """One reward draw: true mean plus N(0, sigma^2) noise.

    With sigma = 0 this returns the table value exactly. A standard normal is
    consumed either way so draw sequences line up across sigma settings.
    """
    mean = instance.true_function.value(context, arm)
    return mean + instance.noise_sigma * rng.standard_normal()


def sample_rewards(instance: ProblemInstance, context: int, arm: int,
                   rng: np.random.Generator, size: int) -> np.ndarray:
    mean = instance.true_function.value(context, arm)
    return mean + instance.noise_sigma * rng.standard_normal(size)


def sample_context(instance: ProblemInstance, rng: np.random.Generator) -> int:
    """Draw a context index from the arrival distribution.

    Single-context instances return 0 without consuming randomness.
    """
    if instance.n_contexts == 1:
        return 0
    cum = np.cumsum(instance.context_probs)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, instance.n_contexts - 1)
