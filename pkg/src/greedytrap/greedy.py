"""The greedy algorithm: exact least-squares fit over a finite class, argmax
play with strict or randomized tie-breaking, warm-up handling, and the
warm-up/perpetual concentration event checkers used by the failure analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analysis import DecoyCertificate
from .core import (
    FunctionClass,
    History,
    MissingWarmupError,
    Policy,
    ProblemInstance,
    RewardFunction,
    RngStream,
    ShapeMismatchError,
    TieError,
    sample_reward,
)

__all__ = [
    "GreedyState",
    "EventDiagnostics",
    "EpisodeResult",
    "mse",
    "regression_oracle",
    "greedy_step",
    "run_warmup",
    "run_episode",
    "check_event_e1",
    "check_event_e2",
    "beta",
    "suboptimal_pull_cap",
    "decoy_pair_mask",
    "write_trajectory_csv",
]

TIE_MODES = ("strict", "randomized")


def mse(history: History, f: RewardFunction) -> float:
    """Pull-count-weighted squared error between empirical means and f.
    Never-sampled pairs contribute nothing."""
    if f.values.shape != (history.n_contexts, history.n_arms):
        raise ShapeMismatchError("function shape does not match history")
    sampled = history.counts > 0
    if not sampled.any():
        return 0.0
    n = history.counts[sampled]
    means = history.sums[sampled] / n
    return float(np.dot(n, (means - f.values[sampled]) ** 2))


def regression_oracle(history: History, cls: FunctionClass) -> tuple[RewardFunction, int]:
    """Member minimizing the weighted squared error; exact ties resolve to the
    lowest member index, deterministically."""
    scores = [mse(history, m) for m in cls.members]
    idx = int(np.argmin(scores))
    return cls.members[idx], idx


@dataclass
class GreedyState:
    """Mutable per-episode state. ``q0`` is the guaranteed minimal probability
    each tied arm receives in randomized mode; the implementation samples
    uniformly over the tied set, so q0 = 1/n_arms in the worst case."""

    instance: ProblemInstance
    history: History
    tie_mode: str = "strict"
    round: int = 0

    def __post_init__(self):
        if self.tie_mode not in TIE_MODES:
            raise ValueError(f"tie_mode must be one of {TIE_MODES}")

    @property
    def q0(self) -> float:
        return 1.0 / self.instance.n_arms


@dataclass(frozen=True)
class EventDiagnostics:
    """Outcome of the warm-up band check (e1), the last round through which the
    decoy play's empirical means stayed in band (e2), and whether the episode
    never deviated from the decoy play."""

    e1_held: bool
    e2_held_through: int
    stuck_on_decoy: bool
    first_deviation_round: Optional[int]

    def __post_init__(self):
        if self.stuck_on_decoy and self.first_deviation_round is not None:
            raise ValueError("a stuck episode cannot have a deviation round")


@dataclass
class EpisodeResult:
    history: History
    contexts: np.ndarray          # (T,) context per round, warm-up included
    arms: np.ndarray              # (T,)
    rewards: np.ndarray           # (T,)
    chosen_members: np.ndarray    # (T,) fitted member index; -1 during warm-up
    policies: np.ndarray          # (T, X) played policy; warm-up rows are -1
    regret: np.ndarray            # (T,) cumulative mean-based regret
    diagnostics: Optional[EventDiagnostics]
    warmup_size: int

    @property
    def horizon(self) -> int:
        return len(self.arms)


def _pick_arm(row: np.ndarray, tie_mode: str, rng: Optional[np.random.Generator],
              context: int, tie_draw: Optional[float] = None) -> int:
    top = np.flatnonzero(row == row.max())
    if len(top) == 1:
        return int(top[0])
    if tie_mode == "strict":
        raise TieError(f"tied argmax at context {context}", arms=top, context=context)
    u = rng.random() if tie_draw is None else tie_draw
    return int(top[min(int(u * len(top)), len(top) - 1)])


def greedy_step(state: GreedyState, context: int,
                rng: Optional[np.random.Generator] = None) -> tuple[int, int]:
    """One post-warm-up decision: fit the class, play the fitted member's best
    arm for the context. Returns (arm, fitted member index)."""
    f_t, idx = regression_oracle(state.history, state.instance.function_class)
    if state.tie_mode == "randomized" and rng is None:
        raise ValueError("randomized tie mode needs an rng")
    arm = _pick_arm(f_t.values[context], state.tie_mode, rng, context)
    return arm, idx


def decoy_pair_mask(instance_shape: tuple[int, int], cert: DecoyCertificate) -> np.ndarray:
    """Boolean (X, K) mask of the pairs the decoy's optimal play can touch:
    (x, arm) for every arm the decoy considers optimal at x."""
    X, K = instance_shape
    mask = np.zeros((X, K), dtype=bool)
    if cert.optimal_arm_sets is not None:
        for x, arms in enumerate(cert.optimal_arm_sets):
            for a in arms:
                mask[x, a] = True
    else:
        for x in range(X):
            mask[x, cert.decoy_policy.arm(x)] = True
    return mask


def e1_band_centers(instance: ProblemInstance, cert: DecoyCertificate) -> np.ndarray:
    """Where the warm-up anti-concentration event wants each off-decoy
    empirical mean to sit: exactly at the decoy's table."""
    return cert.decoy.values.copy()


def run_warmup(instance: ProblemInstance, rng: np.random.Generator,
               force_e1_cert: Optional[DecoyCertificate] = None) -> History:
    """Draw the exogenous warm-up samples, one pass in row-major (context,
    arm, repetition) order. With ``force_e1_cert`` the off-decoy samples are
    planted at the decoy's values (band centers) instead of drawn; draws are
    still consumed so downstream randomness is unchanged."""
    history = History(instance.n_contexts, instance.n_arms)
    forced = None
    if force_e1_cert is not None:
        mask = decoy_pair_mask((instance.n_contexts, instance.n_arms), force_e1_cert)
        forced = (~mask, e1_band_centers(instance, force_e1_cert))
    for x in range(instance.n_contexts):
        for a in range(instance.n_arms):
            for _ in range(int(instance.warmup_counts[x, a])):
                r = sample_reward(instance, x, a, rng)
                if forced is not None and forced[0][x, a]:
                    r = float(forced[1][x, a])
                history.record(x, a, r)
    history.mark_warmup_complete()
    return history


def run_episode(instance: ProblemInstance, horizon: int, tie_mode: str,
                rng: RngStream, decoy: Optional[DecoyCertificate] = None,
                force_e1: bool = False,
                sigma: Optional[float] = None) -> EpisodeResult:
    """One full trajectory: warm-up, then greedy play to the horizon.

    Thin wrapper over the vectorized trial engine with a single trial, so
    unit-level episodes and bulk Monte Carlo share one implementation.
    """
    from . import _engine

    res = _engine.run_finite_trials(
        instance, horizon=horizon, tie_mode=tie_mode,
        master_seed=rng.master_seed, trial_indices=[rng.stream_id],
        decoy=decoy, force_e1=force_e1, sigma=sigma, record_trajectory=True)
    return res.trajectories[0]


def check_event_e1(warmup: History, cert: DecoyCertificate) -> bool:
    """Warm-up anti-concentration: every off-decoy pair's warm-up mean lies
    strictly within half the decoy's gap of the decoy's table."""
    mask = decoy_pair_mask((warmup.n_contexts, warmup.n_arms), cert)
    radius = cert.decoy_gap / 2.0
    for x in range(warmup.n_contexts):
        for a in range(warmup.n_arms):
            if mask[x, a]:
                continue
            if warmup.counts[x, a] == 0:
                raise MissingWarmupError(f"pair ({x}, {a}) has no warm-up sample")
            if not abs(warmup.mean(x, a) - cert.decoy.value(x, a)) < radius:
                return False
    return True


def check_event_e2(result: EpisodeResult, cert: DecoyCertificate,
                   true_function: RewardFunction) -> int:
    """Last round through which every decoy-play pair's running empirical mean
    stayed within half the decoy's gap of the true table (non-strict bound).

    Replays the round log, so it is independent of any bookkeeping the episode
    runner did.
    """
    X, K = true_function.values.shape
    mask = decoy_pair_mask((X, K), cert)
    radius = cert.decoy_gap / 2.0
    counts = np.zeros((X, K), dtype=np.int64)
    sums = np.zeros((X, K), dtype=np.float64)
    t0 = result.warmup_size
    held_through = result.horizon
    for t in range(result.horizon):
        x, a, r = int(result.contexts[t]), int(result.arms[t]), float(result.rewards[t])
        counts[x, a] += 1
        sums[x, a] += r
        if t + 1 <= t0:
            continue
        sampled = mask & (counts > 0)
        means = np.where(sampled, sums / np.maximum(counts, 1), 0.0)
        dev = np.abs(means - true_function.values)
        if np.any(sampled & (dev > radius)):
            held_through = t  # round indices are 1-based; violation at t+1
            break
    return held_through


def beta(n: int, n_arms: int, delta: float, n_contexts: int = 1) -> float:
    """Anytime confidence radius for a 1-subgaussian empirical mean after n
    samples, union-bounded over all (context, arm) pairs and sample counts:

        sqrt((2/n) * log(pi^2 * K * X * n^2 / (3 * delta)))

    Rewards with scale sigma use sigma * beta(n).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    inside = math.pi ** 2 * n_arms * n_contexts * n * n / (3.0 * delta)
    return math.sqrt(2.0 / n * math.log(inside))


def suboptimal_pull_cap(n_arms: int, gamma: float, t: int, c_slack: float = 64.0,
                        n_contexts: int = 1, p0: float = 1.0) -> float:
    """Empirical cap on total suboptimal pulls by round t for self-identifiable
    instances: c_slack * (X*K / gamma)^2 * ln(t) / p0. The constant is a slack
    factor fixed by the acceptance tests, not a derived bound."""
    return c_slack * (n_contexts * n_arms / gamma) ** 2 * math.log(t) / p0


def write_trajectory_csv(result: EpisodeResult, path) -> None:
    """Round-by-round export: round, context, arm, reward, chosen_member,
    cumulative_regret. Warm-up rounds carry chosen_member = -1."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,context,arm,reward,chosen_member,cumulative_regret\n")
        for t in range(result.horizon):
            fh.write(f"{t + 1},{int(result.contexts[t])},{int(result.arms[t])},"
                     f"{result.rewards[t]!r},{int(result.chosen_members[t])},"
                     f"{result.regret[t]!r}\n")
