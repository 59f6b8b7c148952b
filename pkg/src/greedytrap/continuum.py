"""Infinite function classes for the single-context setting: membership and
interior tests, perturbation-robust self-identifiability, the empirical-fit
regression oracle, and the shifted/tightened trap-event checkers.

Built-in classes: an L2 ball (exact interior test, exact weighted projection)
and a finite-class wrapper used for cross-validation. Other classes can be
expressed as membership predicates but have no interior or violation-search
support in this version and say so explicitly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import GreedyTrapError, History, MissingWarmupError, RngStream

logger = logging.getLogger(__name__)

__all__ = [
    "UnsupportedClassError",
    "L2Ball",
    "FiniteClassMembership",
    "ContinuumInstance",
    "FitResult",
    "is_interior",
    "is_eps_self_identifiable",
    "empirical_fit_oracle",
    "check_event_e1_inf",
    "check_event_e2_inf",
    "e1_centers_inf",
    "run_continuum_episode",
]


class UnsupportedClassError(GreedyTrapError):
    pass


def _as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entries")
    return v


@dataclass(frozen=True)
class L2Ball:
    """All reward vectors within Euclidean distance ``radius`` of ``center``
    (closed ball)."""

    center: np.ndarray
    radius: float
    description: str = "L2 ball"

    def __post_init__(self):
        center = _as_vector(self.center)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def n_arms(self) -> int:
        return len(self.center)

    def contains(self, table) -> bool:
        f = _as_vector(table)
        return float(np.sum((f - self.center) ** 2)) <= self.radius ** 2

    def is_interior(self, table, eps: float) -> bool:
        # Closed-neighbourhood convention: distance exactly radius - eps counts.
        f = _as_vector(table)
        return float(np.linalg.norm(f - self.center)) <= self.radius - eps

    def violation_cost(self, fstar: np.ndarray, arm: int, eps: float):
        """Cheapest member (squared distance from center) that keeps the arm's
        value within eps of truth while making the arm a maximizer, together
        with that member. Minimizes a convex piecewise-quadratic in the arm's
        value by scanning its breakpoint segments."""
        c = self.center
        lo = fstar[arm] - eps
        hi = fstar[arm] + eps
        others = np.delete(np.arange(len(c)), arm)

        def cost2(v: float) -> float:
            return (v - c[arm]) ** 2 + float(np.sum(np.maximum(c[others] - v, 0.0) ** 2))

        candidates = [lo, hi]
        cuts = sorted(set([lo, hi] + [float(x) for x in c[others] if lo < x < hi]))
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            active = c[others] > mid
            v_star = (c[arm] + float(c[others][active].sum())) / (1 + int(active.sum()))
            candidates.append(min(max(v_star, a), b))
        v_best = min(candidates, key=cost2)
        member = np.minimum(c, v_best)
        member[arm] = v_best
        return cost2(v_best), member

    def project_weighted(self, means: np.ndarray, weights: np.ndarray):
        """Exact minimizer of sum_a w_a (means_a - f_a)^2 over the ball.

        Inside the ball the means themselves are optimal. Otherwise the
        KKT system gives f(lam) = (w*means + lam*center) / (w + lam) with the
        multiplier solving ||f(lam) - center|| = radius; the distance is
        strictly decreasing in lam, so bisection is exact to tolerance.
        Returns (table, lambda).
        """
        means = _as_vector(means)
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if np.any(w <= 0):
            raise MissingWarmupError("projection needs a sample on every arm")
        if self.contains(means):
            return means.copy(), 0.0

        def dist2(lam: float) -> float:
            f = (w * means + lam * self.center) / (w + lam)
            return float(np.sum((f - self.center) ** 2))

        target = self.radius ** 2
        lo, hi = 0.0, 1.0
        while dist2(hi) > target:
            hi *= 2.0
            if hi > 1e18:
                raise RuntimeError("projection multiplier search diverged")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if dist2(mid) > target:
                lo = mid
            else:
                hi = mid
        lam = hi
        return (w * means + lam * self.center) / (w + lam), lam


@dataclass(frozen=True)
class FiniteClassMembership:
    """Wraps an explicit finite set of reward vectors so finite instances can
    cross-validate the continuum code paths."""

    tables: tuple
    description: str = "finite class"

    def __post_init__(self):
        tabs = tuple(_as_vector(t) for t in self.tables)
        for t in tabs:
            t.setflags(write=False)
        object.__setattr__(self, "tables", tabs)

    @property
    def n_arms(self) -> int:
        return len(self.tables[0])

    def contains(self, table) -> bool:
        f = _as_vector(table)
        return any(np.array_equal(f, t) for t in self.tables)

    def is_interior(self, table, eps: float) -> bool:
        # A finite set has empty interior for any positive margin.
        if eps == 0:
            return self.contains(table)
        return False

    def violation_members(self, fstar: np.ndarray, arm: int, eps: float):
        out = []
        for t in self.tables:
            if abs(t[arm] - fstar[arm]) <= eps and t[arm] == t.max():
                out.append(t)
        return out


@dataclass(frozen=True)
class ContinuumInstance:
    """Single-context instance over a parametric class."""

    true_table: np.ndarray
    function_class: object
    noise_sigma: float
    warmup_counts: Optional[np.ndarray] = None
    bounded_rewards: bool = False

    def __post_init__(self):
        table = _as_vector(self.true_table)
        table.setflags(write=False)
        object.__setattr__(self, "true_table", table)
        if not self.function_class.contains(table):
            raise ValueError("true table is not a member of the class")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.warmup_counts is None:
            counts = np.ones(len(table), dtype=np.int64)
        else:
            counts = np.array(self.warmup_counts, dtype=np.int64).reshape(-1)
            if len(counts) != len(table):
                raise ValueError("warmup_counts length does not match arms")
        counts.setflags(write=False)
        object.__setattr__(self, "warmup_counts", counts)

    @property
    def n_arms(self) -> int:
        return len(self.true_table)

    @property
    def warmup_total(self) -> int:
        return int(self.warmup_counts.sum())


@dataclass(frozen=True)
class FitResult:
    in_class: bool
    table: Optional[np.ndarray]
    projected: bool = False
    lam: float = 0.0


def is_interior(table, cls, eps: float) -> bool:
    if not hasattr(cls, "is_interior"):
        raise UnsupportedClassError(f"{getattr(cls, 'description', cls)!r} has no interior test")
    return cls.is_interior(table, eps)


def is_eps_self_identifiable(instance: ContinuumInstance, eps: float):
    """True iff no member of the class can make a truth-suboptimal arm optimal
    while staying within eps of the arm's true value. Returns (verdict,
    witness) where the witness is the violating (arm, member table) pair."""
    fstar = instance.true_table
    cls = instance.function_class
    best = fstar.max()
    for arm in range(instance.n_arms):
        if fstar[arm] == best:
            continue
        if isinstance(cls, L2Ball):
            cost2, member = cls.violation_cost(fstar, arm, eps)
            if cost2 <= cls.radius ** 2:
                return False, (arm, member)
        elif isinstance(cls, FiniteClassMembership):
            hits = cls.violation_members(fstar, arm, eps)
            if hits:
                return False, (arm, hits[0])
        else:
            raise UnsupportedClassError(
                f"{getattr(cls, 'description', cls)!r} has no violation search")
    return True, None


def empirical_fit_oracle(history: History, cls, allow_projection: bool = False) -> FitResult:
    """If the table of empirical means is itself a member, it is the unique
    weighted-least-squares minimizer and is returned verbatim. Otherwise the
    caller gets NotInClass, or, on request, the exact weighted projection
    (logged: simulation convenience, not part of the analyzed algorithm)."""
    if history.n_contexts != 1:
        raise UnsupportedClassError("parametric classes are single-context")
    if np.any(history.counts[0] == 0):
        raise MissingWarmupError("every arm needs at least one sample")
    means = history.sums[0] / history.counts[0]
    if cls.contains(means):
        return FitResult(in_class=True, table=means)
    if allow_projection and hasattr(cls, "project_weighted"):
        table, lam = cls.project_weighted(means, history.counts[0].astype(np.float64))
        logger.debug("empirical table outside class; returned weighted projection")
        return FitResult(in_class=False, table=table, projected=True, lam=lam)
    return FitResult(in_class=False, table=None)


def e1_centers_inf(decoy_table: np.ndarray, eps: float) -> np.ndarray:
    """Warm-up band centers for the infinite-class trap: the decoy's values
    shifted down by eps/(2*sqrt(K))."""
    decoy = _as_vector(decoy_table)
    return decoy - eps / (2.0 * math.sqrt(len(decoy)))


def check_event_e1_inf(warmup: History, decoy_table, eps: float) -> bool:
    """Off-decoy warm-up means within eps/(4*sqrt(K)) (strict) of the shifted
    band centers."""
    decoy = _as_vector(decoy_table)
    k = len(decoy)
    a_dec = int(np.argmax(decoy))
    centers = e1_centers_inf(decoy, eps)
    radius = eps / (4.0 * math.sqrt(k))
    for a in range(k):
        if a == a_dec:
            continue
        if warmup.counts[0, a] == 0:
            raise MissingWarmupError(f"arm {a} has no warm-up sample")
        if not abs(warmup.mean(0, a) - centers[a]) < radius:
            return False
    return True


def check_event_e2_inf(result, decoy_table, eps: float, true_table) -> int:
    """Last round through which the decoy arm's running mean stayed within
    eps/(4*sqrt(K)) (non-strict) of its true value; replays the round log."""
    decoy = _as_vector(decoy_table)
    truth = _as_vector(true_table)
    k = len(decoy)
    a_dec = int(np.argmax(decoy))
    radius = eps / (4.0 * math.sqrt(k))
    count, total = 0, 0.0
    held_through = result.horizon
    t0 = result.warmup_size
    for t in range(result.horizon):
        if int(result.arms[t]) == a_dec:
            count += 1
            total += float(result.rewards[t])
        if t + 1 <= t0 or count == 0:
            continue
        if abs(total / count - truth[a_dec]) > radius:
            held_through = t
            break
    return held_through


def run_continuum_episode(instance: ContinuumInstance, horizon: int, rng: RngStream,
                          decoy_table, eps: float, force_e1: bool = False,
                          sigma: Optional[float] = None):
    """One empirical-fit greedy trajectory on an L2-ball instance."""
    from ._engine_continuum import run_continuum_trials

    res = run_continuum_trials(
        instance, horizon=horizon, master_seed=rng.master_seed,
        trial_indices=[rng.stream_id], decoy_table=decoy_table, eps=eps,
        force_e1=force_e1, sigma=sigma, record_trajectory=True)
    return res.trajectories[0]
