"""Structural predicates over finite instances: function gaps, optimal
policies, self-identifiability, and decoy enumeration (strict and tie-aware).

All value comparisons are exact (``==`` on stored floats). Instance
generators are responsible for constructing coincidences exactly, e.g. by
copying a value or computing both sides from identical integer grid units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    FunctionClass,
    Policy,
    ProblemInstance,
    RewardFunction,
    ShapeMismatchError,
    TieError,
)

__all__ = [
    "GapReport",
    "DecoyCertificate",
    "function_gap",
    "optimal_policy",
    "optimal_arm_sets",
    "policy_value",
    "best_policy_value",
    "is_self_identifiable",
    "find_decoys",
    "find_decoys_with_ties",
    "verify_certificate",
]


@dataclass(frozen=True)
class GapReport:
    """Smallest nonzero entry-wise difference between a function and the rest
    of its class; +inf when no member differs anywhere."""

    gap: float
    witness: Optional[tuple[int, int, int]]  # (member index, context, arm)


@dataclass(frozen=True)
class DecoyCertificate:
    """A class member that traps the greedy algorithm.

    The member's optimal play coincides with the true table everywhere along
    that play, yet the play is suboptimal in truth. ``optimal_arm_sets`` is
    populated in tie-aware mode and lists, per context, every arm the member
    considers optimal; ``decoy_policy`` always picks the lowest-index one.
    """

    member_index: int
    decoy: RewardFunction
    decoy_policy: Policy
    decoy_gap: float
    regret_per_round: float
    optimal_arm_sets: Optional[tuple[frozenset, ...]] = None


def function_gap(f: RewardFunction, cls: FunctionClass) -> GapReport:
    """Minimum |f - g| over members g that differ from f, taken over the
    entries where they differ. Returns +inf if no member differs."""
    if f.values.shape != cls.members[0].values.shape:
        raise ShapeMismatchError("function shape does not match class")
    best = math.inf
    witness = None
    for i, g in enumerate(cls.members):
        diff = np.abs(g.values - f.values)
        mask = g.values != f.values
        if not mask.any():
            continue
        j = np.where(mask.ravel(), diff.ravel(), np.inf).argmin()
        if diff.ravel()[j] < best:
            best = float(diff.ravel()[j])
            x, a = np.unravel_index(j, f.values.shape)
            witness = (i, int(x), int(a))
    return GapReport(gap=best, witness=witness)


def optimal_policy(f: RewardFunction, strict: bool = True) -> Policy:
    """Per-context argmax. In strict mode a tied argmax raises TieError;
    otherwise ties resolve to the lowest arm index."""
    arms = np.empty(f.n_contexts, dtype=np.int64)
    for x in range(f.n_contexts):
        row = f.values[x]
        top = np.flatnonzero(row == row.max())
        if strict and len(top) > 1:
            raise TieError(f"tied argmax at context {x}", arms=top, context=x)
        arms[x] = top[0]
    return Policy(arms)


def optimal_arm_sets(f: RewardFunction) -> tuple[frozenset, ...]:
    """Per-context set of maximizing arms."""
    out = []
    for x in range(f.n_contexts):
        row = f.values[x]
        out.append(frozenset(int(a) for a in np.flatnonzero(row == row.max())))
    return tuple(out)


def policy_value(f: RewardFunction, policy: Policy, context_probs: np.ndarray) -> float:
    """Expected reward of a policy under the context arrival distribution."""
    picked = f.values[np.arange(f.n_contexts), policy.arms]
    return float(np.dot(context_probs, picked))


def best_policy_value(f: RewardFunction, context_probs: np.ndarray) -> float:
    return float(np.dot(context_probs, f.values.max(axis=1)))


def _certificate_for(instance: ProblemInstance, i: int,
                     arm_sets: Optional[tuple[frozenset, ...]] = None) -> DecoyCertificate:
    member = instance.function_class.members[i]
    if arm_sets is None:
        pol = optimal_policy(member, strict=True)
    else:
        pol = Policy([min(s) for s in arm_sets])
    gap = function_gap(member, instance.function_class).gap
    probs = instance.context_probs
    regret = (best_policy_value(instance.true_function, probs)
              - policy_value(instance.true_function, pol, probs))
    return DecoyCertificate(member_index=i, decoy=member, decoy_policy=pol,
                            decoy_gap=gap, regret_per_round=regret,
                            optimal_arm_sets=arm_sets)


def find_decoys(instance: ProblemInstance) -> list[DecoyCertificate]:
    """All members whose (unique) optimal policy agrees with the true table
    along its graph yet is strictly suboptimal in truth.

    Each member is checked in O(n_contexts * n_arms): its optimal policy is
    the only candidate trap, so no enumeration over all policies is needed.
    Results are ordered by descending gap so callers preferring the most
    detectable trap can take the first.
    """
    fstar = instance.true_function
    probs = instance.context_probs
    vstar = best_policy_value(fstar, probs)
    out = []
    for i, member in enumerate(instance.function_class.members):
        if member.equals(fstar):
            continue
        pol = optimal_policy(member, strict=True)
        rows = np.arange(member.n_contexts)
        if not np.array_equal(member.values[rows, pol.arms], fstar.values[rows, pol.arms]):
            continue
        if policy_value(fstar, pol, probs) < vstar:
            out.append(_certificate_for(instance, i))
    out.sort(key=lambda c: (-c.decoy_gap, c.member_index))
    return out


def find_decoys_with_ties(instance: ProblemInstance) -> list[DecoyCertificate]:
    """Decoy enumeration when members may have tied optimal arms.

    A member traps tie-breaking greedy play only if *every* policy it
    considers optimal coincides with the true table along its graph and is
    suboptimal in truth. Equivalently, per context, all of the member's
    optimal arms must agree with the true table, and the best true value
    attainable through those arms must fall short of the true optimum.
    The optimal policies form the product of the per-context optimal-arm
    sets, so the check never enumerates them.
    """
    fstar = instance.true_function
    probs = instance.context_probs
    vstar = best_policy_value(fstar, probs)
    out = []
    for i, member in enumerate(instance.function_class.members):
        if member.equals(fstar):
            continue
        arm_sets = optimal_arm_sets(member)
        ok = True
        per_context_best = np.empty(member.n_contexts)
        for x, arms in enumerate(arm_sets):
            idx = sorted(arms)
            if not np.array_equal(member.values[x, idx], fstar.values[x, idx]):
                ok = False
                break
            per_context_best[x] = fstar.values[x, idx].max()
        # Same reduction as best_policy_value so exactly-tied sums compare
        # equal instead of drifting by an ulp.
        if ok and float(np.dot(probs, per_context_best)) < vstar:
            out.append(_certificate_for(instance, i, arm_sets=arm_sets))
    out.sort(key=lambda c: (-c.decoy_gap, c.member_index))
    return out


def is_self_identifiable(instance: ProblemInstance, ties: bool = False):
    """True iff pinning any suboptimal play's true rewards rules it out under
    every consistent class member. Returns (verdict, witness) where the
    witness, present on False, is the offending (member, policy) pair.

    This is exactly the absence of a decoy, so the check reuses the decoy
    enumeration; an exhaustive policy-enumeration oracle cross-validates it
    in the test suite.
    """
    decoys = find_decoys_with_ties(instance) if ties else find_decoys(instance)
    if decoys:
        c = decoys[0]
        return False, (c.member_index, c.decoy_policy)
    return True, None


def verify_certificate(instance: ProblemInstance, cert: DecoyCertificate,
                       ties: bool = False) -> None:
    """Re-check every certificate field against the definitions; raises on
    any violation."""
    member = instance.function_class.members[cert.member_index]
    if not member.equals(cert.decoy):
        raise AssertionError("certificate table does not match the class member")
    fstar = instance.true_function
    probs = instance.context_probs
    if ties or cert.optimal_arm_sets is not None:
        arm_sets = optimal_arm_sets(member)
        if cert.optimal_arm_sets is not None and tuple(arm_sets) != tuple(cert.optimal_arm_sets):
            raise AssertionError("stored optimal-arm sets are stale")
        per_context_best = np.empty(member.n_contexts)
        for x, arms in enumerate(arm_sets):
            for a in arms:
                if member.values[x, a] != fstar.values[x, a]:
                    raise AssertionError(f"decoy disagrees with truth at ({x}, {a})")
            per_context_best[x] = max(fstar.values[x, a] for a in arms)
        if not float(np.dot(probs, per_context_best)) < best_policy_value(fstar, probs):
            raise AssertionError("some optimal policy of the decoy is not suboptimal in truth")
        if any(int(cert.decoy_policy.arms[x]) not in arm_sets[x] for x in range(member.n_contexts)):
            raise AssertionError("stored policy is not optimal for the decoy")
    else:
        pol = optimal_policy(member, strict=True)
        if pol != cert.decoy_policy:
            raise AssertionError("stored policy is not the decoy's optimal policy")
        for x in range(member.n_contexts):
            a = pol.arm(x)
            if member.values[x, a] != fstar.values[x, a]:
                raise AssertionError(f"decoy disagrees with truth at ({x}, {a})")
        if not policy_value(fstar, pol, probs) < best_policy_value(fstar, probs):
            raise AssertionError("decoy policy is not suboptimal in truth")
    expected_gap = function_gap(member, instance.function_class).gap
    if cert.decoy_gap != expected_gap:
        raise AssertionError("stored gap is stale")
    expected_regret = (best_policy_value(fstar, probs)
                       - policy_value(fstar, cert.decoy_policy, probs))
    if not math.isclose(cert.regret_per_round, expected_regret, rel_tol=0, abs_tol=1e-12):
        raise AssertionError("stored per-round regret is stale")
    if not cert.regret_per_round > 0:
        raise AssertionError("per-round regret must be positive")
