"""Standard fixtures shared by unit and acceptance tests, plus seeded random
instance generators for the property sweeps."""

from __future__ import annotations

import numpy as np

from greedytrap.analysis import find_decoys
from greedytrap.continuum import ContinuumInstance, L2Ball
from greedytrap.core import FunctionClass, ProblemInstance, RewardFunction
from greedytrap.dmso import Model, ModelClass, OutcomeSpace
from greedytrap.experiments import sigma_rule_continuum, sigma_rule_finite


def mab_decoy_instance(sigma=None):
    """Two arms, two members; the second member matches the truth exactly on
    the inferior arm and prefers it. Gap 0.8."""
    f_star = RewardFunction([0.9, 0.5])
    decoy = RewardFunction([0.1, 0.5])
    cls = FunctionClass((f_star, decoy), best_arm_unique=True)
    if sigma is None:
        sigma = sigma_rule_finite(0.8, 1)
    inst = ProblemInstance(f_star, cls, noise_sigma=sigma)
    return inst, find_decoys(inst)[0]


def cb_decoy_instance(sigma=None):
    """Two contexts, two arms; the trap member differs from the truth on a
    single pair, so both tables agree along the trap policy's graph."""
    f_star = RewardFunction([[0.9, 0.5], [0.7, 0.3]])
    decoy = RewardFunction([[0.1, 0.5], [0.7, 0.3]])
    cls = FunctionClass((f_star, decoy), best_arm_unique=True)
    if sigma is None:
        sigma = sigma_rule_finite(0.8, 2)
    inst = ProblemInstance(f_star, cls, noise_sigma=sigma,
                           context_probs=[0.5, 0.5])
    return inst, find_decoys(inst)[0]


def continuum_decoy_fixture(eps: float = 0.4, gap_mult: float = 1.0):
    """L2-ball fixture: the trap table centers a generous ball (so it is
    eps-interior and the empirical table essentially always stays a member)
    and matches the truth on the inferior arm."""
    sigma = sigma_rule_continuum(eps, 2)
    gap = gap_mult * sigma
    f_star = np.array([0.5 + gap, 0.5])
    decoy = np.array([0.4, 0.5])
    ball = L2Ball(center=decoy.copy(),
                  radius=eps + float(np.linalg.norm(f_star - decoy)) + 0.5)
    inst = ContinuumInstance(true_table=f_star, function_class=ball, noise_sigma=sigma)
    return inst, decoy, eps


def mab_selfid_instance(sigma: float = 0.25):
    f_star = RewardFunction([0.9, 0.1])
    other = RewardFunction([0.1, 0.9])
    cls = FunctionClass((f_star, other), best_arm_unique=True)
    return ProblemInstance(f_star, cls, noise_sigma=sigma)


def cb_selfid_instance(sigma: float = 0.25):
    f_star = RewardFunction([[0.9, 0.1], [0.1, 0.9]])
    other = RewardFunction([[0.1, 0.9], [0.9, 0.1]])
    cls = FunctionClass((f_star, other), best_arm_unique=True)
    return ProblemInstance(f_star, cls, noise_sigma=sigma, context_probs=[0.5, 0.5])


def continuum_selfid_fixture(eps: float = 0.2, sigma: float = 0.1):
    """Ball around the truth whose radius is below the suboptimality gap minus
    the margin, so no member within the margin can invert the ranking."""
    f_star = np.array([0.8, 0.2])
    ball = L2Ball(center=f_star.copy(), radius=0.3)
    return ContinuumInstance(true_table=f_star, function_class=ball,
                             noise_sigma=sigma), eps


def _bern(q: float) -> list:
    return [1.0 - q, q]


def dmso_fixture(with_distractor: bool = True) -> ModelClass:
    """Two policies over binary rewards. The trap model matches the truth on
    its own preferred policy and undervalues the other; the optional third
    member differs from the trap on the trap policy, exercising the running
    likelihood comparison. The discriminating masses are asymmetric so no
    count combination ties the log-likelihoods exactly."""
    space = OutcomeSpace(rewards=(0.0, 1.0), observations=("o",))
    true = Model(space, [_bern(0.5), _bern(0.7)])
    trap = Model(space, [_bern(0.5), _bern(0.35)])
    members = [true, trap]
    if with_distractor:
        members.append(Model(space, [_bern(0.4), _bern(0.7)]))
    return ModelClass(tuple(members), true_index=0)


def dmso_tight_ratio_fixture() -> ModelClass:
    """Mass ratios close to 1, so the change-of-measure bound is informative.
    The two discriminating masses are asymmetric (0.6 vs 0.45) so running
    log-likelihood comparisons never tie exactly."""
    space = OutcomeSpace(rewards=(0.0, 1.0), observations=("o",))
    true = Model(space, [_bern(0.5), _bern(0.6)])
    trap = Model(space, [_bern(0.5), _bern(0.45)])
    return ModelClass((true, trap), true_index=0)


def random_grid_instance(rng: np.random.Generator, max_arms: int = 4,
                         max_contexts: int = 2, max_members: int = 8,
                         grid_step: float = 0.25, coincide_prob: float = 0.7,
                         require_unique: bool = True,
                         max_tries: int = 400) -> ProblemInstance:
    """Random instance on a value grid. Members copy entries of the true
    table with some probability so exact coincidences (the raw material of
    traps) appear often."""
    X = int(rng.integers(1, max_contexts + 1))
    K = int(rng.integers(2, max_arms + 1))
    n_members = int(rng.integers(2, max_members + 1))
    hi = round(1.0 / grid_step)

    def rand_units():
        return rng.integers(0, hi + 1, size=(X, K))

    def unique_rows(units) -> bool:
        return not require_unique or all(
            (row == row.max()).sum() == 1 for row in units)

    for _ in range(max_tries):
        star_units = rand_units()
        if unique_rows(star_units):
            break
    else:
        raise RuntimeError("could not sample a unique-argmax true table")

    members = [RewardFunction.from_units(star_units, grid_step)]
    seen = {members[0].values.tobytes()}
    tries = 0
    while len(members) < n_members and tries < max_tries:
        tries += 1
        units = rand_units()
        mask = rng.random((X, K)) < coincide_prob
        units[mask] = star_units[mask]
        if not unique_rows(units):
            continue
        cand = RewardFunction.from_units(units, grid_step)
        if cand.values.tobytes() in seen:
            continue
        seen.add(cand.values.tobytes())
        members.append(cand)
    cls = FunctionClass(tuple(members), best_arm_unique=require_unique)
    probs = None
    if X > 1:
        raw = rng.random(X) + 0.2
        probs = raw / raw.sum()
    return ProblemInstance(members[0], cls, noise_sigma=float(rng.uniform(0.05, 0.3)),
                           context_probs=probs, bounded_rewards=True)


def random_model_class(rng: np.random.Generator, max_members: int = 4,
                       max_policies: int = 3, max_outcomes: int = 4,
                       max_tries: int = 200) -> ModelClass:
    """Random fully-supported model class with unique optimal policies."""
    m = int(rng.integers(2, max_members + 1))
    n_pol = int(rng.integers(1, max_policies + 1))
    n_r = int(rng.integers(2, max_outcomes + 1))
    space = OutcomeSpace(rewards=tuple(float(v) for v in np.linspace(0, 1, n_r)),
                         observations=("o",))
    for _ in range(max_tries):
        members = []
        for _ in range(m):
            probs = rng.random((n_pol, n_r)) + 0.1
            probs /= probs.sum(axis=1, keepdims=True)
            members.append(Model(space, probs))
        try:
            return ModelClass(tuple(members), true_index=int(rng.integers(0, m)))
        except Exception:
            continue
    raise RuntimeError("could not sample a valid model class")
