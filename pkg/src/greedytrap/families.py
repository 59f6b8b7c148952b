"""Instance generators for well-studied reward structures, each emitting a
realizable problem instance plus, where the structure admits one, a verified
trap certificate.

Every generated value is an exact integer multiple of the family's
discretization step; tables are built from integer units and converted to
floats once, so value coincidences compare equal under ``==``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import (
    DecoyCertificate,
    find_decoys,
    find_decoys_with_ties,
    verify_certificate,
)
from .continuum import ContinuumInstance, L2Ball, is_interior
from .core import FunctionClass, GreedyTrapError, Policy, ProblemInstance, RewardFunction

__all__ = [
    "FamilyError",
    "GridSpec",
    "FamilyOutput",
    "gen_linear_bandit",
    "gen_linear_cb_positive",
    "gen_linear_cb_negative",
    "gen_lipschitz",
    "gen_lipschitz_cb",
    "gen_polynomial",
    "gen_quadratic",
    "gen_l2ball",
    "materialize_finite_class",
    "span_witness",
]


class FamilyError(GreedyTrapError):
    """A generator precondition or post-construction check failed."""


@dataclass(frozen=True)
class GridSpec:
    """The uniform discretization {eps * n in [lo, hi] : n integer}, tracked
    in integer units so emitted values are exact multiples of eps."""

    lo: float
    hi: float
    eps: float

    def __post_init__(self):
        if self.eps <= 0 or self.hi < self.lo:
            raise ValueError("need eps > 0 and hi >= lo")

    @property
    def unit_lo(self) -> int:
        return math.ceil(self.lo / self.eps - 1e-9)

    @property
    def unit_hi(self) -> int:
        return math.floor(self.hi / self.eps + 1e-9)

    def values(self) -> np.ndarray:
        units = np.arange(self.unit_lo, self.unit_hi + 1)
        return units.astype(np.float64) * self.eps

    def contains_unit(self, unit: int) -> bool:
        return self.unit_lo <= unit <= self.unit_hi

    def sample_unit(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.unit_lo, self.unit_hi + 1))


@dataclass
class FamilyOutput:
    """What a generator hands back: the instance, the verified certificate
    (absent when the structure's condition fails), and family-specific
    details (parameter vectors, witnesses, heuristic flags)."""

    instance: object
    certificate: Optional[DecoyCertificate]
    details: dict = field(default_factory=dict)


def materialize_finite_class(f_star: RewardFunction,
                             decoy: Optional[RewardFunction] = None,
                             extras: Sequence[RewardFunction] = (),
                             grid_eps: Optional[float] = None,
                             best_arm_unique: bool = False,
                             noise_sigma: float = 0.1,
                             context_probs=None,
                             warmup_counts=None,
                             bounded_rewards: Optional[bool] = None,
                             ties: bool = False) -> FamilyOutput:
    """Assemble a finite class around (f_star, decoy, extras) on a shared
    grid and re-derive its trap structure from scratch."""
    members = [f_star] + ([decoy] if decoy is not None else []) + list(extras)
    if grid_eps is not None:
        for i, m in enumerate(members):
            if m.grid_eps != grid_eps or m.grid_units is None:
                raise FamilyError(f"member {i} is not on the declared grid eps={grid_eps}")
    cls = FunctionClass(tuple(members), best_arm_unique=best_arm_unique)
    if bounded_rewards is None:
        vals = np.concatenate([m.values.ravel() for m in members])
        bounded_rewards = bool(vals.min() >= 0.0 and vals.max() <= 1.0)
    instance = ProblemInstance(f_star, cls, noise_sigma=noise_sigma,
                               context_probs=context_probs, warmup_counts=warmup_counts,
                               bounded_rewards=bounded_rewards)
    certs = find_decoys_with_ties(instance) if ties else find_decoys(instance)
    cert = None
    if decoy is not None:
        for c in certs:
            if c.member_index == 1:
                cert = c
                break
        if cert is None:
            raise FamilyError("constructed table failed the trap predicate")
        verify_certificate(instance, cert, ties=ties)
    return FamilyOutput(instance=instance, certificate=cert,
                        details={"all_certificates": certs})


# ---------------------------------------------------------------------------
# Linear bandits


def _hypercube(d: int) -> np.ndarray:
    return np.array(list(itertools.product((-1.0, 1.0), repeat=d)))


def gen_linear_bandit(d: int, eps: float, rng: np.random.Generator,
                      theta_units: Optional[Sequence[int]] = None,
                      n_distractors: int = 0,
                      noise_sigma: float = 0.1) -> FamilyOutput:
    """Inner-product rewards over the sign hypercube with parameters on the
    per-coordinate grid (nonzero entries of [-1, 1] in steps of eps).

    When the parameter's L1 mass exceeds twice its smallest coordinate by at
    least d*eps, flipping the sign of that coordinate yields an arm whose
    value a second parameter can replicate exactly while preferring it;
    otherwise no certificate is emitted.
    """
    if d < 2:
        raise FamilyError("dimension must be at least 2")
    if not 0 < eps <= 0.25:
        raise FamilyError("eps must lie in (0, 1/4]")
    if d > 12:
        raise FamilyError("the hypercube arm set is capped at d = 12")
    n_mag = math.floor(1.0 / eps + 1e-9)

    def sample_theta() -> np.ndarray:
        mags = rng.integers(1, n_mag + 1, size=d)
        signs = rng.choice((-1, 1), size=d)
        return mags * signs

    if theta_units is None:
        units = sample_theta()
    else:
        units = np.asarray(theta_units, dtype=np.int64)
        if len(units) != d or np.any(units == 0) or np.any(np.abs(units) > n_mag):
            raise FamilyError("theta units must be d nonzero entries within the grid")

    arms = _hypercube(d)
    arm_ints = arms.astype(np.int64)

    def table_units(theta_u: np.ndarray) -> np.ndarray:
        return arm_ints @ theta_u  # exact integer inner products

    def reward_fn(theta_u: np.ndarray) -> RewardFunction:
        return RewardFunction.from_units(table_units(theta_u)[None, :], eps)

    f_star = reward_fn(units)
    mags = np.abs(units)
    j = int(np.argmin(mags))
    alpha_units = int(mags.sum() - 2 * mags[j])

    certificate = None
    decoy_fn = None
    dec_units = None
    if alpha_units >= d:
        flip_arm = np.sign(units).astype(np.int64)
        flip_arm[j] = -flip_arm[j]
        # Spread alpha over coordinates greedily, each in [1, n_mag].
        dec_mags = np.empty(d, dtype=np.int64)
        remaining = alpha_units
        for i in range(d):
            take = min(n_mag, remaining - (d - 1 - i))
            if take < 1:
                raise FamilyError("cannot realize the target L1 mass on the grid")
            dec_mags[i] = take
            remaining -= take
        if remaining != 0:
            raise FamilyError("cannot realize the target L1 mass on the grid")
        dec_units = dec_mags * flip_arm
        decoy_fn = reward_fn(dec_units)

    extras = []
    seen = {f_star.values.tobytes()}
    if decoy_fn is not None:
        seen.add(decoy_fn.values.tobytes())
    guard = 0
    while len(extras) < n_distractors:
        cand = reward_fn(sample_theta())
        if cand.values.tobytes() not in seen:
            seen.add(cand.values.tobytes())
            extras.append(cand)
        guard += 1
        if guard > 100 * (n_distractors + 1):
            raise FamilyError("could not sample distinct distractors")

    out = materialize_finite_class(f_star, decoy_fn, extras, grid_eps=eps,
                                   best_arm_unique=True, noise_sigma=noise_sigma,
                                   bounded_rewards=False)
    out.details.update(theta_units=units, decoy_theta_units=dec_units,
                       arms=arms, margin_condition=alpha_units >= d)
    return out


# ---------------------------------------------------------------------------
# Linear contextual bandits


def _product_contexts(per_arm_sets: Sequence[np.ndarray], cap: int) -> np.ndarray:
    sizes = [len(s) for s in per_arm_sets]
    total = int(np.prod(sizes))
    if total > cap:
        raise FamilyError(f"context product has {total} elements, above the cap {cap}")
    combos = itertools.product(*[range(n) for n in sizes])
    return np.array([[per_arm_sets[a][i] for a, i in enumerate(idx)] for idx in combos])


def _linear_cb_tables(contexts: np.ndarray, thetas: Sequence[np.ndarray]) -> list:
    # One einsum per theta: identical arithmetic makes structural value
    # coincidences (shared coordinates against zero components) exact.
    return [RewardFunction(contexts @ np.asarray(th, dtype=np.float64)) for th in thetas]


def span_witness(instance: ProblemInstance, contexts: np.ndarray,
                 policy: Policy) -> list[int]:
    """Greedy context subset whose policy-selected vectors span the full
    parameter space: repeatedly add a context all of whose per-arm vectors lie
    outside the span of the vectors the policy has picked so far. Because the
    test covers every arm, the same subset works for any other policy too."""
    d = contexts.shape[2]
    n_arms = contexts.shape[1]
    chosen: list[int] = []
    basis = np.zeros((0, d))

    def rank_with(v=None) -> int:
        mat = basis if v is None else np.vstack([basis, v])
        return int(np.linalg.matrix_rank(mat)) if len(mat) else 0

    while rank_with() < d:
        found = None
        for idx in range(len(contexts)):
            if idx in chosen:
                continue
            if all(rank_with(contexts[idx, a]) > rank_with() for a in range(n_arms)):
                found = idx
                break
        if found is None:
            raise FamilyError("no context extends the span; per-arm sets do not span")
        chosen.append(found)
        basis = np.vstack([basis, contexts[found, policy.arm(found)]])
    return chosen


def gen_linear_cb_positive(d: int, per_arm_sets: Sequence, thetas: Sequence,
                           true_index: int = 0, noise_sigma: float = 0.1,
                           max_contexts: int = 256) -> FamilyOutput:
    """Contextual inner-product rewards where each arm's context vectors span
    the whole parameter space; the resulting instances admit no trap, and a
    greedy span witness certifies why."""
    sets = [np.asarray(s, dtype=np.float64) for s in per_arm_sets]
    for a, s in enumerate(sets):
        if s.ndim != 2 or s.shape[1] != d:
            raise FamilyError(f"per-arm set {a} must be a list of {d}-vectors")
        if np.linalg.matrix_rank(s) < d:
            raise FamilyError(f"per-arm context set {a} does not span R^{d}")
    contexts = _product_contexts(sets, max_contexts)
    members = _linear_cb_tables(contexts, thetas)
    cls = FunctionClass(tuple(members), best_arm_unique=False)
    instance = ProblemInstance(members[true_index], cls, noise_sigma=noise_sigma,
                               bounded_rewards=False)
    from .analysis import optimal_policy
    pol = optimal_policy(members[true_index], strict=False)
    witness = span_witness(instance, contexts, pol)
    vecs = np.array([contexts[i, pol.arm(i)] for i in witness])
    if np.linalg.matrix_rank(vecs) < d:
        raise FamilyError("span witness failed its own rank check")
    return FamilyOutput(instance=instance, certificate=None,
                        details={"contexts": contexts, "span_witness": witness,
                                 "thetas": [np.asarray(t) for t in thetas]})


def gen_linear_cb_negative(d: int, eps: float, n_arms: int, rng: np.random.Generator,
                           per_arm_size: int = 2, noise_sigma: float = 0.1,
                           max_contexts: int = 256,
                           head_units: Optional[Sequence[int]] = None) -> FamilyOutput:
    """Degenerate-context construction: the first n_arms - 1 arms' context
    vectors live in the hyperplane with last coordinate zero, the final arm
    always shows the last basis vector, and the true parameter has last
    coordinate 1 with total L1 mass below 2. Flipping that coordinate to -1
    yields a verified trap."""
    if d < 2:
        raise FamilyError("dimension must be at least 2")
    if not 0 < eps <= 0.5 or abs(round(1.0 / eps) - 1.0 / eps) > 1e-9:
        raise FamilyError("eps must lie in (0, 1/2] with 1/eps an integer")
    n_inv = round(1.0 / eps)

    # True parameter: last coordinate 1, the rest on the grid with sum of
    # magnitudes strictly below 1 (units strictly below 1/eps).
    if head_units is not None:
        head_units = np.asarray(head_units, dtype=np.int64)
        if len(head_units) != d - 1:
            raise FamilyError(f"head_units must have {d - 1} entries")
        if int(np.abs(head_units).sum()) >= n_inv:
            raise FamilyError("total parameter mass must stay strictly below 2")
    else:
        head_units = np.zeros(d - 1, dtype=np.int64)
        budget = n_inv - 1
        for i in range(d - 1):
            if budget <= 0:
                break
            take = int(rng.integers(0, budget + 1))
            head_units[i] = take * int(rng.choice((-1, 1)))
            budget -= take
    theta_star = np.append(head_units.astype(np.float64) * eps, 1.0)
    theta_dec = theta_star.copy()
    theta_dec[-1] = -1.0

    sets = []
    for _ in range(n_arms - 1):
        pts = rng.integers(-n_inv, n_inv + 1, size=(per_arm_size, d - 1)).astype(np.float64) * eps
        sets.append(np.hstack([pts, np.zeros((per_arm_size, 1))]))
    last = np.zeros((1, d))
    last[0, -1] = 1.0
    sets.append(last)

    contexts = _product_contexts(sets, max_contexts)
    members = _linear_cb_tables(contexts, [theta_star, theta_dec])
    cls = FunctionClass(tuple(members), best_arm_unique=False)
    instance = ProblemInstance(members[0], cls, noise_sigma=noise_sigma,
                               bounded_rewards=False)
    certs = find_decoys_with_ties(instance)
    cert = next((c for c in certs if c.member_index == 1), None)
    if cert is None:
        raise FamilyError("flipped parameter failed the trap predicate")
    verify_certificate(instance, cert, ties=True)
    for x, arms in enumerate(cert.optimal_arm_sets):
        if any(a == n_arms - 1 for a in arms):
            raise FamilyError("trap play must avoid the final arm")
        if int(np.argmax(members[0].values[x])) != n_arms - 1:
            raise FamilyError("truth must prefer the final arm in every context")
    return FamilyOutput(instance=instance, certificate=cert,
                        details={"theta_star": theta_star, "theta_dec": theta_dec,
                                 "contexts": contexts})


# ---------------------------------------------------------------------------
# Lipschitz bandits


def _check_metric_units(d_units: np.ndarray) -> None:
    n = d_units.shape[0]
    if d_units.shape != (n, n):
        raise FamilyError("metric table must be square")
    if np.any(d_units != d_units.T) or np.any(np.diag(d_units) != 0):
        raise FamilyError("metric must be symmetric with zero diagonal")
    off = d_units[~np.eye(n, dtype=bool)]
    if np.any(off <= 0):
        raise FamilyError("distinct points must be at positive distance")
    for b in range(n):
        if np.any(d_units > d_units[:, [b]] + d_units[[b], :]):
            raise FamilyError("metric violates the triangle inequality")


def _check_lipschitz_units(f_units: np.ndarray, d_units: np.ndarray) -> None:
    diff = np.abs(f_units[:, None] - f_units[None, :])
    if np.any(diff > d_units):
        raise FamilyError("function violates the Lipschitz bound")


def gen_lipschitz(d_units: Sequence, eps: float, f_units: Sequence,
                  decoy_arm: Optional[int] = None,
                  noise_sigma: float = 0.1) -> FamilyOutput:
    """Metric-constrained rewards on a finite point set, everything in integer
    multiples of eps within [0, 1]. The trap lowers every arm by its distance
    to a chosen positive-value suboptimal arm, clamped at zero."""
    d_u = np.asarray(d_units, dtype=np.int64)
    f_u = np.asarray(f_units, dtype=np.int64).reshape(-1)
    k = len(f_u)
    n_max = math.floor(1.0 / eps + 1e-9)
    _check_metric_units(d_u)
    if np.any(f_u < 0) or np.any(f_u > n_max):
        raise FamilyError("function values must lie on the [0, 1] grid")
    if np.any(d_u > n_max):
        raise FamilyError("metric values must lie on the [0, 1] grid")
    _check_lipschitz_units(f_u, d_u)
    if (f_u == f_u.max()).sum() > 1:
        raise FamilyError("function must have a unique best arm")
    if decoy_arm is None:
        qualifying = [a for a in range(k) if 0 < f_u[a] < f_u.max()]
        if not qualifying:
            raise FamilyError("no qualifying decoy arm: every suboptimal arm has zero value")
        decoy_arm = qualifying[0]
    else:
        if not 0 < f_u[decoy_arm] < f_u.max():
            raise FamilyError(f"arm {decoy_arm} is not a positive-value suboptimal arm")
    dec_u = np.maximum(0, f_u[decoy_arm] - d_u[decoy_arm])
    _check_lipschitz_units(dec_u, d_u)
    if int(np.argmax(dec_u)) != decoy_arm or (dec_u == dec_u.max()).sum() > 1:
        raise FamilyError("trap table lost its unique best arm")
    f_star = RewardFunction.from_units(f_u[None, :], eps)
    decoy = RewardFunction.from_units(dec_u[None, :], eps)
    out = materialize_finite_class(f_star, decoy, grid_eps=eps, best_arm_unique=True,
                                   noise_sigma=noise_sigma, bounded_rewards=True)
    out.details.update(decoy_arm=decoy_arm, metric_units=d_u)
    return out


def gen_lipschitz_cb(d_units: Sequence, eps: float, f_units: Sequence,
                     policy: Optional[Sequence[int]] = None,
                     noise_sigma: float = 0.1) -> FamilyOutput:
    """Contextual variant: the metric is over (context, arm) pairs (flattened
    row-major), and the trap anchors each context at its chosen arm.

    The anchored construction is verified in full, including Lipschitz bounds
    across contexts; cross-context distances at the value range's width (or
    more) make that check vacuous and always succeed.
    """
    f_u = np.asarray(f_units, dtype=np.int64)
    if f_u.ndim != 2:
        raise FamilyError("contextual function units must be (contexts, arms)")
    X, K = f_u.shape
    d_u = np.asarray(d_units, dtype=np.int64)
    if d_u.shape != (X * K, X * K):
        raise FamilyError("metric must be over flattened (context, arm) pairs")
    n_max = math.floor(1.0 / eps + 1e-9)
    _check_metric_units(d_u)
    if np.any(f_u < 0) or np.any(f_u > n_max) or np.any(d_u > n_max):
        raise FamilyError("values and distances must lie on the [0, 1] grid")
    _check_lipschitz_units(f_u.ravel(), d_u)
    maxima = f_u.max(axis=1)
    if np.any((f_u == maxima[:, None]).sum(axis=1) > 1):
        raise FamilyError("function must have a unique best arm per context")

    if policy is None:
        chosen = []
        for x in range(X):
            cands = [a for a in range(K) if 0 < f_u[x, a] < maxima[x]]
            if not cands:
                raise FamilyError(f"context {x} has no positive-value suboptimal arm")
            chosen.append(cands[0])
        policy = chosen
    policy = [int(a) for a in policy]
    for x, a in enumerate(policy):
        if not 0 < f_u[x, a] < maxima[x]:
            raise FamilyError(f"policy arm {a} at context {x} is not positive and suboptimal")

    dec_u = np.empty_like(f_u)
    for x in range(X):
        anchor = x * K + policy[x]
        for a in range(K):
            dec_u[x, a] = max(0, f_u[x, policy[x]] - d_u[anchor, x * K + a])
    _check_lipschitz_units(dec_u.ravel(), d_u)
    dec_max = dec_u.max(axis=1)
    if np.any((dec_u == dec_max[:, None]).sum(axis=1) > 1) or \
            any(int(np.argmax(dec_u[x])) != policy[x] for x in range(X)):
        raise FamilyError("trap table lost its unique best arm in some context")

    f_star = RewardFunction.from_units(f_u, eps)
    decoy = RewardFunction.from_units(dec_u, eps)
    out = materialize_finite_class(f_star, decoy, grid_eps=eps, best_arm_unique=True,
                                   noise_sigma=noise_sigma, bounded_rewards=True)
    out.details.update(decoy_policy=policy, metric_units=d_u)
    return out


def random_metric_units(rng: np.random.Generator, n_points: int, n_max: int) -> np.ndarray:
    """Random metric on the [0, 1] grid: points in the plane, distances scaled
    into [0, 1], snapped upward to the grid (rounding up preserves the
    triangle inequality) and capped at 1 (capping preserves it too)."""
    while True:
        pts = rng.random((n_points, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1)) / math.sqrt(2.0)
        units = np.minimum(np.ceil(dist * n_max - 1e-9).astype(np.int64), n_max)
        np.fill_diagonal(units, 0)
        off = units[~np.eye(n_points, dtype=bool)]
        if np.all(off >= 1):
            return units


def random_lipschitz_units(rng: np.random.Generator, d_units: np.ndarray,
                           n_max: int, max_attempts: int = 200) -> np.ndarray:
    """Random metric-compatible value table via lower-envelope smoothing of a
    free table; resamples until the maximum is unique and some suboptimal
    point has positive value."""
    k = d_units.shape[0]
    for _ in range(max_attempts):
        g = rng.integers(0, n_max + 1, size=k)
        f = (g[None, :] + d_units).min(axis=1)
        if (f == f.max()).sum() != 1:
            continue
        if any(0 < f[a] < f.max() for a in range(k)):
            return f
    raise FamilyError("could not sample a usable metric-compatible table")


def random_lipschitz_cb_units(rng: np.random.Generator, n_contexts: int, n_points: int,
                              n_max: int, max_attempts: int = 400):
    """Random contextual metric and table: per-context metrics from the plane,
    cross-context distances pinned at the value range's width (making the
    cross-context constraints vacuously satisfiable)."""
    xk = n_contexts * n_points
    d_units = np.full((xk, xk), n_max, dtype=np.int64)
    for x in range(n_contexts):
        sl = slice(x * n_points, (x + 1) * n_points)
        d_units[sl, sl] = random_metric_units(rng, n_points, n_max)
    for _ in range(max_attempts):
        g = rng.integers(0, n_max + 1, size=xk)
        f = (g[None, :] + d_units).min(axis=1).reshape(n_contexts, n_points)
        maxima = f.max(axis=1)
        if np.any((f == maxima[:, None]).sum(axis=1) != 1):
            continue
        if all(any(0 < f[x, a] < maxima[x] for a in range(n_points))
               for x in range(n_contexts)):
            return d_units, f
    raise FamilyError("could not sample a usable contextual table")


# ---------------------------------------------------------------------------
# Polynomial and quadratic bandits


def _poly_value_units(coeff_units: Sequence[int], i: int) -> int:
    """Value of the polynomial at arm i*eps in units of eps^(degree+1), given
    coefficient q in units of eps^(degree+1-q). Exact integer arithmetic."""
    return sum(int(u) * i ** q for q, u in enumerate(coeff_units))


def _coeff_bound(q: int) -> float:
    return 1.0 if q == 0 else 1.0 / q


def gen_polynomial(degree: int, eps: float, theta: Optional[Sequence[float]] = None,
                   rng: Optional[np.random.Generator] = None,
                   gamma: Optional[float] = None,
                   scan_extra: Optional[int] = None,
                   noise_sigma: float = 0.1,
                   max_attempts: int = 500) -> FamilyOutput:
    """Single-variable polynomial rewards on the [0, 1/2] grid, coefficient q
    discretized in steps of eps^(degree+1-q). Shifting the argument by one
    grid step and re-leveling produces a trap whose best arm sits one step
    left of the original optimum; the shifted coefficients stay within 3*eps
    (5*eps for the constant term) of the originals.

    Requires a negative leading coefficient and a well-shaped table: unique
    argmax exceeding every value on the scanned ray beyond the arm set (a
    finite scan, flagged heuristic in the output details).
    """
    p = int(degree)
    if p < 2:
        raise FamilyError("degree must be at least 2")
    if not 0 < eps < 1.0 / (2 * p):
        raise FamilyError("eps must lie in (0, 1/(2*degree))")
    arm_hi = math.floor(0.5 / eps + 1e-9)
    scan_extra = math.ceil(4.0 / eps) if scan_extra is None else int(scan_extra)
    deltas = [eps ** (p + 1 - q) for q in range(p + 1)]

    def units_of(values: Sequence[float]) -> list[int]:
        out = []
        for q, v in enumerate(values):
            u = round(v / deltas[q])
            if abs(u * deltas[q] - v) > 1e-9 * max(1.0, abs(v)):
                raise FamilyError(f"coefficient {q} is not on its grid (step {deltas[q]})")
            out.append(int(u))
        return out

    def well_shaped(coeff_units: Sequence[int]):
        vals = [_poly_value_units(coeff_units, i) for i in range(arm_hi + 1)]
        best = max(vals)
        if vals.count(best) != 1:
            return None
        i_star = vals.index(best)
        ray = [_poly_value_units(coeff_units, i)
               for i in range(arm_hi + 1, arm_hi + 1 + scan_extra)]
        if ray and max(ray) >= best:
            return None
        return i_star, vals

    def interior_bound_units(q: int) -> int:
        margin = _coeff_bound(q) - 5 * eps
        if margin <= 0:
            raise FamilyError("eps too large: interior coefficient range is empty")
        return math.floor(margin / deltas[q] + 1e-9)

    if theta is not None:
        coeff_units = units_of(theta)
        if coeff_units[p] == 0:
            raise FamilyError("leading coefficient must be nonzero")
        for q in range(p):
            if abs(coeff_units[q]) > interior_bound_units(q):
                raise FamilyError(f"coefficient {q} is not 5*eps inside its range")
        shaped = well_shaped(coeff_units)
        if shaped is None or shaped[0] < 2:
            raise FamilyError("polynomial is not well-shaped with best arm above eps")
    else:
        if rng is None:
            raise FamilyError("either theta or rng must be provided")
        if gamma is None:
            g_hi = math.floor((1.0 / p) / eps + 1e-9)
            g_units = -int(rng.integers(1, g_hi + 1))
        else:
            g_units = round(gamma / eps)
            if abs(g_units * eps - gamma) > 1e-9:
                raise FamilyError("gamma is not on the eps grid")
        if g_units >= 0:
            raise FamilyError("well-shaped tables need a negative leading coefficient")
        coeff_units = None
        for _ in range(max_attempts):
            cand = [int(rng.integers(-interior_bound_units(q), interior_bound_units(q) + 1))
                    for q in range(p)] + [g_units]
            shaped = well_shaped(cand)
            if shaped is not None and shaped[0] >= 2:
                coeff_units = cand
                break
        if coeff_units is None:
            raise FamilyError("could not sample a well-shaped parameter; adjust eps/gamma")

    i_star, vals = shaped
    vals_shifted = [_poly_value_units(coeff_units, i + 1) for i in range(arm_hi + 1)]
    drop_units = vals[i_star] - vals[i_star - 1]

    # Shift-and-relevel in closed form; exact in integer units.
    dec_units = [0] * (p + 1)
    dec_units[p] = coeff_units[p]
    for q in range(p - 1, 0, -1):
        dec_units[q] = sum(coeff_units[i] * math.comb(i, q) for i in range(q, p + 1))
    dec_units[0] = sum(coeff_units) - drop_units

    dec_vals = [_poly_value_units(dec_units, i) for i in range(arm_hi + 1)]
    if any(dv != sv - drop_units for dv, sv in zip(dec_vals, vals_shifted)):
        raise FamilyError("closed-form coefficients disagree with the shifted table")
    for q in range(p + 1):
        if abs(dec_units[q] * deltas[q]) > _coeff_bound(q) + 1e-12:
            raise FamilyError(f"shifted coefficient {q} left its allowed range")
    dec_shaped = well_shaped(dec_units)
    if dec_shaped is None or dec_shaped[0] != i_star - 1:
        raise FamilyError("shifted table is not well-shaped with the expected best arm")

    value_eps = eps ** (p + 1)
    f_star = RewardFunction.from_units(np.asarray(vals, dtype=np.int64)[None, :], value_eps)
    decoy = RewardFunction.from_units(np.asarray(dec_vals, dtype=np.int64)[None, :], value_eps)
    out = materialize_finite_class(f_star, decoy, grid_eps=value_eps, best_arm_unique=True,
                                   noise_sigma=noise_sigma)
    theta_vals = np.array([u * deltas[q] for q, u in enumerate(coeff_units)])
    dec_theta_vals = np.array([u * deltas[q] for q, u in enumerate(dec_units)])
    out.details.update(theta=theta_vals, decoy_theta=dec_theta_vals,
                       coeff_units=coeff_units, decoy_coeff_units=dec_units,
                       best_arm_index=i_star, arm_grid_eps=eps,
                       well_shaped_scan="heuristic finite scan",
                       scan_points=scan_extra)
    return out


def gen_quadratic(eps: float, gamma: float, mu: float, c: float,
                  noise_sigma: float = 0.1) -> FamilyOutput:
    """Concave parabola rewards on the [0, 1] grid: apex (mu, c), curvature
    gamma in [-1, -1/2]. Shifting the apex one grid step left and down by
    |gamma|*eps^2 yields a trap meeting the original table at the new apex."""
    if not 0 < eps <= 0.5:
        raise FamilyError("eps must lie in (0, 1/2]")
    g = round(gamma / eps)
    m = round(mu / eps)
    k = round(c / eps ** 3)
    if abs(g * eps - gamma) > 1e-9 or abs(m * eps - mu) > 1e-9 or abs(k * eps ** 3 - c) > 1e-9:
        raise FamilyError("parameters must sit on their grids (eps, eps, eps^3)")
    if not (-round(1 / eps) <= g <= -round(0.5 / eps)):
        raise FamilyError("curvature must lie in [-1, -1/2] on the eps grid")
    if not 0 <= m <= round(1 / eps) or not 0 <= k <= round(1 / eps ** 3):
        raise FamilyError("apex must lie in [0, 1] x [0, 1] on its grids")
    if m < 1:
        raise FamilyError("apex position must be at least eps")
    if k < -g:
        raise FamilyError("apex height must be at least |gamma| * eps^2")

    arm_hi = round(1.0 / eps)
    idx = np.arange(arm_hi + 1)
    f_units = g * (idx - m) ** 2 + k            # units of eps^3
    dec_units = g * (idx - (m - 1)) ** 2 + (k + g)
    if f_units[m - 1] != dec_units[m - 1]:
        raise FamilyError("tables must meet exactly at the shifted apex")
    f_star = RewardFunction.from_units(f_units[None, :], eps ** 3)
    decoy = RewardFunction.from_units(dec_units[None, :], eps ** 3)
    out = materialize_finite_class(f_star, decoy, grid_eps=eps ** 3,
                                   best_arm_unique=True, noise_sigma=noise_sigma)
    out.details.update(gamma=gamma, mu=mu, c=c, decoy_mu=mu - eps,
                       decoy_c=c + gamma * eps ** 2, arm_grid_eps=eps)
    return out


# ---------------------------------------------------------------------------
# L2-ball (infinite class) fixture


def gen_l2ball(n_arms: int, eps: float, gap: float, drop: float = 0.1,
               base: float = 0.5, radius: Optional[float] = None,
               noise_sigma: float = 0.05) -> FamilyOutput:
    """An L2-ball instance with a verified interior trap: the true table
    prefers arm 0 by ``gap`` while the trap table centers the ball, prefers
    the last arm, and matches the truth there exactly."""
    if n_arms < 2:
        raise FamilyError("need at least two arms")
    if gap <= 0 or drop <= 0 or eps <= 0:
        raise FamilyError("gap, drop and eps must be positive")
    a_dec = n_arms - 1
    f_star = np.full(n_arms, base - drop)
    f_star[0] = base + gap
    f_star[a_dec] = base
    decoy = np.full(n_arms, base - drop)
    decoy[a_dec] = base
    if radius is None:
        radius = eps + float(np.linalg.norm(f_star - decoy)) + 0.5
    ball = L2Ball(center=decoy.copy(), radius=radius)
    if not is_interior(decoy, ball, eps):
        raise FamilyError("trap table is not eps-interior to the ball")
    if not ball.contains(f_star):
        raise FamilyError("true table fell outside the ball")
    if decoy[a_dec] != f_star[a_dec] or not decoy[a_dec] < f_star.max():
        raise FamilyError("trap predicate failed")
    instance = ContinuumInstance(true_table=f_star, function_class=ball,
                                 noise_sigma=noise_sigma)
    return FamilyOutput(instance=instance, certificate=None,
                        details={"decoy_table": decoy, "eps": eps, "decoy_arm": a_dec})
