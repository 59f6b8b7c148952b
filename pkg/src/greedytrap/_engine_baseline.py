"""Vectorized runner for the information-aware reference algorithm.

The algorithm never plays a policy that is exactly identified and revealed
suboptimal: once every pair along a policy has a confidence band narrower
than half the class gap, the single class value inside each band pins the
policy's true rewards, and if every class member consistent with those values
ranks the policy below its own optimum the policy is barred. On top of that
it drops policies whose optimistic value falls below the best pessimistic
value (plain confidence-band domination), and plays round-robin over the
survivors. Both exclusions only ever remove provably bad plays, so the
combination stays information-aware while remaining no-regret off the
identified path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analysis import best_policy_value
from .core import ProblemInstance, RngStream

MAX_POLICIES = 4096


@dataclass
class BaselineBatchResult:
    trial_indices: np.ndarray
    final_regret: np.ndarray
    regret_at: np.ndarray
    subopt_at: np.ndarray
    pair_pulls: np.ndarray              # (n, X, K) final pull counts
    excluded_suboptimal: np.ndarray     # (n,) all truth-suboptimal policies barred at the end
    curve_sum: Optional[np.ndarray]
    curve_sumsq: Optional[np.ndarray]


def _beta_matrix(counts: np.ndarray, t: int, n_arms: int, n_contexts: int,
                 delta: float) -> np.ndarray:
    """Anytime radius sqrt((2/n) log(10 K X t n^2 / (3 delta))) with +inf on
    unsampled pairs."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = 10.0 * n_arms * n_contexts * t * counts ** 2 / (3.0 * delta)
        out = np.sqrt(2.0 / counts * np.log(inside))
    out[counts == 0] = np.inf
    return out


def run_baseline_trials(instance: ProblemInstance, horizon: int, master_seed: int,
                        trial_indices: Sequence[int], gamma: float,
                        delta: Optional[float] = None,
                        sigma: Optional[float] = None,
                        checkpoints: Sequence[int] = (),
                        collect_curve: bool = False) -> BaselineBatchResult:
    X, K = instance.n_contexts, instance.n_arms
    if K ** X > MAX_POLICIES:
        raise ValueError(f"policy space {K}**{X} exceeds the cap {MAX_POLICIES}")
    sig = instance.noise_sigma if sigma is None else float(sigma)
    delta = 1.0 / horizon if delta is None else float(delta)
    t0 = instance.warmup_total
    if horizon <= t0:
        raise ValueError("horizon must exceed the warm-up size")
    n_rounds = horizon - t0
    trials = np.asarray(list(trial_indices), dtype=np.int64)
    n = len(trials)

    policies = np.array(list(itertools.product(range(K), repeat=X)), dtype=np.int64)
    n_pol = len(policies)
    pol_flat = policies + np.arange(X)[None, :] * K          # (n_pol, X) flat pair ids

    F = instance.function_class.stacked()                    # (m, X, K)
    m = len(instance.function_class)
    Fflat = F.reshape(m, X * K)
    fstar = instance.true_function.values
    fstar_flat = fstar.ravel()
    probs = instance.context_probs
    vstar = best_policy_value(instance.true_function, probs)

    member_pol_value = np.einsum("x,mpx->mp", probs,
                                 F[:, np.arange(X)[None, :], policies])
    member_best = member_pol_value.max(axis=1, keepdims=True)
    member_subopt = member_pol_value < member_best           # (m, n_pol)
    true_pol_value = member_pol_value[instance.true_index]
    truth_subopt_pol = true_pol_value < true_pol_value.max()

    best_per_context = fstar.max(axis=1, keepdims=True)
    subopt_flat = (fstar < best_per_context).ravel()

    from ._engine import _context_matrix, _warmup_layout
    warm_x, warm_a, pair_slices, t0_check = _warmup_layout(instance.warmup_counts)
    assert t0_check == t0
    warm_means = fstar[warm_x, warm_a]
    warm_regret_cum = np.cumsum(vstar - warm_means)
    warm_subopt_cum = np.cumsum(subopt_flat[warm_x * K + warm_a].astype(np.int64))

    warm_z = np.empty((n, t0))
    ctx_u = np.empty((n, n_rounds))
    noise_z = np.empty((n, n_rounds))
    for i, trial in enumerate(trials):
        g = RngStream(master_seed, int(trial)).generator()
        warm_z[i] = g.standard_normal(t0)
        ctx_u[i] = g.random(n_rounds)
        noise_z[i] = g.standard_normal(n_rounds)

    warm_vals = warm_means[None, :] + sig * warm_z
    counts = np.broadcast_to(instance.warmup_counts.ravel().astype(np.float64),
                             (n, X * K)).copy()
    sums = np.zeros((n, X * K))
    for x, a, lo, hi in pair_slices:
        if hi > lo:
            sums[:, x * K + a] = warm_vals[:, lo:hi].sum(axis=1)

    cum_probs = np.cumsum(probs)
    ctx_idx = _context_matrix(cum_probs, ctx_u, X)

    checkpoints = tuple(int(c) for c in checkpoints)
    cp_col = {c: j for j, c in enumerate(checkpoints)}
    regret_at = np.zeros((n, len(checkpoints)))
    subopt_at = np.zeros((n, len(checkpoints)), dtype=np.int64)
    for c, j in cp_col.items():
        if 1 <= c <= t0:
            regret_at[:, j] = warm_regret_cum[c - 1]
            subopt_at[:, j] = warm_subopt_cum[c - 1]

    curve_sum = curve_sumsq = None
    if collect_curve:
        curve_sum = np.zeros(horizon)
        curve_sumsq = np.zeros(horizon)
        curve_sum[:t0] = n * warm_regret_cum
        curve_sumsq[:t0] = n * warm_regret_cum ** 2

    cum_regret = np.full(n, warm_regret_cum[-1] if t0 else 0.0)
    subopt_count = np.full(n, warm_subopt_cum[-1] if t0 else 0, dtype=np.int64)
    rr_clock = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    half_gap = gamma / 2.0
    excluded_last = np.zeros((n, n_pol), dtype=bool)

    for t in range(n_rounds):
        global_round = t0 + t + 1
        rho = sig * _beta_matrix(counts, global_round, K, X, delta)
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)

        # Exact identification: tight band + a unique class value inside it.
        inband = np.abs(Fflat[None, :, :] - means[:, None, :]) < half_gap   # (n, m, XK)
        inband &= counts[:, None, :] > 0
        any_in = inband.any(axis=1)
        vmax = np.where(inband, Fflat[None, :, :], -np.inf).max(axis=1)
        vmin = np.where(inband, Fflat[None, :, :], np.inf).min(axis=1)
        ident = (rho < half_gap) & any_in & (vmax == vmin)                  # (n, XK)

        lcb = np.where(counts > 0, means - rho, -np.inf)
        ucb = np.where(counts > 0, means + rho, np.inf)

        excluded = np.zeros((n, n_pol), dtype=bool)
        pol_lcb = np.empty((n, n_pol))
        pol_ucb = np.empty((n, n_pol))
        for p in range(n_pol):
            cols = pol_flat[p]
            pol_lcb[:, p] = lcb[:, cols] @ probs
            pol_ucb[:, p] = ucb[:, cols] @ probs
            all_ident = ident[:, cols].all(axis=1)
            consistent = inband[:, :, cols].all(axis=2)                     # (n, m)
            permits = (consistent & ~member_subopt[:, p][None, :]).any(axis=1)
            excluded[:, p] = all_ident & ~permits
        dominated = pol_ucb < pol_lcb.max(axis=1, keepdims=True)
        excluded |= dominated

        survivors = ~excluded
        none_left = ~survivors.any(axis=1)
        if none_left.any():
            # Degenerate off-event corner: fall back to the optimistic policy.
            fallback = pol_ucb.argmax(axis=1)
            survivors[none_left, fallback[none_left]] = True

        s_count = survivors.sum(axis=1)
        kth = rr_clock % s_count
        pol_t = (survivors.cumsum(axis=1) > kth[:, None]).argmax(axis=1)
        rr_clock += 1

        x = ctx_idx[:, t]
        arm = policies[pol_t][rows, x]
        flat = x * K + arm
        reward = fstar_flat[flat] + sig * noise_z[:, t]
        sums[rows, flat] += reward
        counts[rows, flat] += 1.0

        cum_regret += vstar - fstar_flat[flat]
        subopt_count += subopt_flat[flat]
        if global_round in cp_col:
            j = cp_col[global_round]
            regret_at[:, j] = cum_regret
            subopt_at[:, j] = subopt_count
        if collect_curve:
            curve_sum[t0 + t] = cum_regret.sum()
            curve_sumsq[t0 + t] = (cum_regret ** 2).sum()
        if t == n_rounds - 1:
            excluded_last = excluded

    excluded_all_subopt = excluded_last[:, truth_subopt_pol].all(axis=1) \
        if truth_subopt_pol.any() else np.ones(n, dtype=bool)

    return BaselineBatchResult(
        trial_indices=trials, final_regret=cum_regret, regret_at=regret_at,
        subopt_at=subopt_at, pair_pulls=counts.reshape(n, X, K).astype(np.int64),
        excluded_suboptimal=excluded_all_subopt,
        curve_sum=curve_sum, curve_sumsq=curve_sumsq)
