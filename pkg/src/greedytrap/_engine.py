"""Vectorized lockstep execution of independent Monte Carlo trials.

All trials of a batch advance round-by-round together as numpy array ops.
Each trial's randomness comes from its own stream keyed by (master_seed,
trial_index) and is pre-drawn as fixed blocks (warm-up normals, context
uniforms, tie uniforms, reward normals), so results never depend on batch
size, scheduling, or worker-thread count. Single-episode runs are the same
code with a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import DecoyCertificate, best_policy_value
from .core import (
    History,
    MissingWarmupError,
    ProblemInstance,
    RngStream,
    TieError,
)

# Fixed batch width: chunk boundaries are part of the determinism contract,
# so this must never be derived from the worker count.
CHUNK = 256


def _context_matrix(cum_probs: np.ndarray, u: np.ndarray, n_contexts: int) -> np.ndarray:
    idx = np.searchsorted(cum_probs, u, side="right")
    return np.minimum(idx, n_contexts - 1).astype(np.int64)


@dataclass
class TrialBatchResult:
    trial_indices: np.ndarray
    stuck: np.ndarray
    e1: Optional[np.ndarray]
    e2_through: Optional[np.ndarray]
    first_deviation: np.ndarray        # 0 = never deviated
    final_regret: np.ndarray
    regret_at: np.ndarray              # (n, n_checkpoints)
    subopt_at: np.ndarray              # (n, n_checkpoints)
    curve_sum: Optional[np.ndarray]    # (horizon,) sum over trials of R(t)
    curve_sumsq: Optional[np.ndarray]
    trajectories: list = field(default_factory=list)
    fallback_rounds: Optional[np.ndarray] = None  # continuum only


def _warmup_layout(warmup_counts: np.ndarray):
    """Row-major (context, arm, repetition) slot order shared by the scalar
    reference path and the vectorized path."""
    X, K = warmup_counts.shape
    xs, all_arms, lows, highs = [], [], [], []
    pos = 0
    pair_slices = []
    for x in range(X):
        for a in range(K):
            c = int(warmup_counts[x, a])
            pair_slices.append((x, a, pos, pos + c))
            xs.extend([x] * c)
            all_arms.extend([a] * c)
            pos += c
    return (np.asarray(xs, dtype=np.int64), np.asarray(all_arms, dtype=np.int64),
            pair_slices, pos)


def run_finite_trials(instance: ProblemInstance, horizon: int, tie_mode: str,
                      master_seed: int, trial_indices: Sequence[int],
                      decoy: Optional[DecoyCertificate] = None,
                      force_e1: bool = False,
                      sigma: Optional[float] = None,
                      checkpoints: Sequence[int] = (),
                      collect_curve: bool = False,
                      record_trajectory: bool = False) -> TrialBatchResult:
    """Run a batch of greedy episodes on one finite-class instance."""
    from .greedy import EpisodeResult, EventDiagnostics  # local import avoids a cycle

    X, K = instance.n_contexts, instance.n_arms
    m = len(instance.function_class)
    sig = instance.noise_sigma if sigma is None else float(sigma)
    t0 = instance.warmup_total
    if horizon <= t0:
        raise ValueError(f"horizon {horizon} must exceed warm-up size {t0}")
    n_rounds = horizon - t0
    trials = np.asarray(list(trial_indices), dtype=np.int64)
    n = len(trials)

    F = instance.function_class.stacked()            # (m, X, K)
    Fflat = F.reshape(m, X * K)
    F2flat = Fflat ** 2
    fstar = instance.true_function.values
    fstar_flat = fstar.ravel()
    vstar = best_policy_value(instance.true_function, instance.context_probs)

    # Per-member play structures.
    member_policy = F.argmax(axis=2)                 # (m, X), first index on ties
    row_max = F.max(axis=2, keepdims=True)
    tie_mask = F == row_max                          # (m, X, K)
    tie_sizes = tie_mask.sum(axis=2)                 # (m, X)
    tie_cum = tie_mask.cumsum(axis=2)
    member_tied = (tie_sizes > 1).any(axis=1)        # (m,)

    best_per_context = fstar.max(axis=1, keepdims=True)
    subopt_flat = (fstar < best_per_context).ravel()

    dmask = None
    band_radius = None
    dflat = None
    if decoy is not None:
        from .greedy import decoy_pair_mask, e1_band_centers
        dmask = decoy_pair_mask((X, K), decoy)
        band_radius = decoy.decoy_gap / 2.0
        dflat = np.flatnonzero(dmask.ravel())
        if np.any(~dmask & (instance.warmup_counts == 0)):
            raise MissingWarmupError("every off-decoy pair needs a warm-up sample "
                                     "for the warm-up band check")
        centers = e1_band_centers(instance, decoy)

    warm_x, warm_a, pair_slices, t0_check = _warmup_layout(instance.warmup_counts)
    assert t0_check == t0
    warm_means = fstar[warm_x, warm_a]
    warm_gap = vstar - warm_means
    warm_regret_cum = np.cumsum(warm_gap)
    warm_subopt_cum = np.cumsum(subopt_flat[warm_x * K + warm_a].astype(np.int64))

    cum_probs = np.cumsum(instance.context_probs)
    randomized = tie_mode == "randomized"

    # Pre-draw every trial's randomness as fixed blocks.
    warm_z = np.empty((n, t0))
    ctx_u = np.empty((n, n_rounds))
    tie_u = np.empty((n, n_rounds, X)) if randomized else None
    noise_z = np.empty((n, n_rounds))
    for i, trial in enumerate(trials):
        g = RngStream(master_seed, int(trial)).generator()
        warm_z[i] = g.standard_normal(t0)
        ctx_u[i] = g.random(n_rounds)
        if randomized:
            tie_u[i] = g.random((n_rounds, X))
        noise_z[i] = g.standard_normal(n_rounds)

    warm_vals = warm_means[None, :] + sig * warm_z
    if force_e1 and decoy is not None:
        slot_forced = ~dmask[warm_x, warm_a]
        warm_vals[:, slot_forced] = centers[warm_x, warm_a][slot_forced][None, :]

    counts = np.broadcast_to(instance.warmup_counts.ravel().astype(np.float64),
                             (n, X * K)).copy()
    sums = np.zeros((n, X * K))
    for x, a, lo, hi in pair_slices:
        if hi > lo:
            sums[:, x * K + a] = warm_vals[:, lo:hi].sum(axis=1)

    e1 = None
    if decoy is not None:
        nd = np.flatnonzero((~dmask).ravel() & (instance.warmup_counts.ravel() > 0))
        means0 = sums[:, nd] / counts[:, nd]
        e1 = np.all(np.abs(means0 - centers.ravel()[nd][None, :]) < band_radius, axis=1)

    ctx_idx = _context_matrix(cum_probs, ctx_u, X)

    checkpoints = tuple(int(c) for c in checkpoints)
    cp_col = {c: j for j, c in enumerate(checkpoints)}
    regret_at = np.zeros((n, len(checkpoints)))
    subopt_at = np.zeros((n, len(checkpoints)), dtype=np.int64)
    for c, j in cp_col.items():
        if c <= t0:
            regret_at[:, j] = warm_regret_cum[c - 1] if c >= 1 else 0.0
            subopt_at[:, j] = warm_subopt_cum[c - 1] if c >= 1 else 0

    curve_sum = curve_sumsq = None
    if collect_curve:
        curve_sum = np.zeros(horizon)
        curve_sumsq = np.zeros(horizon)
        curve_sum[:t0] = n * warm_regret_cum
        curve_sumsq[:t0] = n * warm_regret_cum ** 2

    alive = np.ones(n, dtype=bool)
    first_dev = np.zeros(n, dtype=np.int64)
    e2_alive = np.ones(n, dtype=bool)
    e2_first = np.zeros(n, dtype=np.int64)
    cum_regret = np.full(n, warm_regret_cum[-1] if t0 > 0 else 0.0)
    subopt_count = np.full(n, warm_subopt_cum[-1] if t0 > 0 else 0, dtype=np.int64)
    rows = np.arange(n)

    rec_ctx = np.empty((n, n_rounds), dtype=np.int64) if record_trajectory else None
    rec_arm = np.empty((n, n_rounds), dtype=np.int64) if record_trajectory else None
    rec_rew = np.empty((n, n_rounds)) if record_trajectory else None
    rec_mem = np.empty((n, n_rounds), dtype=np.int64) if record_trajectory else None
    rec_pol = np.empty((n, n_rounds, X), dtype=np.int64) if record_trajectory else None
    rec_reg = np.empty((n, n_rounds)) if record_trajectory else None

    for t in range(n_rounds):
        global_round = t0 + t + 1
        scores = counts @ F2flat.T - 2.0 * (sums @ Fflat.T)
        m_t = scores.argmin(axis=1)
        if not randomized and member_tied[m_t].any():
            bad = int(np.flatnonzero(member_tied[m_t])[0])
            tied_member = int(m_t[bad])
            tied_ctx = int(np.flatnonzero(tie_sizes[tied_member] > 1)[0])
            raise TieError(
                f"tied argmax for fitted member {tied_member} at round {global_round}",
                arms=np.flatnonzero(tie_mask[tied_member, tied_ctx]), context=tied_ctx)

        x = ctx_idx[:, t]
        if randomized:
            sizes = tie_sizes[m_t]                                   # (n, X)
            k = np.minimum((tie_u[:, t, :] * sizes).astype(np.int64), sizes - 1)
            pol = (tie_cum[m_t] > k[:, :, None]).argmax(axis=2)      # (n, X)
        else:
            pol = member_policy[m_t]
        arm = pol[rows, x]
        flat = x * K + arm

        if decoy is not None:
            in_dec = dmask[np.arange(X)[None, :], pol].all(axis=1)
            newly = alive & ~in_dec
            first_dev[newly] = global_round
            alive &= in_dec

        reward = fstar_flat[flat] + sig * noise_z[:, t]
        sums[rows, flat] += reward
        counts[rows, flat] += 1.0

        if decoy is not None and len(dflat):
            dmeans = sums[:, dflat] / np.maximum(counts[:, dflat], 1.0)
            dev = np.abs(dmeans - fstar_flat[dflat][None, :])
            viol = ((counts[:, dflat] > 0) & (dev > band_radius)).any(axis=1)
            newly = e2_alive & viol
            e2_first[newly] = global_round
            e2_alive &= ~viol

        cum_regret += vstar - fstar_flat[flat]
        subopt_count += subopt_flat[flat]
        if global_round in cp_col:
            j = cp_col[global_round]
            regret_at[:, j] = cum_regret
            subopt_at[:, j] = subopt_count
        if collect_curve:
            curve_sum[t0 + t] = cum_regret.sum()
            curve_sumsq[t0 + t] = (cum_regret ** 2).sum()
        if record_trajectory:
            rec_ctx[:, t] = x
            rec_arm[:, t] = arm
            rec_rew[:, t] = reward
            rec_mem[:, t] = m_t
            rec_pol[:, t] = pol
            rec_reg[:, t] = cum_regret

    e2_through = None
    if decoy is not None:
        e2_through = np.where(e2_first == 0, horizon, e2_first - 1)

    trajectories = []
    if record_trajectory:
        for i in range(n):
            history = History(X, K)
            for s in range(t0):
                history.record(int(warm_x[s]), int(warm_a[s]), float(warm_vals[i, s]))
            history.mark_warmup_complete()
            for t in range(n_rounds):
                history.record(int(rec_ctx[i, t]), int(rec_arm[i, t]), float(rec_rew[i, t]))
            contexts = np.concatenate([warm_x, rec_ctx[i]])
            arms = np.concatenate([warm_a, rec_arm[i]])
            rewards = np.concatenate([warm_vals[i], rec_rew[i]])
            members = np.concatenate([np.full(t0, -1, dtype=np.int64), rec_mem[i]])
            policies = np.concatenate([np.full((t0, X), -1, dtype=np.int64), rec_pol[i]])
            regret = np.concatenate([warm_regret_cum, rec_reg[i]])
            diag = None
            if decoy is not None:
                diag = EventDiagnostics(
                    e1_held=bool(e1[i]), e2_held_through=int(e2_through[i]),
                    stuck_on_decoy=bool(alive[i]),
                    first_deviation_round=None if alive[i] else int(first_dev[i]))
            trajectories.append(EpisodeResult(
                history=history, contexts=contexts, arms=arms, rewards=rewards,
                chosen_members=members, policies=policies, regret=regret,
                diagnostics=diag, warmup_size=t0))

    return TrialBatchResult(
        trial_indices=trials, stuck=alive.copy(), e1=e1, e2_through=e2_through,
        first_deviation=first_dev, final_regret=cum_regret.copy(),
        regret_at=regret_at, subopt_at=subopt_at,
        curve_sum=curve_sum, curve_sumsq=curve_sumsq, trajectories=trajectories)
