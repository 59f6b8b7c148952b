"""Vectorized lockstep runner for maximum-likelihood greedy episodes.

Same determinism contract as the reward-table engine: per-trial randomness is
pre-drawn in fixed blocks from streams keyed by (master_seed, trial_index),
so batching and threading never change results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import RngStream
from .dmso import DmsoEpisodeResult, ModelClass, warmup_policy_sequence


@dataclass
class DmsoBatchResult:
    trial_indices: np.ndarray
    stuck: np.ndarray
    e1: np.ndarray
    e2_through_j: np.ndarray
    e2_never_violated: np.ndarray
    first_deviation: np.ndarray     # 0 = never deviated
    final_regret: np.ndarray
    curve_sum: Optional[np.ndarray]
    curve_sumsq: Optional[np.ndarray]
    trajectories: list = field(default_factory=list)


def _sample_outcomes(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: cum_rows (n, n_out), u (n,)."""
    return (cum_rows < u[:, None]).sum(axis=1).astype(np.int64)


def run_dmso_trials(cls: ModelClass, horizon: int, n0: int, master_seed: int,
                    trial_indices: Sequence[int], decoy_index: int,
                    ghost: bool = False,
                    collect_curve: bool = False,
                    record_trajectory: bool = False) -> DmsoBatchResult:
    trials = np.asarray(list(trial_indices), dtype=np.int64)
    n = len(trials)
    m = len(cls)
    n_out = cls.outcome_space.n_outcomes

    warm_seq = warmup_policy_sequence(cls, n0, decoy_index)
    t0 = len(warm_seq)
    if horizon < t0:
        raise ValueError(f"horizon {horizon} is shorter than the warm-up {t0}")
    n_rounds = horizon - t0
    boundary = t0 - n0 // 2  # rounds beyond this feed the trap's second event

    opt_pol = cls.optimal_policies()
    decoy_policy = int(opt_pol[decoy_index])
    logp = cls.log_probs()                          # (n_pol, n_out, m)
    probs_true = cls.true_model.probs               # (n_pol, n_out)
    cum_true = np.cumsum(probs_true, axis=1)
    cum_warm = np.cumsum(cls.members[decoy_index].probs, axis=1) if ghost else cum_true

    true_vals = cls.true_model.expected_rewards()
    vstar = float(true_vals.max())
    others = np.delete(np.arange(m), decoy_index)

    warm_u = np.empty((n, t0))
    main_u = np.empty((n, n_rounds))
    for i, trial in enumerate(trials):
        g = RngStream(master_seed, int(trial)).generator()
        warm_u[i] = g.random(t0)
        main_u[i] = g.random(n_rounds)

    ll = np.zeros((n, m))
    # Decoy-relative likelihood leads, accumulated as differences so a model
    # that matches the trap on a policy receives exact-zero increments there
    # (separate per-member accumulators would drift apart by an ulp even on
    # identical increments). The trap events AND the play both read these
    # leads, which is what makes "both events held" imply "stuck" bitwise.
    diff = np.zeros((n, len(others)))
    diff_bound = np.zeros((n, len(others)))
    e1 = np.ones(n, dtype=bool)
    e2_first_j = np.zeros(n, dtype=np.int64)
    j_count = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    cum_regret = np.zeros(n)

    curve_sum = np.zeros(horizon) if collect_curve else None
    curve_sumsq = np.zeros(horizon) if collect_curve else None

    rec_pol = np.empty((n, horizon), dtype=np.int64) if record_trajectory else None
    rec_out = np.empty((n, horizon), dtype=np.int64) if record_trajectory else None
    rec_reg = np.empty((n, horizon)) if record_trajectory else None

    def _track_round(t_idx: int, pol: np.ndarray, out: np.ndarray, is_decoy: np.ndarray):
        nonlocal cum_regret
        ll_add = logp[pol, out]                     # (n, m)
        ll[...] = ll + ll_add
        if len(others):
            diff[...] = diff + (ll_add[:, decoy_index][:, None] - ll_add[:, others])
        j_count[...] = j_count + is_decoy
        if len(others):
            check = is_decoy & (j_count > n0 // 2) & alive
            if check.any():
                viol = check & ((diff - diff_bound) < 0).any(axis=1) \
                    & (e2_first_j == 0)
                e2_first_j[viol] = j_count[viol]
        cum_regret = cum_regret + (vstar - true_vals[pol])
        if collect_curve:
            curve_sum[t_idx] = cum_regret.sum()
            curve_sumsq[t_idx] = (cum_regret ** 2).sum()
        if record_trajectory:
            rec_pol[:, t_idx] = pol
            rec_out[:, t_idx] = out
            rec_reg[:, t_idx] = cum_regret

    for s in range(t0):
        pol_s = int(warm_seq[s])
        pol = np.full(n, pol_s, dtype=np.int64)
        out = _sample_outcomes(np.broadcast_to(cum_warm[pol_s], (n, n_out)), warm_u[:, s])
        _track_round(s, pol, out, np.full(n, pol_s == decoy_policy))
        if s + 1 == boundary and len(others):
            diff_bound = diff.copy()
            e1 = np.all(diff_bound > 0, axis=1)

    first_dev = np.zeros(n, dtype=np.int64)
    for t in range(n_rounds):
        # Play the trap policy exactly when the trap model strictly leads per
        # the difference accumulators; otherwise fall back to the plain
        # argmax. The two agree except at floating-point-degenerate ties.
        if len(others):
            lead = (diff > 0).all(axis=1)
        else:
            lead = np.ones(n, dtype=bool)
        m_t = np.where(lead, decoy_index, ll.argmax(axis=1))
        pol = opt_pol[m_t]
        in_dec = pol == decoy_policy
        newly = alive & ~in_dec
        first_dev[newly] = t0 + t + 1
        alive &= in_dec
        out = _sample_outcomes(cum_true[pol], main_u[:, t])
        _track_round(t0 + t, pol, out, in_dec)

    e2_through_j = np.where(e2_first_j == 0, j_count, e2_first_j - 1)

    trajectories = []
    if record_trajectory:
        for i in range(n):
            trajectories.append(DmsoEpisodeResult(
                policies=rec_pol[i].copy(), outcomes=rec_out[i].copy(),
                log_likelihood=ll[i].copy(), warmup_size=t0,
                e1_held=bool(e1[i]), e2_held_through_j=int(e2_through_j[i]),
                stuck_on_decoy=bool(alive[i]),
                first_deviation_round=None if alive[i] else int(first_dev[i]),
                regret=rec_reg[i].copy(), ghost=ghost))

    return DmsoBatchResult(
        trial_indices=trials, stuck=alive, e1=e1, e2_through_j=e2_through_j,
        e2_never_violated=e2_first_j == 0,
        first_deviation=first_dev, final_regret=cum_regret,
        curve_sum=curve_sum, curve_sumsq=curve_sumsq, trajectories=trajectories)
