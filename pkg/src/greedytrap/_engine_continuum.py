"""Vectorized lockstep runner for empirical-fit greedy episodes on L2-ball
classes. Determinism contract matches the other engines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import MissingWarmupError, RngStream


@dataclass
class ContinuumEpisodeResult:
    history: object
    arms: np.ndarray
    rewards: np.ndarray
    regret: np.ndarray
    predictors: Optional[np.ndarray]  # (main rounds, K) fitted table per round
    diagnostics: object
    warmup_size: int
    fallback_rounds: int

    @property
    def horizon(self) -> int:
        return len(self.arms)

    @property
    def contexts(self) -> np.ndarray:
        return np.zeros(len(self.arms), dtype=np.int64)


@dataclass
class ContinuumBatchResult:
    trial_indices: np.ndarray
    stuck: np.ndarray
    e1: np.ndarray
    e2_through: np.ndarray
    first_deviation: np.ndarray
    final_regret: np.ndarray
    regret_at: np.ndarray
    subopt_at: np.ndarray
    fallback_rounds: np.ndarray
    curve_sum: Optional[np.ndarray]
    curve_sumsq: Optional[np.ndarray]
    trajectories: list = field(default_factory=list)


def run_continuum_trials(instance, horizon: int, master_seed: int,
                         trial_indices: Sequence[int], decoy_table, eps: float,
                         force_e1: bool = False, sigma: Optional[float] = None,
                         checkpoints: Sequence[int] = (),
                         collect_curve: bool = False,
                         record_trajectory: bool = False) -> ContinuumBatchResult:
    from .continuum import L2Ball, e1_centers_inf
    from .core import History
    from .greedy import EventDiagnostics

    ball = instance.function_class
    if not isinstance(ball, L2Ball):
        raise TypeError("the episode runner supports the L2 ball class")
    k = instance.n_arms
    sig = instance.noise_sigma if sigma is None else float(sigma)
    if np.any(instance.warmup_counts == 0):
        raise MissingWarmupError("empirical-fit episodes need a warm-up sample per arm")
    t0 = instance.warmup_total
    if horizon <= t0:
        raise ValueError(f"horizon {horizon} must exceed warm-up size {t0}")
    n_rounds = horizon - t0

    trials = np.asarray(list(trial_indices), dtype=np.int64)
    n = len(trials)
    fstar = instance.true_table
    vstar = float(fstar.max())
    a_star = int(np.argmax(fstar))
    decoy = np.asarray(decoy_table, dtype=np.float64).reshape(-1)
    a_dec = int(np.argmax(decoy))
    centers = e1_centers_inf(decoy, eps)
    radius = eps / (4.0 * np.sqrt(k))

    warm_a = np.repeat(np.arange(k), instance.warmup_counts)
    warm_means = fstar[warm_a]
    warm_gap = vstar - warm_means
    warm_regret_cum = np.cumsum(warm_gap)
    warm_subopt_cum = np.cumsum((warm_a != a_star).astype(np.int64))

    warm_z = np.empty((n, t0))
    noise_z = np.empty((n, n_rounds))
    for i, trial in enumerate(trials):
        g = RngStream(master_seed, int(trial)).generator()
        warm_z[i] = g.standard_normal(t0)
        g.random(n_rounds)  # context slot kept for layout parity (single context)
        noise_z[i] = g.standard_normal(n_rounds)

    warm_vals = warm_means[None, :] + sig * warm_z
    if force_e1:
        forced = warm_a != a_dec
        warm_vals[:, forced] = centers[warm_a[forced]][None, :]

    counts = np.broadcast_to(instance.warmup_counts.astype(np.float64), (n, k)).copy()
    sums = np.zeros((n, k))
    for a in range(k):
        lo = int(instance.warmup_counts[:a].sum())
        hi = lo + int(instance.warmup_counts[a])
        sums[:, a] = warm_vals[:, lo:hi].sum(axis=1)

    means0 = sums / counts
    off = np.delete(np.arange(k), a_dec)
    e1 = np.all(np.abs(means0[:, off] - centers[off][None, :]) < radius, axis=1)

    checkpoints = tuple(int(c) for c in checkpoints)
    cp_col = {c: j for j, c in enumerate(checkpoints)}
    regret_at = np.zeros((n, len(checkpoints)))
    subopt_at = np.zeros((n, len(checkpoints)), dtype=np.int64)
    for c, j in cp_col.items():
        if c <= t0 and c >= 1:
            regret_at[:, j] = warm_regret_cum[c - 1]
            subopt_at[:, j] = warm_subopt_cum[c - 1]

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
    cum_regret = np.full(n, warm_regret_cum[-1])
    subopt_count = np.full(n, warm_subopt_cum[-1], dtype=np.int64)
    fallback = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)

    rec_arm = np.empty((n, n_rounds), dtype=np.int64) if record_trajectory else None
    rec_rew = np.empty((n, n_rounds)) if record_trajectory else None
    rec_reg = np.empty((n, n_rounds)) if record_trajectory else None
    rec_pred = np.empty((n, n_rounds, k)) if record_trajectory else None

    r2 = ball.radius ** 2
    for t in range(n_rounds):
        global_round = t0 + t + 1
        means = sums / counts
        inside = np.sum((means - ball.center[None, :]) ** 2, axis=1) <= r2
        f_t = means.copy()
        if not inside.all():
            for i in np.flatnonzero(~inside):
                f_t[i], _ = ball.project_weighted(means[i], counts[i])
                fallback[i] += 1
        arm = f_t.argmax(axis=1)

        in_dec = arm == a_dec
        newly = alive & ~in_dec
        first_dev[newly] = global_round
        alive &= in_dec

        reward = fstar[arm] + sig * noise_z[:, t]
        sums[rows, arm] += reward
        counts[rows, arm] += 1.0

        dev = np.abs(sums[:, a_dec] / counts[:, a_dec] - fstar[a_dec])
        viol = dev > radius
        newly = e2_alive & viol
        e2_first[newly] = global_round
        e2_alive &= ~viol

        cum_regret += vstar - fstar[arm]
        subopt_count += (arm != a_star).astype(np.int64)
        if global_round in cp_col:
            j = cp_col[global_round]
            regret_at[:, j] = cum_regret
            subopt_at[:, j] = subopt_count
        if collect_curve:
            curve_sum[t0 + t] = cum_regret.sum()
            curve_sumsq[t0 + t] = (cum_regret ** 2).sum()
        if record_trajectory:
            rec_arm[:, t] = arm
            rec_rew[:, t] = reward
            rec_reg[:, t] = cum_regret
            rec_pred[:, t] = f_t

    e2_through = np.where(e2_first == 0, horizon, e2_first - 1)

    trajectories = []
    if record_trajectory:
        for i in range(n):
            history = History(1, k)
            for s in range(t0):
                history.record(0, int(warm_a[s]), float(warm_vals[i, s]))
            history.mark_warmup_complete()
            for t in range(n_rounds):
                history.record(0, int(rec_arm[i, t]), float(rec_rew[i, t]))
            diag = EventDiagnostics(
                e1_held=bool(e1[i]), e2_held_through=int(e2_through[i]),
                stuck_on_decoy=bool(alive[i]),
                first_deviation_round=None if alive[i] else int(first_dev[i]))
            trajectories.append(ContinuumEpisodeResult(
                history=history,
                arms=np.concatenate([warm_a, rec_arm[i]]),
                rewards=np.concatenate([warm_vals[i], rec_rew[i]]),
                regret=np.concatenate([warm_regret_cum, rec_reg[i]]),
                predictors=rec_pred[i].copy(), diagnostics=diag,
                warmup_size=t0, fallback_rounds=int(fallback[i])))

    return ContinuumBatchResult(
        trial_indices=trials, stuck=alive, e1=e1, e2_through=e2_through,
        first_deviation=first_dev, final_regret=cum_regret,
        regret_at=regret_at, subopt_at=subopt_at, fallback_rounds=fallback,
        curve_sum=curve_sum, curve_sumsq=curve_sumsq, trajectories=trajectories)
