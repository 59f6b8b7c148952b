"""Monte Carlo harness: trap-probability estimation with Wilson intervals,
regret trajectories with growth-shape fits, the information-aware baseline,
and the ghost-vs-true warm-up comparison for likelihood-based play.

Trials are split into fixed-size batches; each trial draws from its own
stream keyed by (master_seed, trial_index) and batches are reduced in index
order, so outputs are identical for any worker-thread count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _engine, _engine_baseline, _engine_continuum, _engine_dmso
from .analysis import DecoyCertificate, find_decoys, find_decoys_with_ties, function_gap
from .continuum import ContinuumInstance
from .core import GreedyTrapError, ProblemInstance
from .dmso import ModelClass, find_decoys_dmso

__all__ = [
    "ExperimentConfig",
    "StuckEstimate",
    "RegretCurve",
    "DmsoFailureReport",
    "wilson_interval",
    "sigma_rule_finite",
    "sigma_rule_continuum",
    "select_decoy",
    "estimate_stuck_probability",
    "regret_curve",
    "info_aware_baseline",
    "dmso_failure_experiment",
    "growth_shape",
    "write_trials_csv",
    "write_curve_csv",
    "write_summary_json",
    "default_threads",
]

Z95 = 1.959963984540054


def default_threads() -> int:
    env = os.environ.get("GREEDYTRAP_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # Rounding can push a boundary past the point estimate by an ulp; the
    # interval must contain it.
    return max(0.0, min(center - half, p)), min(1.0, max(center + half, p))


def sigma_rule_finite(gap: float, n_decoy_pairs: int = 1) -> float:
    """Largest noise scale at which the running-mean band of width gap/2
    provably holds forever with probability at least 0.9: the union bound
    2*D*q/(1-q) <= 0.1 with q = exp(-gap^2/(8 sigma^2)) solved for sigma."""
    if gap <= 0 or not math.isfinite(gap):
        raise ValueError("need a positive finite gap")
    return gap / math.sqrt(8.0 * math.log(20.0 * n_decoy_pairs + 1.0))


def sigma_rule_continuum(eps: float, n_arms: int) -> float:
    """Same bound with the tightened band eps/(4*sqrt(K))."""
    radius = eps / (4.0 * math.sqrt(n_arms))
    return radius / math.sqrt(2.0 * math.log(21.0))


@dataclass
class ExperimentConfig:
    instance: object
    horizon: int
    trials: int
    master_seed: int
    algo: str = "greedy"                 # greedy | greedy-mle | info-aware
    tie_mode: str = "strict"
    sigma: Optional[float] = None        # overrides the instance noise scale
    decoy_index: Optional[int] = None    # member hint (finite / model classes)
    decoy_table: Optional[np.ndarray] = None   # continuum trap table
    eps: Optional[float] = None          # continuum margin
    force_e1: bool = False
    threads: int = 0                     # 0 = GREEDYTRAP_THREADS or 1
    checkpoints: tuple = ()
    n0: Optional[int] = None             # per-policy warm-up (likelihood play)
    ghost: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.threads == 0:
            self.threads = default_threads()


@dataclass(frozen=True)
class StuckEstimate:
    """Estimated probability that play never leaves the trap through the
    horizon, with a Wilson 95% interval and the deterministic cross-check:
    among trials whose warm-up and running-mean events both held, the
    fraction stuck (must be exactly 1 whenever any such trial exists)."""

    p_hat: float
    wilson_ci_95: tuple
    trials: int
    stuck_count: int
    conditional_check: Optional[float]
    n_event_trials: int
    sigma_used: float
    horizon: int

    def __post_init__(self):
        lo, hi = self.wilson_ci_95
        if not lo <= self.p_hat <= hi:
            raise ValueError("point estimate outside its interval")


@dataclass
class RegretCurve:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials: int
    warmup_size: int
    shape: dict = field(default_factory=dict)


@dataclass
class DmsoFailureReport:
    q_e1_hat: float
    q_e1_stderr: float
    p_e1_hat: float
    p_e1_stderr: float
    ratio_bound: float
    n0: int
    n_policies: int
    mass_ratio_bound: float
    stuck: Optional[StuckEstimate]


def _chunks(trials: int) -> list[range]:
    return [range(lo, min(lo + _engine.CHUNK, trials))
            for lo in range(0, trials, _engine.CHUNK)]


def _run_chunked(fn, trials: int, threads: int) -> list:
    parts = _chunks(trials)
    if threads <= 1 or len(parts) == 1:
        return [fn(part) for part in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))


def select_decoy(instance: ProblemInstance, decoy_index: Optional[int] = None,
                 ties: bool = False) -> DecoyCertificate:
    """The designated trap: the hinted member if given, else the one with the
    largest gap (most detectable). Errors when the instance has none."""
    certs = find_decoys_with_ties(instance) if ties else find_decoys(instance)
    if not certs:
        raise GreedyTrapError("instance has no trap member: nothing to estimate")
    if decoy_index is None:
        return certs[0]
    for c in certs:
        if c.member_index == decoy_index:
            return c
    raise GreedyTrapError(f"member {decoy_index} is not a trap for this instance")


def _finite_batches(config: ExperimentConfig, cert, collect_curve: bool):
    inst = config.instance

    def run(part):
        return _engine.run_finite_trials(
            inst, horizon=config.horizon, tie_mode=config.tie_mode,
            master_seed=config.master_seed, trial_indices=part, decoy=cert,
            force_e1=config.force_e1, sigma=config.sigma,
            checkpoints=config.checkpoints, collect_curve=collect_curve)

    return _run_chunked(run, config.trials, config.threads)


def _continuum_batches(config: ExperimentConfig, collect_curve: bool):
    inst = config.instance
    if config.decoy_table is None or config.eps is None:
        raise GreedyTrapError("continuum runs need the trap table and the margin eps")

    def run(part):
        return _engine_continuum.run_continuum_trials(
            inst, horizon=config.horizon, master_seed=config.master_seed,
            trial_indices=part, decoy_table=config.decoy_table, eps=config.eps,
            force_e1=config.force_e1, sigma=config.sigma,
            checkpoints=config.checkpoints, collect_curve=collect_curve)

    return _run_chunked(run, config.trials, config.threads)


def _stack(batches, attr) -> np.ndarray:
    return np.concatenate([getattr(b, attr) for b in batches])


def _stuck_from_batches(batches, sigma_used: float, config: ExperimentConfig) -> StuckEstimate:
    stuck = _stack(batches, "stuck")
    e1 = _stack(batches, "e1")
    e2_through = _stack(batches, "e2_through")
    n = len(stuck)
    both = e1 & (e2_through >= config.horizon)
    conditional = float(stuck[both].mean()) if both.any() else None
    k = int(stuck.sum())
    return StuckEstimate(
        p_hat=k / n, wilson_ci_95=wilson_interval(k, n), trials=n, stuck_count=k,
        conditional_check=conditional, n_event_trials=int(both.sum()),
        sigma_used=sigma_used, horizon=config.horizon)


def estimate_stuck_probability(config: ExperimentConfig):
    """Monte Carlo estimate of the trap probability plus the per-trial table
    used for CSV export. Works on finite, continuum, and model-class
    instances."""
    if isinstance(config.instance, ProblemInstance):
        ties = config.tie_mode == "randomized"
        cert = select_decoy(config.instance, config.decoy_index, ties=ties)
        sigma_used = config.sigma if config.sigma is not None else config.instance.noise_sigma
        batches = _finite_batches(config, cert, collect_curve=False)
        est = _stuck_from_batches(batches, sigma_used, config)
    elif isinstance(config.instance, ContinuumInstance):
        sigma_used = config.sigma if config.sigma is not None else config.instance.noise_sigma
        batches = _continuum_batches(config, collect_curve=False)
        est = _stuck_from_batches(batches, sigma_used, config)
    elif isinstance(config.instance, ModelClass):
        est, batches = _dmso_stuck(config)
        sigma_used = float("nan")
    else:
        raise TypeError(f"unsupported instance type {type(config.instance)!r}")

    table = {
        "trial_id": _stack(batches, "trial_indices"),
        "stuck": _stack(batches, "stuck").astype(int),
        "e1": _stack(batches, "e1").astype(int),
        "e2_through": _stack(batches, "e2_through"
                             if not isinstance(config.instance, ModelClass)
                             else "e2_through_j"),
        "final_regret": _stack(batches, "final_regret"),
    }
    if config.checkpoints and not isinstance(config.instance, ModelClass):
        regret_at = np.concatenate([b.regret_at for b in batches])
        for j, c in enumerate(config.checkpoints):
            table[f"regret_at_{c}"] = regret_at[:, j]
    return est, table


def _dmso_stuck(config: ExperimentConfig):
    cls = config.instance
    if config.decoy_index is None:
        decoys = find_decoys_dmso(cls)
        if not decoys:
            raise GreedyTrapError("model class has no trap member")
        decoy_index = decoys[0]
    else:
        if config.decoy_index not in find_decoys_dmso(cls):
            raise GreedyTrapError(f"model {config.decoy_index} is not a trap")
        decoy_index = config.decoy_index
    n0 = config.n0
    if n0 is None:
        from .dmso import default_warmup_size
        n0 = default_warmup_size(cls)
        config.n0 = n0

    def run(part):
        return _engine_dmso.run_dmso_trials(
            cls, horizon=config.horizon, n0=n0, master_seed=config.master_seed,
            trial_indices=part, decoy_index=decoy_index, ghost=config.ghost)

    batches = _run_chunked(run, config.trials, config.threads)
    stuck = _stack(batches, "stuck")
    e1 = _stack(batches, "e1")
    both = e1 & _stack(batches, "e2_never_violated")
    conditional = float(stuck[both].mean()) if both.any() else None
    k = int(stuck.sum())
    n = len(stuck)
    est = StuckEstimate(
        p_hat=k / n, wilson_ci_95=wilson_interval(k, n), trials=n, stuck_count=k,
        conditional_check=conditional, n_event_trials=int(both.sum()),
        sigma_used=float("nan"), horizon=config.horizon)
    return est, batches


def growth_shape(t: np.ndarray, mean_regret: np.ndarray, warmup_size: int) -> dict:
    """Fit cumulative regret against t and against ln t on the post-warm-up
    range and report both R^2 values plus the regret ratio across the last
    decade; logarithmic growth shows a small ratio and a better log fit."""
    post = t > warmup_size
    tt = t[post].astype(np.float64)
    y = mean_regret[post]

    def r2(design):
        a = np.vstack([np.ones_like(design), design]).T
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        resid = y - a @ coef
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        return 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0

    horizon = int(t[-1])
    tenth = max(warmup_size + 1, horizon // 10)
    r_end = float(mean_regret[-1])
    r_tenth = float(mean_regret[tenth - 1])
    ratio = r_end / r_tenth if r_tenth > 0 else math.inf
    return {
        "linear_r2": r2(tt),
        "log_r2": r2(np.log(tt)),
        "decade_ratio": ratio,
        "sublinear": bool(ratio <= 2.5),
    }


def _curve_from_batches(batches, horizon: int, trials: int, warmup_size: int) -> RegretCurve:
    curve_sum = np.zeros(horizon)
    curve_sumsq = np.zeros(horizon)
    for b in batches:
        curve_sum += b.curve_sum
        curve_sumsq += b.curve_sumsq
    mean = curve_sum / trials
    if trials > 1:
        var = np.maximum(curve_sumsq - trials * mean ** 2, 0.0) / (trials - 1)
        stderr = np.sqrt(var / trials)
    else:
        stderr = np.zeros(horizon)
    t = np.arange(1, horizon + 1)
    curve = RegretCurve(t=t, mean=mean, stderr=stderr, trials=trials,
                        warmup_size=warmup_size)
    curve.shape = growth_shape(t, mean, warmup_size)
    return curve


def regret_curve(config: ExperimentConfig) -> RegretCurve:
    """Per-round mean and standard error of cumulative regret across trials,
    with growth-shape fits attached."""
    if config.algo == "info-aware":
        return info_aware_baseline(config)
    if isinstance(config.instance, ProblemInstance):
        cert = None
        if config.decoy_index is not None or config.force_e1:
            ties = config.tie_mode == "randomized"
            cert = select_decoy(config.instance, config.decoy_index, ties=ties)
        inst = config.instance

        def run(part):
            return _engine.run_finite_trials(
                inst, horizon=config.horizon, tie_mode=config.tie_mode,
                master_seed=config.master_seed, trial_indices=part, decoy=cert,
                force_e1=config.force_e1, sigma=config.sigma,
                checkpoints=config.checkpoints, collect_curve=True)

        batches = _run_chunked(run, config.trials, config.threads)
        warm = inst.warmup_total
    elif isinstance(config.instance, ContinuumInstance):
        batches = _continuum_batches(config, collect_curve=True)
        warm = config.instance.warmup_total
    elif isinstance(config.instance, ModelClass):
        est, batches_pair = _dmso_curve(config)
        batches, warm = batches_pair
    else:
        raise TypeError(f"unsupported instance type {type(config.instance)!r}")
    return _curve_from_batches(batches, config.horizon, config.trials, warm)


def _dmso_curve(config: ExperimentConfig):
    cls = config.instance
    n0 = config.n0
    if n0 is None:
        from .dmso import default_warmup_size
        n0 = default_warmup_size(cls)
        config.n0 = n0
    decoys = find_decoys_dmso(cls)
    decoy_index = config.decoy_index if config.decoy_index is not None else (
        decoys[0] if decoys else cls.true_index)

    def run(part):
        return _engine_dmso.run_dmso_trials(
            cls, horizon=config.horizon, n0=n0, master_seed=config.master_seed,
            trial_indices=part, decoy_index=decoy_index, ghost=config.ghost,
            collect_curve=True)

    batches = _run_chunked(run, config.trials, config.threads)
    return None, (batches, n0 * cls.n_policies)


def info_aware_baseline(config: ExperimentConfig) -> RegretCurve:
    """Regret trajectory of the information-aware reference algorithm."""
    inst = config.instance
    if not isinstance(inst, ProblemInstance):
        raise TypeError("the information-aware baseline runs on finite instances")
    gamma = function_gap(inst.true_function, inst.function_class).gap
    if not math.isfinite(gamma):
        raise GreedyTrapError("singleton classes have no identification problem")

    def run(part):
        return _engine_baseline.run_baseline_trials(
            inst, horizon=config.horizon, master_seed=config.master_seed,
            trial_indices=part, gamma=gamma, sigma=config.sigma,
            checkpoints=config.checkpoints, collect_curve=True)

    batches = _run_chunked(run, config.trials, config.threads)
    curve = _curve_from_batches(batches, config.horizon, config.trials,
                                inst.warmup_total)
    curve.shape["excluded_all_suboptimal_frac"] = float(
        _stack(batches, "excluded_suboptimal").mean())
    return curve


def dmso_failure_experiment(config: ExperimentConfig,
                            warmup_draws: Optional[int] = None) -> DmsoFailureReport:
    """Ghost-vs-true warm-up comparison plus the trap estimate.

    The first trap event's probability is estimated twice over warm-up-only
    runs: once with outcomes from the trap model (the counterfactual measure)
    and once from the truth; the change-of-measure bound says the true
    probability is at least the counterfactual one divided by
    B^(n_policies * n0).
    """
    cls = config.instance
    if not isinstance(cls, ModelClass):
        raise TypeError("this experiment runs on model classes")
    decoys = find_decoys_dmso(cls)
    if not decoys:
        raise GreedyTrapError("model class has no trap member")
    decoy_index = config.decoy_index if config.decoy_index is not None else decoys[0]
    n0 = config.n0
    if n0 is None:
        from .dmso import default_warmup_size
        n0 = default_warmup_size(cls)
    draws = config.trials if warmup_draws is None else warmup_draws
    t0 = n0 * cls.n_policies

    def run_warm(ghost):
        def run(part):
            return _engine_dmso.run_dmso_trials(
                cls, horizon=t0, n0=n0, master_seed=config.master_seed,
                trial_indices=part, decoy_index=decoy_index, ghost=ghost)
        batches = _run_chunked(run, draws, config.threads)
        e1 = _stack(batches, "e1")
        p = float(e1.mean())
        se = math.sqrt(max(p * (1 - p), 1e-12) / len(e1))
        return p, se

    q_hat, q_se = run_warm(ghost=True)
    p_hat, p_se = run_warm(ghost=False)
    ratio_bound = cls.mass_ratio_bound ** (cls.n_policies * n0)

    stuck = None
    if config.horizon > t0:
        sub = ExperimentConfig(
            instance=cls, horizon=config.horizon, trials=config.trials,
            master_seed=config.master_seed, algo="greedy-mle",
            decoy_index=decoy_index, threads=config.threads, n0=n0)
        stuck, _ = estimate_stuck_probability(sub)

    return DmsoFailureReport(
        q_e1_hat=q_hat, q_e1_stderr=q_se, p_e1_hat=p_hat, p_e1_stderr=p_se,
        ratio_bound=ratio_bound, n0=n0, n_policies=cls.n_policies,
        mass_ratio_bound=cls.mass_ratio_bound, stuck=stuck)


# ---------------------------------------------------------------------------
# Deterministic file output


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v)) if isinstance(v, (np.integer,)) else str(v)


def write_trials_csv(path, table: dict) -> None:
    keys = list(table.keys())
    n = len(table[keys[0]])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(table[k][i]) for k in keys) + "\n")


def write_curve_csv(path, curve: RegretCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,mean_regret,stderr\n")
        for i in range(len(curve.t)):
            fh.write(f"{int(curve.t[i])},{curve.mean[i]!r},{curve.stderr[i]!r}\n")


def write_summary_json(path, payload: dict) -> None:
    def clean(v):
        if isinstance(v, (np.floating,)):
            return float(v)
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, np.ndarray):
            return [clean(x) for x in v.tolist()]
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")
