"""Command-line surface: analyze instance files, generate family instances,
run batch simulations, and estimate trap probabilities.

Exit codes: 0 success, 1 usage or schema error, 2 runtime invariant
violation. Every command is deterministic given its arguments, seed, and
input files; repeated runs write byte-identical outputs for any --threads.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional

import numpy as np

from . import __version__
from .analysis import find_decoys, find_decoys_with_ties, function_gap, is_self_identifiable
from .continuum import ContinuumInstance, is_eps_self_identifiable, is_interior
from .core import GreedyTrapError, ProblemInstance
from .dmso import ModelClass, find_decoys_dmso, model_gap
from .experiments import (
    ExperimentConfig,
    estimate_stuck_probability,
    info_aware_baseline,
    regret_curve,
    sigma_rule_continuum,
    sigma_rule_finite,
    write_curve_csv,
    write_summary_json,
    write_trials_csv,
)
from .instancefile import InstanceFileError, LoadedInstance, load_instance, save_instance

USAGE_ERROR = 1
INVARIANT_ERROR = 2

FAMILIES = ("linear", "linear-cb-pos", "linear-cb-neg", "lipschitz",
            "lipschitz-cb", "polynomial", "quadratic", "l2ball")


def _version_string() -> str:
    return f"greedytrap-{__version__}"


def _echo_config(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if k != "func"}
    return {k: (str(v) if v is not None and not isinstance(v, (int, float, bool, str))
                else v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# analyze


def _analyze_finite(instance: ProblemInstance, ties: bool) -> dict:
    gap = function_gap(instance.true_function, instance.function_class)
    verdict, witness = is_self_identifiable(instance, ties=ties)
    certs = find_decoys_with_ties(instance) if ties else find_decoys(instance)
    return {
        "function_gap": gap.gap if math.isfinite(gap.gap) else "inf",
        "gap_witness": list(gap.witness) if gap.witness else None,
        "self_identifiable": verdict,
        "violation": None if witness is None else {
            "member": witness[0], "policy": [int(a) for a in witness[1].arms]},
        "decoys": [{
            "member": c.member_index,
            "policy": [int(a) for a in c.decoy_policy.arms],
            "optimal_arm_sets": [sorted(s) for s in c.optimal_arm_sets]
            if c.optimal_arm_sets else None,
            "gap": c.decoy_gap if math.isfinite(c.decoy_gap) else "inf",
            "regret_per_round": c.regret_per_round,
        } for c in certs],
        "verdict": ("greedy succeeds: sublinear regret for any warm-up data"
                    if verdict else "greedy fails for some warm-up data"),
        "tie_aware": ties,
    }


def _analyze(loaded: LoadedInstance) -> dict:
    inst = loaded.instance
    if isinstance(inst, ProblemInstance):
        ties = not inst.function_class.best_arm_unique
        report = _analyze_finite(inst, ties)
    elif isinstance(inst, ModelClass):
        decoys = find_decoys_dmso(inst)
        gap = model_gap(inst)
        report = {
            "model_gap": gap if math.isfinite(gap) else "inf",
            "mass_ratio_bound": inst.mass_ratio_bound,
            "self_identifiable": not decoys,
            "decoys": decoys,
            "verdict": ("likelihood-greedy succeeds: sublinear regret for any warm-up data"
                        if not decoys else "likelihood-greedy fails for some warm-up data"),
        }
    elif isinstance(inst, ContinuumInstance):
        eps = loaded.eps
        if eps is None:
            raise InstanceFileError("continuum analysis needs the eps field")
        verdict, witness = is_eps_self_identifiable(inst, eps)
        report = {
            "eps": eps,
            "eps_self_identifiable": verdict,
            "violation_arm": None if witness is None else int(witness[0]),
            "decoy_interior": None if loaded.decoy_table is None else
            bool(is_interior(loaded.decoy_table, inst.function_class, eps)),
            "verdict": ("greedy succeeds: sublinear regret for any warm-up data"
                        if verdict else
                        "greedy fails for some warm-up data"
                        if loaded.decoy_table is not None else
                        "undecided: no interior trap table provided"),
        }
    else:
        raise InstanceFileError(f"cannot analyze {type(inst)!r}")
    report["schema_version"] = loaded.raw.get("schema_version")
    report["kind"] = loaded.kind
    return report


def cmd_analyze(args) -> int:
    loaded = load_instance(args.instance)
    report = _analyze(loaded)
    print(json.dumps(report, sort_keys=True, indent=2))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    from . import families as fam

    rng = np.random.default_rng(args.seed)
    decoy_index: Optional[int] = None
    decoy_table = None
    eps = None
    if args.family == "linear":
        out = fam.gen_linear_bandit(d=args.d, eps=args.eps, rng=rng,
                                    n_distractors=args.distractors,
                                    noise_sigma=args.sigma)
        decoy_index = 1 if out.certificate is not None else None
    elif args.family == "linear-cb-pos":
        d = args.d
        base = rng.random(d) * 0.5 + 0.25
        sets = [[list(base + args.eps * np.eye(d)[i]) for i in range(d)]
                for _ in range(args.k)]
        thetas = [rng.random(d) * 2 - 1 for _ in range(max(2, args.distractors + 1))]
        out = fam.gen_linear_cb_positive(d=d, per_arm_sets=sets, thetas=thetas,
                                         noise_sigma=args.sigma)
    elif args.family == "linear-cb-neg":
        out = fam.gen_linear_cb_negative(d=args.d, eps=args.eps, n_arms=args.k,
                                         rng=rng, noise_sigma=args.sigma)
        decoy_index = 1
    elif args.family == "lipschitz":
        n_max = round(1.0 / args.eps)
        d_units = fam.random_metric_units(rng, args.k, n_max)
        f_units = fam.random_lipschitz_units(rng, d_units, n_max)
        out = fam.gen_lipschitz(d_units, args.eps, f_units, noise_sigma=args.sigma)
        decoy_index = 1
    elif args.family == "lipschitz-cb":
        n_max = round(1.0 / args.eps)
        d_units, f_units = fam.random_lipschitz_cb_units(rng, args.contexts, args.k, n_max)
        out = fam.gen_lipschitz_cb(d_units, args.eps, f_units, noise_sigma=args.sigma)
        decoy_index = 1
    elif args.family == "polynomial":
        out = fam.gen_polynomial(degree=args.degree, eps=args.eps, rng=rng,
                                 gamma=args.gamma, noise_sigma=args.sigma)
        decoy_index = 1
    elif args.family == "quadratic":
        gamma = args.gamma if args.gamma is not None else -1.0
        mu = args.mu if args.mu is not None else 0.5
        c = args.c if args.c is not None else 0.5
        out = fam.gen_quadratic(eps=args.eps, gamma=gamma, mu=mu, c=c,
                                noise_sigma=args.sigma)
        decoy_index = 1
    elif args.family == "l2ball":
        gap = args.gap if args.gap is not None else 0.05 * args.eps
        out = fam.gen_l2ball(n_arms=args.k, eps=args.eps, gap=gap,
                             noise_sigma=args.sigma)
        decoy_table = out.details["decoy_table"]
        eps = args.eps
    else:
        raise GreedyTrapError(f"unknown family {args.family!r}")

    save_instance(args.out, out.instance, decoy_index=decoy_index,
                  decoy_table=decoy_table, eps=eps)
    cert_report: dict = {"family": args.family, "seed": args.seed, "out": args.out}
    if out.certificate is not None:
        c = out.certificate
        cert_report["certificate"] = {
            "member": c.member_index,
            "policy": [int(a) for a in c.decoy_policy.arms],
            "gap": c.decoy_gap,
            "regret_per_round": c.regret_per_round,
        }
    elif decoy_table is not None:
        cert_report["decoy_table"] = [float(v) for v in decoy_table]
    else:
        cert_report["certificate"] = None
    print(json.dumps(cert_report, sort_keys=True, indent=2))
    return 0


# ---------------------------------------------------------------------------
# simulate


def _decade_checkpoints(horizon: int) -> tuple:
    cps = []
    c = 10
    while c < horizon:
        cps.append(c)
        c *= 10
    cps.append(horizon)
    return tuple(cps)


def cmd_simulate(args) -> int:
    loaded = load_instance(args.instance)
    inst = loaded.instance
    checkpoints = _decade_checkpoints(args.horizon)
    tie_mode = args.tie_mode
    if isinstance(inst, ProblemInstance) and not inst.function_class.best_arm_unique:
        tie_mode = "randomized"
    config = ExperimentConfig(
        instance=inst, horizon=args.horizon, trials=args.trials,
        master_seed=args.seed, algo=args.algo, tie_mode=tie_mode,
        sigma=args.sigma, decoy_index=loaded.decoy_index,
        decoy_table=loaded.decoy_table, eps=loaded.eps,
        force_e1=args.force_e1, threads=args.threads,
        checkpoints=checkpoints, n0=loaded.n0)

    summary: dict = {
        "version": _version_string(),
        "config": _echo_config(args),
        "checkpoints": list(checkpoints),
    }
    violation = False

    if args.algo == "info-aware":
        curve = info_aware_baseline(config)
        summary["shape"] = curve.shape
        summary["trials"] = curve.trials
        write_curve_csv(f"{args.out}.curve.csv", curve)
    else:
        has_decoy = (loaded.decoy_index is not None or loaded.decoy_table is not None
                     or _has_any_decoy(loaded))
        if has_decoy:
            est, table = estimate_stuck_probability(config)
            summary["stuck"] = {
                "p_hat": est.p_hat, "wilson_ci_95": list(est.wilson_ci_95),
                "trials": est.trials, "stuck_count": est.stuck_count,
                "conditional_check": est.conditional_check,
                "n_event_trials": est.n_event_trials,
                "sigma_used": est.sigma_used,
            }
            write_trials_csv(f"{args.out}.trials.csv", table)
            if est.conditional_check is not None and est.conditional_check != 1.0:
                violation = True
                summary["invariant_violation"] = (
                    "a trial satisfied both trap events but deviated")
        curve = regret_curve(config)
        summary["shape"] = curve.shape
        write_curve_csv(f"{args.out}.curve.csv", curve)

    write_summary_json(f"{args.out}.summary.json", summary)
    print(json.dumps({k: summary[k] for k in summary if k != "config"},
                     sort_keys=True, indent=2))
    return INVARIANT_ERROR if violation else 0


def _has_any_decoy(loaded: LoadedInstance) -> bool:
    inst = loaded.instance
    if isinstance(inst, ProblemInstance):
        ties = not inst.function_class.best_arm_unique
        certs = find_decoys_with_ties(inst) if ties else find_decoys(inst)
        return bool(certs)
    if isinstance(inst, ModelClass):
        return bool(find_decoys_dmso(inst))
    return False


# ---------------------------------------------------------------------------
# estimate-pdec


def cmd_estimate_pdec(args) -> int:
    loaded = load_instance(args.instance)
    inst = loaded.instance

    rule = args.sigma_rule
    if rule.startswith("fixed:"):
        sigma = float(rule.split(":", 1)[1])
    elif rule == "paper-mab":
        if not isinstance(inst, ProblemInstance):
            raise GreedyTrapError("the finite-class noise rule needs a finite instance")
        from .experiments import select_decoy
        ties = not inst.function_class.best_arm_unique
        cert = select_decoy(inst, loaded.decoy_index, ties=ties)
        n_pairs = sum(len(s) for s in cert.optimal_arm_sets) \
            if cert.optimal_arm_sets else inst.n_contexts
        sigma = sigma_rule_finite(cert.decoy_gap, n_pairs)
    elif rule == "paper-inf":
        if not isinstance(inst, ContinuumInstance) or loaded.eps is None:
            raise GreedyTrapError("the interior-trap noise rule needs a continuum instance")
        sigma = sigma_rule_continuum(loaded.eps, inst.n_arms)
    else:
        raise GreedyTrapError(f"unknown sigma rule {rule!r}")

    tie_mode = args.tie_mode
    if isinstance(inst, ProblemInstance) and not inst.function_class.best_arm_unique:
        tie_mode = "randomized"
    config = ExperimentConfig(
        instance=inst, horizon=args.horizon, trials=args.trials,
        master_seed=args.seed, tie_mode=tie_mode, sigma=sigma,
        decoy_index=loaded.decoy_index, decoy_table=loaded.decoy_table,
        eps=loaded.eps, force_e1=args.force_e1, threads=args.threads,
        n0=loaded.n0)
    est, _ = estimate_stuck_probability(config)
    payload = {
        "version": _version_string(),
        "p_hat": est.p_hat,
        "wilson_ci_95": list(est.wilson_ci_95),
        "trials": est.trials,
        "stuck_count": est.stuck_count,
        "horizon": est.horizon,
        "sigma_rule": rule,
        "sigma_used": est.sigma_used,
        "decoy": loaded.decoy_index if loaded.decoy_index is not None else "auto",
        "conditional_check": est.conditional_check,
        "n_event_trials": est.n_event_trials,
        "config": _echo_config(args),
    }
    if args.out:
        write_summary_json(args.out, payload)
    print(json.dumps({k: payload[k] for k in payload if k != "config"},
                     sort_keys=True, indent=2))
    if est.conditional_check is not None and est.conditional_check != 1.0:
        return INVARIANT_ERROR
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="greedytrap",
                                description="greedy-failure analysis toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="structural report for an instance file")
    pa.add_argument("instance")
    pa.add_argument("--out", default=None, help="also write the JSON report here")
    pa.set_defaults(func=cmd_analyze)

    pg = sub.add_parser("generate", help="generate a family instance file")
    pg.add_argument("family", choices=FAMILIES)
    pg.add_argument("--out", required=True)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--d", type=int, default=2, help="parameter dimension")
    pg.add_argument("--k", type=int, default=3, help="arms / points per context")
    pg.add_argument("--contexts", type=int, default=2)
    pg.add_argument("--eps", type=float, default=0.25, help="discretization step / margin")
    pg.add_argument("--degree", type=int, default=2)
    pg.add_argument("--gamma", type=float, default=None)
    pg.add_argument("--mu", type=float, default=None)
    pg.add_argument("--c", type=float, default=None)
    pg.add_argument("--gap", type=float, default=None)
    pg.add_argument("--sigma", type=float, default=0.1)
    pg.add_argument("--distractors", type=int, default=0)
    pg.set_defaults(func=cmd_generate)

    ps = sub.add_parser("simulate", help="batch Monte Carlo on an instance file")
    ps.add_argument("instance")
    ps.add_argument("--horizon", type=int, required=True)
    ps.add_argument("--trials", type=int, default=100)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--algo", choices=("greedy", "greedy-mle", "info-aware"),
                    default="greedy")
    ps.add_argument("--tie-mode", choices=("strict", "randomized"), default="strict")
    ps.add_argument("--sigma", type=float, default=None)
    ps.add_argument("--force-e1", action="store_true")
    ps.add_argument("--threads", type=int, default=0)
    ps.add_argument("--out", required=True, help="output path prefix")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("estimate-pdec", help="trap-probability estimate")
    pe.add_argument("instance")
    pe.add_argument("--trials", type=int, default=1000)
    pe.add_argument("--horizon", type=int, default=1000)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--sigma-rule", default="paper-mab",
                    help="paper-mab | paper-inf | fixed:<value>")
    pe.add_argument("--tie-mode", choices=("strict", "randomized"), default="strict")
    pe.add_argument("--force-e1", action="store_true")
    pe.add_argument("--threads", type=int, default=0)
    pe.add_argument("--out", default=None)
    pe.set_defaults(func=cmd_estimate_pdec)

    pv = sub.add_parser("version", help="print the version string")
    pv.set_defaults(func=lambda args: print(_version_string()) or 0)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args) or 0
    except (InstanceFileError, GreedyTrapError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
