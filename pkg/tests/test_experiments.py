import math

import numpy as np
import pytest

from greedytrap.core import FunctionClass, GreedyTrapError, ProblemInstance, RewardFunction
from greedytrap.experiments import (
    ExperimentConfig,
    dmso_failure_experiment,
    estimate_stuck_probability,
    growth_shape,
    info_aware_baseline,
    regret_curve,
    select_decoy,
    sigma_rule_continuum,
    sigma_rule_finite,
    wilson_interval,
    write_curve_csv,
    write_summary_json,
    write_trials_csv,
)
from greedytrap import _engine_baseline

from fixtures_std import (
    cb_decoy_instance,
    cb_selfid_instance,
    continuum_decoy_fixture,
    dmso_fixture,
    dmso_tight_ratio_fixture,
    mab_decoy_instance,
    mab_selfid_instance,
)


class TestWilson:
    def test_contains_point_estimate(self):
        for k in (0, 1, 37, 199, 200):
            lo, hi = wilson_interval(k, 200)
            assert lo <= k / 200 <= hi

    def test_synthetic_coverage(self):
        rng = np.random.default_rng(71)
        p, n, meta = 0.3, 200, 1000
        covered = 0
        ks = rng.binomial(n, p, size=meta)
        for k in ks:
            lo, hi = wilson_interval(int(k), n)
            covered += lo <= p <= hi
        assert covered / meta >= 0.93


class TestSigmaRules:
    def test_closed_forms(self):
        assert sigma_rule_finite(0.8, 1) == pytest.approx(
            0.8 / math.sqrt(8 * math.log(21.0)))
        assert sigma_rule_finite(0.8, 2) == pytest.approx(
            0.8 / math.sqrt(8 * math.log(41.0)))
        assert sigma_rule_continuum(0.4, 2) == pytest.approx(
            0.4 / (4 * math.sqrt(2)) / math.sqrt(2 * math.log(21.0)))

    def test_union_bound_actually_below_a_tenth(self):
        for gap, d in ((0.8, 1), (0.5, 3)):
            sigma = sigma_rule_finite(gap, d)
            q = math.exp(-gap ** 2 / (8 * sigma ** 2))
            assert 2 * d * q / (1 - q) <= 0.1 + 1e-12


class TestStuckEstimation:
    def test_forced_band_sigma_zero_is_certain(self):
        inst, cert = mab_decoy_instance()
        cfg = ExperimentConfig(instance=inst, horizon=50, trials=64, master_seed=1,
                               sigma=0.0, force_e1=True)
        est, table = estimate_stuck_probability(cfg)
        assert est.p_hat == 1.0
        assert est.conditional_check == 1.0
        assert est.n_event_trials == 64
        assert set(table) >= {"trial_id", "stuck", "e1", "e2_through", "final_regret"}

    def test_selfid_instance_has_no_trap_to_estimate(self):
        cfg = ExperimentConfig(instance=mab_selfid_instance(), horizon=50,
                               trials=8, master_seed=1)
        with pytest.raises(GreedyTrapError, match="no trap"):
            estimate_stuck_probability(cfg)

    def test_sigma_zero_natural_warmup_is_deterministic(self):
        inst, cert = mab_decoy_instance()
        cfg = ExperimentConfig(instance=inst, horizon=50, trials=40, master_seed=9,
                               sigma=0.0)
        est, table = estimate_stuck_probability(cfg)
        assert est.p_hat in (0.0, 1.0)
        assert len(set(table["final_regret"])) == 1  # all trials identical

    def test_decoy_selection_prefers_largest_gap(self):
        from greedytrap.analysis import find_decoys
        f_star = RewardFunction([0.9, 0.5, 0.3])
        near = RewardFunction([0.8, 0.5, 0.3])
        far = RewardFunction([0.1, 0.2, 0.3])
        cls = FunctionClass((f_star, near, far), best_arm_unique=True)
        inst = ProblemInstance(f_star, cls, noise_sigma=0.1)
        chosen = select_decoy(inst)
        assert chosen.decoy_gap == max(c.decoy_gap for c in find_decoys(inst))

    def test_explicit_non_trap_hint_rejected(self):
        inst, cert = mab_decoy_instance()
        with pytest.raises(GreedyTrapError):
            select_decoy(inst, decoy_index=0)

    def test_reproducible_across_thread_counts(self):
        inst, cert = mab_decoy_instance()
        results = []
        for threads in (1, 4):
            cfg = ExperimentConfig(instance=inst, horizon=300, trials=600,
                                   master_seed=3, threads=threads)
            est, table = estimate_stuck_probability(cfg)
            results.append((est.p_hat, table["final_regret"].tobytes()))
        assert results[0] == results[1]


class TestRegretCurves:
    def test_always_optimal_curve_is_flat_after_warmup(self):
        inst = mab_selfid_instance(sigma=0.0)
        cfg = ExperimentConfig(instance=inst, horizon=100, trials=8, master_seed=2)
        curve = regret_curve(cfg)
        t0 = inst.warmup_total
        assert np.all(curve.mean[t0:] == curve.mean[t0])
        assert np.all(curve.stderr == 0.0)

    def test_failure_curve_matches_linear_identity(self):
        inst, cert = mab_decoy_instance()
        horizon, trials = 800, 4000
        cfg = ExperimentConfig(instance=inst, horizon=horizon, trials=trials,
                               master_seed=4)
        est, table = estimate_stuck_probability(cfg)
        curve = regret_curve(cfg)
        t0 = inst.warmup_total
        stuck = table["stuck"].astype(bool)
        warm_regret = curve.mean[t0 - 1]
        residual = warm_regret + float(
            np.sum(table["final_regret"][~stuck] - warm_regret) / trials)
        prediction = est.p_hat * cert.regret_per_round * (horizon - t0) + residual
        assert abs(curve.mean[-1] - prediction) <= 0.10 * max(curve.mean[-1], 1e-12)

    def test_slope_discrimination(self):
        inst_good = mab_selfid_instance(sigma=0.25)
        cfg = ExperimentConfig(instance=inst_good, horizon=2000, trials=60,
                               master_seed=5)
        good = regret_curve(cfg)
        inst_bad, _ = mab_decoy_instance()
        cfg = ExperimentConfig(instance=inst_bad, horizon=2000, trials=60,
                               master_seed=5, force_e1=True)
        bad = regret_curve(cfg)
        assert good.shape["sublinear"]
        assert not bad.shape["sublinear"]
        assert bad.shape["linear_r2"] > bad.shape["log_r2"]
        assert good.shape["decade_ratio"] <= 2.5 < 5 <= bad.shape["decade_ratio"]


class TestInfoAwareBaseline:
    def test_sigma_zero_excludes_after_one_pull(self):
        inst = mab_selfid_instance(sigma=0.0)
        res = _engine_baseline.run_baseline_trials(
            inst, horizon=100, master_seed=6, trial_indices=range(8), gamma=0.8,
            sigma=0.0)
        # Unique gaps and zero-width bands: each suboptimal arm keeps exactly
        # its single warm-up pull.
        assert np.all(res.pair_pulls[:, 0, 1] == 1)
        assert np.all(res.excluded_suboptimal)

    def test_sublinear_on_selfid_fixture(self):
        cfg = ExperimentConfig(instance=mab_selfid_instance(), horizon=2000,
                               trials=40, master_seed=7, algo="info-aware")
        curve = info_aware_baseline(cfg)
        assert curve.shape["sublinear"]

    def test_sublinear_on_trap_fixture_where_greedy_sticks(self):
        inst, _ = mab_decoy_instance()
        cfg = ExperimentConfig(instance=inst, horizon=2000, trials=40,
                               master_seed=8, algo="info-aware")
        curve = info_aware_baseline(cfg)
        assert curve.shape["sublinear"]

    def test_singleton_class_rejected(self):
        f = RewardFunction([0.2, 0.9])
        inst = ProblemInstance(f, FunctionClass((f,)), 0.1)
        cfg = ExperimentConfig(instance=inst, horizon=100, trials=4, master_seed=9,
                               algo="info-aware")
        with pytest.raises(GreedyTrapError):
            info_aware_baseline(cfg)


class TestDmsoFailure:
    def test_ratio_bound_holds(self):
        cls = dmso_tight_ratio_fixture()
        cfg = ExperimentConfig(instance=cls, horizon=0, trials=20_000,
                               master_seed=10, n0=4)
        report = dmso_failure_experiment(cfg)
        floor = report.q_e1_hat / report.ratio_bound
        joint_se = math.sqrt(report.p_e1_stderr ** 2
                             + (report.q_e1_stderr / report.ratio_bound) ** 2)
        assert report.p_e1_hat >= floor - 3 * joint_se
        # Sanity: the exact binomial values for this fixture.
        assert report.q_e1_hat == pytest.approx(0.7585, abs=0.02)
        assert report.p_e1_hat == pytest.approx(0.5248, abs=0.02)

    def test_stuck_estimate_attached_beyond_warmup(self):
        cls = dmso_fixture()
        cfg = ExperimentConfig(instance=cls, horizon=120, trials=800,
                               master_seed=11, n0=4)
        report = dmso_failure_experiment(cfg)
        assert report.stuck is not None
        assert report.stuck.wilson_ci_95[0] > 0
        assert report.stuck.conditional_check in (None, 1.0)


class TestGrowthShape:
    def test_pure_shapes(self):
        t = np.arange(1, 5001)
        lin = growth_shape(t, 0.3 * t.astype(float), warmup_size=2)
        assert lin["linear_r2"] > lin["log_r2"] and not lin["sublinear"]
        log = growth_shape(t, 5 * np.log(t), warmup_size=2)
        assert log["log_r2"] > log["linear_r2"] and log["sublinear"]


class TestThreads:
    def test_env_var_default(self, monkeypatch):
        from greedytrap.experiments import default_threads
        monkeypatch.setenv("GREEDYTRAP_THREADS", "6")
        assert default_threads() == 6
        inst, _ = mab_decoy_instance()
        cfg = ExperimentConfig(instance=inst, horizon=20, trials=2, master_seed=0)
        assert cfg.threads == 6
        monkeypatch.setenv("GREEDYTRAP_THREADS", "junk")
        assert default_threads() == 1


class TestWriters:
    def test_deterministic_bytes(self, tmp_path):
        table = {"trial_id": np.arange(3), "v": np.array([0.1, 0.25, 1 / 3])}
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trials_csv(p1, table)
        write_trials_csv(p2, table)
        assert p1.read_bytes() == p2.read_bytes()
        s1, s2 = tmp_path / "a.json", tmp_path / "b.json"
        payload = {"x": np.float64(0.1), "arr": np.arange(2), "nested": {"b": 2}}
        write_summary_json(s1, payload)
        write_summary_json(s2, payload)
        assert s1.read_bytes() == s2.read_bytes()
