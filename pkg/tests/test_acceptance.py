"""End-to-end acceptance suite.

Each test prints one PASS/FAIL line per criterion; run with ``-m acceptance``
(or the full suite) and ``-v`` to see them. The Monte Carlo criteria use
20,000 replications unless stated otherwise and fixed seeds, so reruns are
deterministic.
"""

import numpy as np
import pytest

from gmmdc import (
    FitPlan,
    IvLocal,
    PanelLagMiss,
    PanelRandomCoef,
    ReplicationStreams,
    StudyConfig,
    WeightSpec,
    build_ab_system,
    build_iv_system,
    d_hat,
    dgp_iv,
    dgp_panel_lag,
    fit,
    m_contributions,
    moment_stats,
    mr_bootstrap,
    neumann_inverse,
    omega_derivative,
    onestep_expansion,
    run_study,
    solve_weighted,
    twostep_expansion,
    variance_report,
)
from conftest import iv_population_truth
from reference_formulas import iv_closed_forms, panel_closed_forms

pytestmark = pytest.mark.acceptance

THREADS = 2
KINDS = ("one-step", "two-step", "iterated")


def report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num}] {status}: {detail}")
    assert ok, detail


class TestCriterion1:
    def test_iv_baseline_replication(self):
        cfg = StudyConfig(design=IvLocal(n=500, alpha0=0.0), replications=20_000,
                          estimators=("two",), seed=101)
        b = run_study(cfg, threads=THREADS).estimators["two"]
        checks = [
            ("mean", b.mean_theta, 1.0066, 0.005),
            ("sd", b.sd_theta, 0.0962, 0.004),
            ("se_conv", b.mean_se_conv, 0.0946, 0.003),
            ("se_w", b.mean_se_w, 0.0958, 0.003),
            ("se_dc", b.mean_se_dc, 0.0955, 0.003),
        ]
        detail = "; ".join(f"{name} {got:.4f} (target {target} +- {tol})"
                           for name, got, target, tol in checks)
        ok = all(abs(got - target) <= tol for _, got, target, tol in checks)
        report(1, ok, detail)


class TestCriterion2:
    def test_iv_misspecification_trend(self):
        blocks = {}
        for alpha0 in (0.0, 1.0):
            cfg = StudyConfig(design=IvLocal(n=50, alpha0=alpha0),
                              replications=20_000, estimators=("two",), seed=102)
            blocks[alpha0] = run_study(cfg, threads=THREADS).estimators["two"]
        b1 = blocks[1.0]
        dc_gap = abs(b1.mean_se_dc - b1.sd_theta)
        conv_gap = b1.sd_theta - b1.mean_se_conv
        gap0 = blocks[0.0].sd_theta - blocks[0.0].mean_se_conv
        ok = dc_gap < 0.012 and conv_gap > 0.08 and conv_gap > gap0
        report(2, ok,
               f"alpha0=1: |se_dc - sd| = {dc_gap:.4f} (< 0.012), "
               f"sd - se_conv = {conv_gap:.4f} (> 0.08), trend vs alpha0=0 gap {gap0:.4f}")


class TestCriterion3:
    def test_panel_random_coefficient_replication(self):
        cfg = StudyConfig(design=PanelRandomCoef(N=500, T=4, alpha0=0.0),
                          replications=20_000, estimators=("two",), seed=103)
        b = run_study(cfg, threads=THREADS).estimators["two"]
        ok = abs(b.mean_theta - 0.4893) <= 0.006 and abs(b.mean_se_dc - 0.1404) <= 0.004
        report(3, ok, f"mean {b.mean_theta:.4f} (target 0.4893 +- 0.006); "
                      f"se_dc {b.mean_se_dc:.4f} (target 0.1404 +- 0.004)")


class TestCriterion4:
    def test_panel_lag_replication(self):
        cfg = StudyConfig(design=PanelLagMiss(N=100, T=4, alpha0=0.0),
                          replications=20_000, estimators=("two",), seed=104)
        b = run_study(cfg, threads=THREADS).estimators["two"]
        checks = [
            ("mean", b.mean_theta, 0.9849, 0.005),
            ("se_w", b.mean_se_w, 0.1390, 0.004),
            ("J", b.reject_j, 0.0301, 0.01),
        ]
        detail = "; ".join(f"{name} {got:.4f} (target {target} +- {tol})"
                           for name, got, target, tol in checks)
        ok = all(abs(got - target) <= tol for _, got, target, tol in checks)
        report(4, ok, detail)


class TestCriterion5:
    def test_bootstrap_size_study(self):
        cfg = StudyConfig(design=IvLocal(n=100, alpha0=0.0), replications=2_000,
                          estimators=("one", "two"), seed=105, bootstrap_B=499)
        s = run_study(cfg, threads=THREADS)
        two, one = s.estimators["two"], s.estimators["one"]
        checks = [
            ("two-step t_dc", two.reject_dc, 0.082),
            ("two-step t_dc-bs", two.reject_boot, 0.069),
            ("one-step t_dc-bs", one.reject_boot, 0.064),
        ]
        detail = "; ".join(f"{name} {got:.4f} (target {target} +- 0.015)"
                           for name, got, target in checks)
        ok = all(abs(got - target) <= 0.015 for _, got, target in checks)
        report(5, ok, detail)


class TestCriterion6:
    def test_oracle_equivalence(self):
        worst = 0.0
        rng = np.random.default_rng(106)
        for d in range(100):
            kind = KINDS[d % 3]
            n = int(rng.integers(35, 70))
            y, X, Z = dgp_iv(n, float(rng.uniform(0, 1)), ReplicationStreams(106, d))
            sysm = build_iv_system(y, X, Z)
            ref = iv_closed_forms(y, X[:, 0], Z, kind)
            rep = variance_report(sysm, fit(sysm, FitPlan(kind)))
            pairs = [(rep.V_conv, ref["V_conv"]), (rep.V_dc, ref["V_dc"])]
            if kind != "one-step":
                pairs.append((rep.V_w, ref["V_w"]))
            for got, want in pairs:
                worst = max(worst, np.abs(got - want).max() / np.abs(want).max())
        for d in range(100):
            kind = KINDS[d % 3]
            N = int(rng.integers(25, 50))
            panel = dgp_panel_lag(N, 4, float(rng.uniform(0, 0.3)),
                                  ReplicationStreams(107, d))
            sysm = build_ab_system(panel)
            ref = panel_closed_forms(panel.y, panel.x, kind)
            rep = variance_report(sysm, fit(sysm, FitPlan(kind)))
            pairs = [(rep.se_conv, ref["se_conv"]), (rep.se_dc, ref["se_dc"])]
            if kind != "one-step":
                pairs.append((rep.se_w, ref["se_w"]))
            for got, want in pairs:
                worst = max(worst, np.abs(got - want).max() / np.abs(want).max())
        report(6, worst < 1e-10,
               f"max relative deviation from closed forms over 200 datasets: {worst:.3e}")


class TestCriterion7:
    def test_property_suite(self):
        rng = np.random.default_rng(107)
        failures = []

        # FOC zero-mean of the influence contributions, all estimator kinds.
        y, X, Z = dgp_iv(120, 0.5, ReplicationStreams(108, 0))
        sysm = build_iv_system(y, X, Z)
        for kind in KINDS:
            f = fit(sysm, FitPlan(kind))
            if kind == "iterated":
                weight = moment_stats(sysm, f.theta).Omega
                wobs = sysm.g_obs(f.theta)
            else:
                weight = f.final_weight
                wobs = sysm.W_obs if kind == "one-step" else sysm.g_obs(f.steps[0].theta)
            m = m_contributions(sysm, f.theta, weight, wobs)
            if np.abs(m.mean(axis=0)).max() >= 1e-8 * (1 + np.abs(m).max()):
                failures.append(f"FOC zero-mean ({kind})")

        # Just-identified collapse.
        yj = rng.standard_normal(60)
        Xj = rng.standard_normal((60, 2))
        sysj = build_iv_system(yj, Xj, rng.standard_normal((60, 2)))
        for kind in KINDS:
            rep = variance_report(sysj, fit(sysj, FitPlan(kind)))
            same = np.allclose(rep.V_conv, rep.V_dc, rtol=1e-8)
            if rep.V_w is not None:
                same = same and np.allclose(rep.V_conv, rep.V_w, rtol=1e-8)
            if not (same and np.abs(rep.D_hat).max() < 1e-8):
                failures.append(f"just-identified collapse ({kind})")

        # PSD of the doubly corrected matrix.
        rep2 = variance_report(sysm, fit(sysm, FitPlan.two_step()))
        eig = np.linalg.eigvalsh(rep2.V_dc)
        if eig.min() < -1e-10 * np.trace(rep2.V_dc):
            failures.append("V_dc PSD")

        # Weight-scaling invariance of the estimator.
        w = sysm.weight_matrix(WeightSpec.data_average())
        base = solve_weighted(sysm, w)
        if not np.allclose(solve_weighted(sysm, 1e3 * w), base, rtol=1e-9):
            failures.append("weight-scaling invariance")

        # Derivative of the second-moment matrix vs finite differences.
        theta = rng.standard_normal(1)
        step = 1e-5
        fd = (moment_stats(sysm, theta + step).Omega
              - moment_stats(sysm, theta - step).Omega) / (2 * step)
        if not np.allclose(omega_derivative(sysm, theta, 0), fd, rtol=1e-6):
            failures.append("omega derivative vs finite differences")

        # Bootstrap determinism (two runs; scheduling-independent streams).
        b1 = mr_bootstrap(sysm, FitPlan.two_step(), 0, 99, seed=5, null_value=1.0)
        b2 = mr_bootstrap(sysm, FitPlan.two_step(), 0, 99, seed=5, null_value=1.0)
        if not (np.array_equal(b1.t_star, b2.t_star) and b1.crit_abs == b2.crit_abs):
            failures.append("bootstrap determinism")
        cfg = StudyConfig(design=IvLocal(n=50, alpha0=0.0), replications=64,
                          estimators=("two",), seed=11, bootstrap_B=99)
        r1 = run_study(cfg, threads=1).estimators["two"]
        r2 = run_study(cfg, threads=2).estimators["two"]
        if not (r1.reject_boot == r2.reject_boot and r1.mean_theta == r2.mean_theta):
            failures.append("bootstrap determinism across worker counts")

        report(7, not failures, "properties: " + (", ".join(failures) or "all hold"))


class TestCriterion8:
    def test_expansion_order_checks(self):
        sizes = (100, 400, 1600, 6400)
        reps = 1000
        med = {"one": [], "two": []}
        for n in sizes:
            truth = iv_population_truth(n, 1.0)
            resid = {"one": [], "two": []}
            for r in range(reps):
                y, X, Z = dgp_iv(n, 1.0, ReplicationStreams(109, r))
                sysm = build_iv_system(y, X, Z)
                t1 = np.sqrt(n) * (fit(sysm, FitPlan.one_step()).theta - truth.theta0)
                t2 = np.sqrt(n) * (fit(sysm, FitPlan.two_step()).theta - truth.theta0)
                resid["one"].append(abs(t1 - onestep_expansion(sysm, truth).predicted)[0])
                resid["two"].append(abs(t2 - twostep_expansion(sysm, truth).predicted)[0])
            for key in med:
                med[key].append(np.median(resid[key]))
        slopes = {key: np.polyfit(np.log(sizes), np.log(vals), 1)[0]
                  for key, vals in med.items()}

        rng = np.random.default_rng(110)
        decay_ok = True
        for _ in range(5):
            fmat = rng.standard_normal((3, 3))
            Xm = fmat @ fmat.T + 3 * np.eye(3)
            Ym = 0.5 * rng.standard_normal((3, 3))
            exact = np.linalg.inv(Xm + Ym / np.sqrt(400))
            errs = [np.linalg.norm(neumann_inverse(Xm, Ym, 400, q) - exact, 2)
                    for q in range(4)]
            decay_ok = decay_ok and all(errs[i + 1] < 0.5 * errs[i] for i in range(3))

        ok = all(-1.2 <= s <= -0.8 for s in slopes.values()) and decay_ok
        report(8, ok, f"log-log slopes one-step {slopes['one']:.3f}, "
                      f"two-step {slopes['two']:.3f} (target -1 +- 0.2); "
                      f"geometric truncation decay {'holds' if decay_ok else 'fails'}")


class TestCriterion9:
    def test_consistency_under_fixed_misspecification(self):
        cfg = StudyConfig(design=IvLocal(n=4000, alpha0=1.0), replications=5_000,
                          estimators=("one", "two", "iter"), seed=111,
                          fixed_misspec=True)
        s = run_study(cfg, threads=THREADS)
        details = []
        ok = True
        for est, b in s.estimators.items():
            rel = abs(b.mean_se_dc - b.sd_theta) / b.sd_theta
            details.append(f"{est}: |se_dc-sd|/sd = {rel:.4f}")
            ok = ok and rel < 0.05
        two = s.estimators["two"]
        understate = (two.sd_theta - two.mean_se_conv) / two.sd_theta
        details.append(f"two-step conventional understates by {understate:.1%}")
        ok = ok and understate > 0.10
        report(9, ok, "; ".join(details))
