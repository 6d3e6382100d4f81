"""Why the double correction matters: a desk-scale Monte Carlo.

Runs the IV design twice -- correctly specified, then with a fixed violation
of the exclusion restriction -- and compares each standard error's mean with
the Monte Carlo dispersion of the estimator. Under misspecification only the
doubly corrected standard error stays on target; the conventional one
understates the true variability badly and does not recover with sample size.
"""

from gmmdc import IvLocal, StudyConfig, run_study

REPS = 3000

for fixed, label in ((False, "correct specification (alpha0 = 0)"),
                     (True, "fixed violation (alpha0 = 0.8, not shrinking)")):
    alpha0 = 0.0 if not fixed else 0.8
    cfg = StudyConfig(design=IvLocal(n=1000, alpha0=alpha0), replications=REPS,
                      estimators=("one", "two"), seed=12, fixed_misspec=fixed)
    summary = run_study(cfg, threads=2)
    print(f"=== {label}, n=1000, {REPS} replications ===")
    print(f"{'':<10}{'mean':>9}{'sd':>9}{'se_conv':>9}{'se_w':>9}{'se_dc':>9}")
    for est, b in summary.estimators.items():
        se_w = f"{b.mean_se_w:.4f}" if b.mean_se_w is not None else "-"
        print(f"{est:<10}{b.mean_theta:>9.4f}{b.sd_theta:>9.4f}"
              f"{b.mean_se_conv:>9.4f}{se_w:>9}{b.mean_se_dc:>9.4f}")
    two = summary.estimators["two"]
    gap = (two.sd_theta - two.mean_se_conv) / two.sd_theta
    print(f"two-step: conventional se misses the sd by {gap:.1%}; "
          f"dc se is off by {abs(two.mean_se_dc - two.sd_theta) / two.sd_theta:.1%}\n")

print("note: under the fixed violation the estimators center on pseudo-true")
print("values away from 1.0 and each estimator has its own target; the dc")
print("standard error tracks the sampling dispersion around that target.")
