"""One IV dataset, three estimators, three standard errors.

Simulates a cross-sectional IV regression with four instruments and a mild
local violation of the exclusion restriction, then fits the one-step (2SLS),
two-step, and iterated GMM estimators and prints the conventional,
Windmeijer-corrected, and doubly corrected standard errors side by side.
"""

import numpy as np

from gmmdc import (
    FitPlan,
    ReplicationStreams,
    build_iv_system,
    dgp_iv,
    fit,
    j_test,
    t_test,
    variance_report,
)

n = 400
y, X, Z = dgp_iv(n, alpha0=0.6, streams=ReplicationStreams(seed=7, replication=0))
system = build_iv_system(y, X, Z)
print(f"simulated IV data: n={n}, k={system.k} regressor, q={system.q} instruments")
print(f"true coefficient 1.0, exclusion violated locally (0.6 / sqrt(n))\n")

print(f"{'estimator':<12}{'estimate':>10}{'se_conv':>10}{'se_w':>10}{'se_dc':>10}")
for kind in ("one-step", "two-step", "iterated"):
    result = fit(system, FitPlan(kind))
    rep = variance_report(system, result)
    se_w = f"{rep.se_w[0]:.4f}" if rep.se_w is not None else "-"
    print(f"{kind:<12}{result.theta[0]:>10.4f}{rep.se_conv[0]:>10.4f}"
          f"{se_w:>10}{rep.se_dc[0]:>10.4f}")

two = fit(system, FitPlan.two_step())
rep = variance_report(system, two)
test = t_test(two, rep, "dc", coef=0, null_value=1.0)
print(f"\ntwo-step t test of beta = 1 (dc se): t = {test.statistic:.3f}, "
      f"p = {test.p_value:.3f}, CI [{test.ci_lower:.3f}, {test.ci_upper:.3f}]")
jt = j_test(system, two)
print(f"overidentification: J = {jt.statistic:.3f} on {jt.df} df, p = {jt.p_value:.3f}")

print("\nthe correction matrix driving the Windmeijer adjustment:")
print(np.array2string(rep.D_hat, precision=4))
print("its magnitude shrinks like 1/sqrt(n) under correct specification,")
print("so the corrected and conventional intervals converge in large samples.")
