"""Simulation designs and a seeded, parallel replication harness.

Three data-generating processes are provided: a cross-sectional IV model
whose exclusion restriction is violated locally (scaled by 1/sqrt(n)) or at a
fixed magnitude; a dynamic panel AR(1) with a random coefficient tied to the
individual effect; and a dynamic panel whose estimated equation omits a lag.
Every random variable block of every replication draws from its own
counter-based stream keyed by (seed, replication, block), so studies are
reproducible independent of draw order and scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import stats as spstats

from ._batch import BatchGmm
from .errors import GmmError
from .estimate import FitPlan
from .inference import mr_bootstrap
from .linmoment import (
    LinearMomentSystem,
    PanelDataset,
    build_ab_system,
    build_iv_system,
)

#: Replications evaluated per vectorized batch; fixed so that results do not
#: depend on the worker count.
CHUNK_SIZE = 64

#: Stream-domain tag for deriving per-replication bootstrap seeds.
_BOOT_SEED_BLOCK = 7919

_ESTIMATOR_PLANS = {
    "one": FitPlan.one_step,
    "two": FitPlan.two_step,
    "iter": FitPlan.iterated,
}


@dataclass(frozen=True)
class ReplicationStreams:
    """Counter-based random streams for one replication."""

    seed: int
    replication: int

    def generator(self, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence((int(self.seed), int(self.replication), int(block)))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class IvLocal:
    """Cross-sectional IV with four instruments and a local exclusion violation."""

    n: int
    alpha0: float

    label = "iv"
    true_value = 1.0


@dataclass(frozen=True)
class PanelRandomCoef:
    """Dynamic panel AR(1) whose autoregressive coefficient varies by individual."""

    N: int
    T: int
    alpha0: float

    label = "panel-rc"
    true_value = 0.5


@dataclass(frozen=True)
class PanelLagMiss:
    """Dynamic panel with a predetermined regressor and an omitted-lag violation."""

    N: int
    T: int
    alpha0: float

    label = "panel-lag"
    true_value = 1.0


Design = Union[IvLocal, PanelRandomCoef, PanelLagMiss]


def dgp_iv(n: int, alpha0: float, streams: ReplicationStreams,
           fixed: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw one IV sample (y, X, Z).

    Four standard normal instruments; the first stage has R^2 = 0.2
    (coefficient 0.25 on each instrument); the error mixes the endogenous
    shock with a conditionally heteroskedastic one and carries an exclusion
    violation of size alpha0/sqrt(n) (or alpha0 when ``fixed``) on the
    alternating instrument combination.
    """
    if n < 10:
        raise ValueError("need n >= 10")
    z = streams.generator(0).standard_normal((n, 4))
    u = streams.generator(1).standard_normal(n)
    v = z[:, 0] * streams.generator(2).standard_normal(n)
    x = 0.25 * z.sum(axis=1) + u
    scale = alpha0 if fixed else alpha0 / math.sqrt(n)
    e = scale * (z[:, 0] - z[:, 1] + z[:, 2] - z[:, 3]) + 0.5 * u + math.sqrt(0.75) * v
    y = x * IvLocal.true_value + e
    return y, x[:, None], z


def dgp_panel_rc(N: int, T: int, alpha0: float, streams: ReplicationStreams) -> PanelDataset:
    """Draw one random-coefficient AR(1) panel.

    rho_i = Phi(alpha0 * eta_i) so that alpha0 = 0 gives rho_i = 0.5 for
    everyone. A pre-sample value is drawn around the individual mean
    eta_i / (1 - rho_i) with innovation variance 1 / (1 - rho_i^2) and
    advanced one transition before the first retained period; the first
    retained observation therefore deviates from the individual mean with
    variance rho^2 / (1 - rho^2) + 0.25.
    """
    if T < 3:
        raise ValueError("need T >= 3")
    eta = streams.generator(0).standard_normal(N)
    rho = spstats.norm.cdf(alpha0 * eta)
    u1 = streams.generator(1).standard_normal(N) / np.sqrt(1.0 - rho**2)
    nu = 0.5 * streams.generator(2).standard_normal((N, T))
    y = np.empty((N, T))
    prev = eta / (1.0 - rho) + u1
    for t in range(T):
        y[:, t] = rho * prev + eta + nu[:, t]
        prev = y[:, t]
    return PanelDataset(y=y)


def dgp_panel_lag(N: int, T: int, alpha0: float, streams: ReplicationStreams,
                  burn_in: int = 50) -> PanelDataset:
    """Draw one panel from the omitted-lag design.

    The outcome loads on x_it and alpha0 * x_{i,t-1}; the estimated model
    omits the lag, so alpha0 != 0 misspecifies the moment conditions. Errors
    are centered chi-square scaled by an individual factor delta_i in
    [0.5, 1.5] and a time profile tau_t = 0.5 + 0.1 (t - 1) over the kept
    sample; ``burn_in`` periods with tau = 0.5 precede it.
    """
    if T < 2:
        raise ValueError("need T >= 2")
    total = burn_in + T
    delta = streams.generator(0).uniform(0.5, 1.5, N)
    eta = streams.generator(1).standard_normal(N)
    eps = streams.generator(2).standard_normal((N, total))
    omega = streams.generator(3).chisquare(1, (N, total)) - 1.0
    tau = np.full(total, 0.5)
    tau[burn_in:] = 0.5 + 0.1 * np.arange(T)
    v = delta[:, None] * tau[None, :] * omega
    x = np.empty((N, total))
    x[:, 0] = eta / 0.5 + streams.generator(4).standard_normal(N) / math.sqrt(0.75)
    for t in range(1, total):
        x[:, t] = 0.5 * x[:, t - 1] + eta + 0.5 * v[:, t - 1] + eps[:, t]
    y = (PanelLagMiss.true_value * x[:, burn_in:] + alpha0 * x[:, burn_in - 1:-1]
         + eta[:, None] + v[:, burn_in:])
    return PanelDataset(y=y, x=x[:, burn_in:])


def draw_system(design: Design, streams: ReplicationStreams,
                fixed_misspec: bool = False) -> LinearMomentSystem:
    """Draw one replication of ``design`` and build its moment system."""
    if isinstance(design, IvLocal):
        y, X, Z = dgp_iv(design.n, design.alpha0, streams, fixed=fixed_misspec)
        return build_iv_system(y, X, Z)
    if fixed_misspec:
        raise ValueError("fixed_misspec applies to the IV design only")
    if isinstance(design, PanelRandomCoef):
        return build_ab_system(dgp_panel_rc(design.N, design.T, design.alpha0, streams),
                               mode="ar1")
    if isinstance(design, PanelLagMiss):
        return build_ab_system(dgp_panel_lag(design.N, design.T, design.alpha0, streams),
                               mode="predetermined")
    raise TypeError(f"unknown design {design!r}")


@dataclass(frozen=True)
class StudyConfig:
    """Parameters of one Monte Carlo study."""

    design: Design
    replications: int
    estimators: Tuple[str, ...] = ("one", "two", "iter")
    seed: int = 0
    bootstrap_B: Optional[int] = None
    bootstrap_estimators: Optional[Tuple[str, ...]] = None
    fixed_misspec: bool = False
    centered: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        for est in self.estimators:
            if est not in _ESTIMATOR_PLANS:
                raise ValueError(f"unknown estimator {est!r}")
        if self.bootstrap_B is not None and self.bootstrap_B < 99:
            raise ValueError("bootstrap_B must be at least 99")
        if self.bootstrap_estimators is not None:
            for est in self.bootstrap_estimators:
                if est not in self.estimators:
                    raise ValueError(f"bootstrap estimator {est!r} not in estimators")

    def plan(self, estimator: str) -> FitPlan:
        base = _ESTIMATOR_PLANS[estimator]()
        if self.centered:
            return FitPlan(base.kind, base.w0, True, base.tol, base.max_iter)
        return base

    def wants_bootstrap(self, estimator: str) -> bool:
        if self.bootstrap_B is None:
            return False
        enabled = self.bootstrap_estimators or self.estimators
        return estimator in enabled


@dataclass(frozen=True)
class EstimatorSummary:
    """Aggregates for one estimator across replications."""

    mean_theta: float
    sd_theta: float
    mean_se_conv: float
    mean_se_dc: float
    reject_conv: float
    reject_dc: float
    reject_j: float
    failures: int
    mean_se_w: Optional[float] = None
    reject_w: Optional[float] = None
    reject_boot: Optional[float] = None
    bootstrap_failures: int = 0
    sd_degenerate: bool = False


@dataclass(frozen=True)
class StudySummary:
    """Aggregated study output: one block per estimator."""

    config: StudyConfig
    estimators: Dict[str, EstimatorSummary]
    failure_warning: bool = field(default=False)


def _chunk_records(cfg: StudyConfig, lo: int, hi: int) -> Dict[str, Dict[str, np.ndarray]]:
    """Evaluate replications lo..hi-1 and return per-estimator record arrays."""
    reps = range(lo, hi)
    systems = [draw_system(cfg.design, ReplicationStreams(cfg.seed, r), cfg.fixed_misspec)
               for r in reps]
    batch = BatchGmm.from_stack(systems)
    truth = cfg.design.true_value
    z_crit = float(spstats.norm.ppf(0.975))
    df = batch.q - batch.k
    j_crit = float(spstats.chi2.ppf(0.95, df)) if df > 0 else np.inf

    out: Dict[str, Dict[str, np.ndarray]] = {}
    for est in cfg.estimators:
        plan = cfg.plan(est)
        res = batch.run(plan, compute_j=df > 0)
        rec: Dict[str, np.ndarray] = {}
        rec["ok"] = res.ok
        rec["theta"] = res.theta[:, 0]
        rec["se_conv"] = res.se_conv[:, 0]
        rec["se_dc"] = res.se_dc[:, 0]
        rec["se_w"] = res.se_w[:, 0] if res.se_w is not None else np.full(len(systems), np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            rec["rej_conv"] = np.abs(rec["theta"] - truth) > z_crit * rec["se_conv"]
            rec["rej_dc"] = np.abs(rec["theta"] - truth) > z_crit * rec["se_dc"]
            rec["rej_w"] = np.abs(rec["theta"] - truth) > z_crit * rec["se_w"]
        rec["rej_j"] = (res.j_stat > j_crit) if res.j_stat is not None \
            else np.zeros(len(systems), dtype=bool)

        boot = np.full(len(systems), np.nan)
        if cfg.wants_bootstrap(est):
            for i, r in enumerate(reps):
                if not res.ok[i]:
                    continue
                boot_seed = int(np.random.SeedSequence(
                    (cfg.seed, r, _BOOT_SEED_BLOCK)).generate_state(1)[0])
                try:
                    bres = mr_bootstrap(systems[i], plan, coef=0, B=cfg.bootstrap_B,
                                        seed=boot_seed, null_value=truth)
                    boot[i] = float(bres.reject_5pct)
                except GmmError:
                    pass
        rec["boot"] = boot
        out[est] = rec
    return out


def run_study(cfg: StudyConfig, threads: Optional[int] = None,
              progress=None) -> StudySummary:
    """Run a Monte Carlo study and aggregate it into a summary.

    ``threads`` > 1 distributes fixed-size replication chunks over a process
    pool; chunk boundaries and per-replication streams are independent of the
    worker count, so the summary is a pure function of ``cfg``. Replications
    that fail numerically are excluded from the aggregates and counted.
    """
    R = cfg.replications
    bounds = [(lo, min(lo + CHUNK_SIZE, R)) for lo in range(0, R, CHUNK_SIZE)]
    fields = ["ok", "theta", "se_conv", "se_dc", "se_w",
              "rej_conv", "rej_dc", "rej_w", "rej_j", "boot"]
    store = {est: {f: np.empty(R) for f in fields} for est in cfg.estimators}

    def place(lo: int, hi: int, records):
        for est, rec in records.items():
            for f in fields:
                store[est][f][lo:hi] = rec[f]

    done = 0
    if threads is None or threads <= 1:
        for lo, hi in bounds:
            place(lo, hi, _chunk_records(cfg, lo, hi))
            done += hi - lo
            if progress:
                progress(done, R)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_chunk_records, cfg, lo, hi): (lo, hi)
                       for lo, hi in bounds}
            for fut in as_completed(futures):
                lo, hi = futures[fut]
                place(lo, hi, fut.result())
                done += hi - lo
                if progress:
                    progress(done, R)

    summaries: Dict[str, EstimatorSummary] = {}
    worst_failure_rate = 0.0
    for est in cfg.estimators:
        rec = store[est]
        ok = rec["ok"].astype(bool)
        n_ok = int(ok.sum())
        failures = R - n_ok
        worst_failure_rate = max(worst_failure_rate, failures / R)
        if n_ok == 0:
            raise GmmError(f"all replications failed for estimator {est!r}")
        theta = rec["theta"][ok]
        sd_degenerate = n_ok < 2
        boot_vals = rec["boot"][ok]
        boot_ok = np.isfinite(boot_vals)
        one_step = est == "one"
        summaries[est] = EstimatorSummary(
            mean_theta=float(theta.mean()),
            sd_theta=0.0 if sd_degenerate else float(theta.std(ddof=1)),
            mean_se_conv=float(rec["se_conv"][ok].mean()),
            mean_se_dc=float(rec["se_dc"][ok].mean()),
            reject_conv=float(rec["rej_conv"][ok].mean()),
            reject_dc=float(rec["rej_dc"][ok].mean()),
            reject_j=float(rec["rej_j"][ok].mean()),
            failures=failures,
            mean_se_w=None if one_step else float(rec["se_w"][ok].mean()),
            reject_w=None if one_step else float(rec["rej_w"][ok].mean()),
            reject_boot=float(boot_vals[boot_ok].mean())
            if cfg.wants_bootstrap(est) and boot_ok.any() else None,
            bootstrap_failures=int((~boot_ok).sum()) if cfg.wants_bootstrap(est) else 0,
            sd_degenerate=sd_degenerate,
        )
    return StudySummary(
        config=cfg,
        estimators=summaries,
        failure_warning=worst_failure_rate > 1e-3,
    )
