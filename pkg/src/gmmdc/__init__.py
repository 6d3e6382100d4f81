"""Linear GMM estimation with doubly corrected, misspecification-robust
variance estimators, bootstrap inference, and a Monte Carlo harness."""

from .errors import (
    DegenerateVarianceError,
    GmmError,
    IllConditionedCorrectionError,
    JNotDefinedError,
    SingularNormalMatrixError,
    SingularWeightError,
)
from .estimate import FitPlan, FitStep, GmmFit, fit, solve_weighted
from .expansion import (
    ExpansionTerms,
    ExpansionTruth,
    neumann_inverse,
    onestep_expansion,
    twostep_expansion,
)
from .inference import (
    BootstrapResult,
    TestResult,
    critical_value,
    j_test,
    mr_bootstrap,
    t_test,
)
from .linmoment import (
    LinearMomentSystem,
    MomentStats,
    PanelDataset,
    WeightKind,
    WeightSpec,
    build_ab_system,
    build_iv_system,
    differencing_weight,
    moment_stats,
    omega_derivative,
)
from .montecarlo import (
    EstimatorSummary,
    IvLocal,
    PanelLagMiss,
    PanelRandomCoef,
    ReplicationStreams,
    StudyConfig,
    StudySummary,
    dgp_iv,
    dgp_panel_lag,
    dgp_panel_rc,
    draw_system,
    run_study,
)
from .variance import VarianceReport, d_hat, m_contributions, variance_report

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "DegenerateVarianceError",
    "EstimatorSummary",
    "ExpansionTerms",
    "ExpansionTruth",
    "FitPlan",
    "FitStep",
    "GmmError",
    "GmmFit",
    "IllConditionedCorrectionError",
    "IvLocal",
    "JNotDefinedError",
    "LinearMomentSystem",
    "MomentStats",
    "PanelDataset",
    "PanelLagMiss",
    "PanelRandomCoef",
    "ReplicationStreams",
    "SingularNormalMatrixError",
    "SingularWeightError",
    "StudyConfig",
    "StudySummary",
    "TestResult",
    "VarianceReport",
    "WeightKind",
    "WeightSpec",
    "build_ab_system",
    "build_iv_system",
    "critical_value",
    "d_hat",
    "dgp_iv",
    "dgp_panel_lag",
    "dgp_panel_rc",
    "differencing_weight",
    "draw_system",
    "fit",
    "j_test",
    "m_contributions",
    "moment_stats",
    "mr_bootstrap",
    "neumann_inverse",
    "omega_derivative",
    "onestep_expansion",
    "run_study",
    "solve_weighted",
    "t_test",
    "twostep_expansion",
    "variance_report",
]
