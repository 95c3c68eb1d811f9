"""vclab: a variance-components modeling laboratory.

Classical ANOVA decomposition with method-of-moments estimates, Bayesian
estimation of additive random-effects models under bounded-uniform and
Dirichlet relative-variance priors (plus point-mass model mixing), and
posterior-predictive tests of zero variance components with an
experiment harness for calibration, power, and prior-sensitivity
studies.
"""

__version__ = "0.1.0"

from .anova import (
    AnovaRow,
    AnovaTable,
    MomEstimates,
    anova_table,
    expected_mean_squares,
    mom_estimates,
    one_way_dataset,
    sums_of_squares,
)
from .design import (
    RESIDUAL,
    BalanceCheck,
    Dataset,
    FactorDecl,
    FactorLayout,
    Observation,
    Source,
    build_layout,
    is_balanced,
    membership,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DesignError,
    EnumerationCapError,
    IngestError,
    SamplerError,
    SingularModelError,
    StatisticUndefinedError,
    StepSizeError,
    UnsupportedDesignError,
    VclabError,
)
from .lab import (
    CalibrationResult,
    DemoResult,
    NestedCounts,
    PowerTable,
    StudyConfig,
    SweepResult,
    calibration_study,
    generate_nested_demo,
    power_study,
    sensitivity_sweep,
    simulate_one_way,
    simulate_two_way,
)
from .model import (
    DirichletRelative,
    IndependentUniform,
    IntegrationConfig,
    ModelMixing,
    PriorSpec,
    SubmodelPosterior,
    SubmodelRow,
    VarianceVector,
    marginal_log_likelihood,
    prior_log_density,
    relative_components,
    resolve_prior,
    sample_prior_variances,
    submodel_posterior,
)
from .ppc import (
    PpcReport,
    ReplicateSet,
    StatisticEvaluator,
    constrained_fit,
    ppp_value,
    replicate,
    run_ppc,
    statistic,
)
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    SamplerDiagnostics,
    diagnostics,
    finite_pop_summaries,
    fit,
    sign_probability,
)
from .cli import RunConfig, ingest_csv, run

__all__ = [name for name in dir() if not name.startswith("_")]
