"""Delete-or-merge regressors: model selection for linear models and GLMs
that deletes continuous variables and merges levels of factors."""

from .constraints import (
    Delete,
    FeasibleModel,
    Merge,
    RegularConstraintSystem,
    constrained_fit,
    constraint_matrix,
    constraints_to_model,
    expand_coefficients,
    merge,
    reduced_design,
    regularize,
)
from .core import (
    DendrogramTrace,
    MergeStep,
    NestedPath,
    SelectionResult,
    SquaredStatistics,
    assemble_path,
    cluster_factor,
    dmr,
    gic_select,
    rss_path,
    t_statistics,
)
from .errors import (
    DegenerateConstraints,
    DMRError,
    InputError,
    InvalidConstraint,
    NumericalError,
    RankDeficient,
    SeparationWarning,
    TooFewRows,
    UnknownLevel,
    ZeroRSS,
    ZeroVariance,
)
from .evaluation import (
    ExperimentSpec,
    difference_rates,
    elementary_rates,
    generate_experiment,
    run_monte_carlo,
    star_rates,
)
from .glm import GlmFit, dmr_glm, irls_fit, wald_statistics
from .model_matrix import (
    ColumnSpec,
    DesignLayout,
    DesignMatrix,
    FullModelFit,
    build_design_matrix,
    fit_full_model,
    response_vector,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
