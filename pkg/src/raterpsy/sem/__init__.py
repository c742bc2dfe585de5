"""Confirmatory factor analysis by normal-theory maximum likelihood."""

from .chisq import chisq_cdf, chisq_sf, gammainc_lower, gammainc_upper
from .indices import (
    DiffTest,
    FitIndices,
    NestingError,
    cfi,
    chisq_diff_test,
    fit_indices,
    rmsea,
    srmr,
)
from .ml import (
    FitResult,
    Objective,
    SampleCovarianceError,
    SampleStats,
    SingularityError,
    baseline_fit,
    fit,
    fml,
    implied_moments,
    loglik,
    start_values,
)
from .model import (
    ModelSpec,
    ModelSpecError,
    ModelSyntaxError,
    parse_model,
    saturated_spec,
)
from .modindices import Candidate, ModIndex, default_candidates, modification_indices
from .table import (
    LEVELS,
    ConstraintError,
    Parameter,
    ParameterTable,
    build_parameter_table,
)

__all__ = [
    "LEVELS",
    "Candidate",
    "ConstraintError",
    "DiffTest",
    "FitIndices",
    "FitResult",
    "ModIndex",
    "ModelSpec",
    "ModelSpecError",
    "ModelSyntaxError",
    "NestingError",
    "Objective",
    "Parameter",
    "ParameterTable",
    "SampleCovarianceError",
    "SampleStats",
    "SingularityError",
    "baseline_fit",
    "build_parameter_table",
    "cfi",
    "chisq_cdf",
    "chisq_diff_test",
    "chisq_sf",
    "default_candidates",
    "fit",
    "fit_indices",
    "fml",
    "gammainc_lower",
    "gammainc_upper",
    "implied_moments",
    "loglik",
    "modification_indices",
    "parse_model",
    "rmsea",
    "saturated_spec",
    "srmr",
    "start_values",
]
