"""Archive toolkit for probabilistic forecasts.

Structured storage of forecasts from many models, upload-time validation,
representation conversion, automatic proper scoring against truth data, and
programmatic query access — as a library, an embedded store, an HTTP
service, and a CLI.
"""

from .model import (
    Bin,
    ElementKind,
    Forecast,
    Model,
    ModelError,
    Named,
    NamedFamily,
    Point,
    PredictionElement,
    Project,
    Quantile,
    Sample,
    TargetDefinition,
    TargetType,
    TimeZero,
    Unit,
    element_kinds_for,
    named_families_for,
)
from .formats import (
    ForecastDocument,
    ForecastParseError,
    PredictionRecord,
    ProjectConfig,
    TruthTable,
    parse_forecast,
    parse_project_config,
    parse_truth_csv,
    serialize_forecast,
    serialize_project_config,
    template_config,
)
from .validation import RuleViolation, validate_forecast, validate_truth
from .convert import (
    check_consistency,
    named_cdf,
    named_to_bin,
    named_to_quantile,
    named_to_sample,
    sample_to_bin,
    sample_to_quantile,
    to_point,
)
from .scoring import (
    ScoreRecord,
    TruthRecord,
    applicable_scores,
    brier,
    crps,
    interval_score,
    log_score_bin,
    log_score_sample,
    pit,
    point_abs_error,
    point_error,
    score_project,
)
from .store import ForecastQuery, ForecastStore, StoredForecastKey

__version__ = "0.1.0"

__all__ = [
    "Bin",
    "ElementKind",
    "Forecast",
    "ForecastDocument",
    "ForecastParseError",
    "ForecastQuery",
    "ForecastStore",
    "Model",
    "ModelError",
    "Named",
    "NamedFamily",
    "Point",
    "PredictionElement",
    "PredictionRecord",
    "Project",
    "ProjectConfig",
    "Quantile",
    "RuleViolation",
    "Sample",
    "ScoreRecord",
    "StoredForecastKey",
    "TargetDefinition",
    "TargetType",
    "TimeZero",
    "TruthRecord",
    "TruthTable",
    "Unit",
    "applicable_scores",
    "brier",
    "check_consistency",
    "crps",
    "element_kinds_for",
    "interval_score",
    "log_score_bin",
    "log_score_sample",
    "named_cdf",
    "named_families_for",
    "named_to_bin",
    "named_to_quantile",
    "named_to_sample",
    "parse_forecast",
    "parse_project_config",
    "parse_truth_csv",
    "pit",
    "point_abs_error",
    "point_error",
    "sample_to_bin",
    "sample_to_quantile",
    "score_project",
    "serialize_forecast",
    "serialize_project_config",
    "template_config",
    "to_point",
    "validate_forecast",
    "validate_truth",
]
