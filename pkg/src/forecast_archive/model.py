"""Domain types for the probabilistic forecast data model.

A project declares units, targets, and time-zeros. Models submit forecasts,
one per (model, time-zero) slot. Each forecast carries predictions for
(unit, target) pairs, and each prediction is a set of prediction elements:
Point, Named, Bin, Sample, or Quantile.

All types are immutable after construction and validate their intrinsic
invariants in the constructor; invariants that depend on a project
definition (category membership, ranges, the element-kind validity matrix)
are enforced by :mod:`forecast_archive.validation`.
"""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

Scalar = Union[float, int, str, bool, datetime.date]

#: Default tolerance on |sum(bin probabilities) - 1|.
DEFAULT_BIN_SUM_TOLERANCE = 1e-3


class ModelError(ValueError):
    """A domain type was constructed with a violated invariant."""


class TargetType(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    NOMINAL = "nominal"
    BINARY = "binary"
    DATE = "date"

    @property
    def is_ordered(self) -> bool:
        """Whether values of this type carry a meaningful total order."""
        return self in (TargetType.CONTINUOUS, TargetType.DISCRETE, TargetType.DATE)


class ElementKind(str, enum.Enum):
    POINT = "point"
    NAMED = "named"
    BIN = "bin"
    SAMPLE = "sample"
    QUANTILE = "quantile"


#: Canonical element-kind order used for deterministic exports: the single
#: scalar first, then distribution representations by increasing verbosity.
KIND_ORDER = (
    ElementKind.POINT,
    ElementKind.NAMED,
    ElementKind.BIN,
    ElementKind.SAMPLE,
    ElementKind.QUANTILE,
)


class NamedFamily(str, enum.Enum):
    NORM = "norm"
    LNORM = "lnorm"
    GAMMA = "gamma"
    POIS = "pois"
    NEGBIN = "negbin"
    BINOM = "binom"


#: Element kinds accepted for each target type.
VALID_ELEMENT_KINDS: Mapping[TargetType, frozenset] = {
    TargetType.CONTINUOUS: frozenset(ElementKind),
    TargetType.DISCRETE: frozenset(ElementKind),
    TargetType.NOMINAL: frozenset({ElementKind.POINT, ElementKind.BIN, ElementKind.SAMPLE}),
    TargetType.BINARY: frozenset({ElementKind.POINT, ElementKind.BIN, ElementKind.SAMPLE}),
    TargetType.DATE: frozenset(
        {ElementKind.POINT, ElementKind.BIN, ElementKind.SAMPLE, ElementKind.QUANTILE}
    ),
}

#: Distribution families accepted for each target type. Continuous targets
#: take the common positive/real families; discrete targets take count
#: distributions; no other target type accepts a Named element.
VALID_NAMED_FAMILIES: Mapping[TargetType, frozenset] = {
    TargetType.CONTINUOUS: frozenset({NamedFamily.NORM, NamedFamily.LNORM, NamedFamily.GAMMA}),
    TargetType.DISCRETE: frozenset({NamedFamily.POIS, NamedFamily.NEGBIN, NamedFamily.BINOM}),
    TargetType.NOMINAL: frozenset(),
    TargetType.BINARY: frozenset(),
    TargetType.DATE: frozenset(),
}


def element_kinds_for(target_type: TargetType) -> frozenset:
    """Return the set of element kinds valid for ``target_type``."""
    return VALID_ELEMENT_KINDS[TargetType(target_type)]


def named_families_for(target_type: TargetType) -> frozenset:
    """Return the set of Named distribution families valid for ``target_type``."""
    return VALID_NAMED_FAMILIES[TargetType(target_type)]


def value_matches_type(value: Scalar, target_type: TargetType) -> bool:
    """Check a value against the target type's data type.

    continuous -> float (int accepted), discrete -> int, nominal -> text,
    binary -> bool, date -> calendar date. ``bool`` is never accepted where
    a number is expected.
    """
    tt = TargetType(target_type)
    if tt is TargetType.CONTINUOUS:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if tt is TargetType.DISCRETE:
        return isinstance(value, int) and not isinstance(value, bool)
    if tt is TargetType.NOMINAL:
        return isinstance(value, str)
    if tt is TargetType.BINARY:
        return isinstance(value, bool)
    return isinstance(value, datetime.date)


def coerce_value(value: Scalar, target_type: TargetType) -> Scalar:
    """Coerce a wire-level scalar into the target's data type.

    Accepts ISO ``YYYY-MM-DD`` strings for date targets and integers for
    continuous targets; everything else must already match. Raises
    :class:`ModelError` on mismatch.
    """
    tt = TargetType(target_type)
    if tt is TargetType.DATE and isinstance(value, str):
        try:
            return datetime.date.fromisoformat(value)
        except ValueError:
            raise ModelError(f"not an ISO YYYY-MM-DD date: {value!r}") from None
    if not value_matches_type(value, tt):
        raise ModelError(f"value {value!r} does not match {tt.value} data type")
    if tt is TargetType.CONTINUOUS:
        return float(value)
    return value


def wire_value(value: Scalar) -> Union[float, int, str, bool]:
    """Encode a typed scalar for JSON/CSV transport (dates as ISO strings)."""
    if isinstance(value, datetime.date):
        return value.isoformat()
    return value


def _ordered_key(value: Scalar):
    """Sort key usable across the scalar types of one target."""
    if isinstance(value, bool):
        return int(value)
    return value


@dataclass(frozen=True)
class Unit:
    """An organizational or geographic entity forecasts apply to."""

    code: str
    name: str = ""

    def __post_init__(self):
        if not self.code:
            raise ModelError("unit code must be non-empty")


@dataclass(frozen=True)
class TimeZero:
    """A pre-specified forecast slot, identified by its date."""

    date: datetime.date
    data_version_date: Optional[datetime.date] = None

    def __post_init__(self):
        if not isinstance(self.date, datetime.date):
            raise ModelError("timezero date must be a calendar date")
        if self.data_version_date is not None and not isinstance(
            self.data_version_date, datetime.date
        ):
            raise ModelError("data_version_date must be a calendar date")


@dataclass(frozen=True)
class TargetDefinition:
    """A named forecastable quantity.

    ``range`` (continuous/discrete/date only) bounds submitted and observed
    values. ``categories`` declare the binning basis: for continuous targets
    they are left-inclusive bin lower edges (bin k covers
    ``[cat_k, cat_{k+1})``, the final bin ``[cat_K, range upper]`` or
    unbounded); for discrete, nominal, and date targets they are exact values
    and bin membership is equality.
    """

    name: str
    target_type: TargetType
    description: str = ""
    range: Optional[tuple] = None
    categories: Optional[tuple] = None
    is_step_ahead: bool = False
    step_unit: Optional[str] = None
    step_count: Optional[int] = None

    def __post_init__(self):
        if not self.name:
            raise ModelError("target name must be non-empty")
        tt = TargetType(self.target_type)
        object.__setattr__(self, "target_type", tt)

        if self.range is not None:
            if tt not in (TargetType.CONTINUOUS, TargetType.DISCRETE, TargetType.DATE):
                raise ModelError(f"range is not allowed for {tt.value} targets")
            if len(self.range) != 2:
                raise ModelError("range must be an ordered (lower, upper) pair")
            lower, upper = (coerce_value(v, tt) for v in self.range)
            if not lower < upper:
                raise ModelError(f"range lower {lower!r} must be < upper {upper!r}")
            object.__setattr__(self, "range", (lower, upper))

        if self.categories is not None:
            if tt is TargetType.BINARY:
                raise ModelError("binary targets use implicit true/false categories")
            cats = tuple(coerce_value(c, tt) for c in self.categories)
            if not cats:
                raise ModelError("categories must be non-empty when given")
            if tt is TargetType.NOMINAL:
                if len(set(cats)) != len(cats):
                    raise ModelError("nominal categories must be distinct")
            else:
                if any(b <= a for a, b in zip(cats, cats[1:])):
                    raise ModelError(f"{tt.value} categories must be strictly increasing")
            if self.range is not None:
                lower, upper = self.range
                if any(c < lower or c > upper for c in cats):
                    raise ModelError("every category must lie within the declared range")
            object.__setattr__(self, "categories", cats)

        if self.is_step_ahead:
            if self.step_count is None:
                raise ModelError("step-ahead targets require step_count")
            if not isinstance(self.step_count, int) or isinstance(self.step_count, bool):
                raise ModelError("step_count must be an integer")
            if self.step_count < 0:
                raise ModelError("step_count must be >= 0")
        elif self.step_count is not None or self.step_unit is not None:
            raise ModelError("step_unit/step_count only apply to step-ahead targets")

    @property
    def data_type(self) -> TargetType:
        return self.target_type

    def in_range(self, value: Scalar) -> bool:
        """Whether ``value`` lies within the declared range (true if no range)."""
        if self.range is None:
            return True
        lower, upper = self.range
        return lower <= value <= upper


@dataclass(frozen=True)
class Point:
    """A single predicted value."""

    value: Scalar
    kind = ElementKind.POINT

    def __post_init__(self):
        if isinstance(self.value, float) and not math.isfinite(self.value):
            raise ModelError("point value must be finite")


_FAMILY_PARAM_NAMES = {
    NamedFamily.NORM: ("mean", "sd"),
    NamedFamily.LNORM: ("mu", "sigma"),
    NamedFamily.GAMMA: ("shape", "rate"),
    NamedFamily.POIS: ("lambda",),
    NamedFamily.NEGBIN: ("size", "prob"),
    NamedFamily.BINOM: ("n", "prob"),
}


@dataclass(frozen=True)
class Named:
    """A theoretical distribution given by family and parameters."""

    family: NamedFamily
    params: tuple
    kind = ElementKind.NAMED

    def __post_init__(self):
        family = NamedFamily(self.family)
        object.__setattr__(self, "family", family)
        expected = len(_FAMILY_PARAM_NAMES[family])
        params = tuple(self.params)
        if len(params) != expected:
            raise ModelError(
                f"{family.value} takes {expected} parameter(s), got {len(params)}"
            )
        for p in params:
            if isinstance(p, bool) or not isinstance(p, (int, float)) or not math.isfinite(p):
                raise ModelError(f"{family.value} parameters must be finite numbers")

        if family is NamedFamily.NORM:
            if params[1] <= 0:
                raise ModelError("norm sd must be > 0")
        elif family is NamedFamily.LNORM:
            if params[1] <= 0:
                raise ModelError("lnorm sigma must be > 0")
        elif family is NamedFamily.GAMMA:
            if params[0] <= 0 or params[1] <= 0:
                raise ModelError("gamma shape and rate must be > 0")
        elif family is NamedFamily.POIS:
            if params[0] <= 0:
                raise ModelError("pois lambda must be > 0")
        elif family is NamedFamily.NEGBIN:
            if params[0] <= 0:
                raise ModelError("negbin size must be > 0")
            if not 0 < params[1] <= 1:
                raise ModelError("negbin prob must be in (0, 1]")
        elif family is NamedFamily.BINOM:
            if params[0] != int(params[0]) or params[0] < 1:
                raise ModelError("binom n must be an integer >= 1")
            if not 0 <= params[1] <= 1:
                raise ModelError("binom prob must be in [0, 1]")
        params = (float(params[0]),) + tuple(float(p) for p in params[1:])
        object.__setattr__(self, "params", params)

    @property
    def param1(self) -> float:
        return self.params[0]

    @property
    def param2(self) -> Optional[float]:
        return self.params[1] if len(self.params) > 1 else None


@dataclass(frozen=True)
class Bin:
    """An empirical distribution over declared categories.

    ``entries`` is an ordered sequence of (category, probability) pairs.
    Probabilities must sum to 1 within ``tolerance``; the single exception is
    a binary prediction carrying only the ``True`` category, whose complement
    probability is implied.
    """

    entries: tuple
    tolerance: float = field(default=DEFAULT_BIN_SUM_TOLERANCE, compare=False, repr=False)
    kind = ElementKind.BIN

    def __post_init__(self):
        entries = tuple((cat, float(prob)) for cat, prob in self.entries)
        if not entries:
            raise ModelError("bin must have at least one entry")
        for cat, prob in entries:
            if not math.isfinite(prob) or not 0.0 <= prob <= 1.0:
                raise ModelError(f"bin probability {prob!r} outside [0, 1]")
        cats = [cat for cat, _ in entries]
        if len(set(cats)) != len(cats):
            raise ModelError("bin categories must be distinct")
        if not self._is_single_true(entries):
            total = math.fsum(prob for _, prob in entries)
            if abs(total - 1.0) > self.tolerance:
                raise ModelError(f"bin probabilities sum to {total}, not 1")
        object.__setattr__(self, "entries", entries)

    @staticmethod
    def _is_single_true(entries) -> bool:
        return len(entries) == 1 and entries[0][0] is True

    @property
    def categories(self) -> tuple:
        return tuple(cat for cat, _ in self.entries)

    @property
    def probabilities(self) -> tuple:
        return tuple(prob for _, prob in self.entries)

    def probability_of(self, category: Scalar) -> float:
        """Probability assigned to ``category`` (handles the implied binary complement)."""
        for cat, prob in self.entries:
            if cat == category and type(cat) is type(category):
                return prob
        if self._is_single_true(self.entries) and category is False:
            return 1.0 - self.entries[0][1]
        raise KeyError(category)


@dataclass(frozen=True)
class Sample:
    """Draws from a predictive distribution; insertion order is significant."""

    values: tuple
    kind = ElementKind.SAMPLE

    def __post_init__(self):
        values = tuple(self.values)
        if not values:
            raise ModelError("sample must be non-empty")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Quantile:
    """A distribution encoded by (level, value) pairs.

    Levels are strictly increasing within the open interval (0, 1) — the
    endpoints are the distribution infimum/supremum and are ill-defined for
    unbounded targets. Values must be non-decreasing with level.
    """

    entries: tuple
    kind = ElementKind.QUANTILE

    def __post_init__(self):
        entries = tuple((float(level), value) for level, value in self.entries)
        if not entries:
            raise ModelError("quantile element must have at least one entry")
        levels = [level for level, _ in entries]
        if any(not 0.0 < level < 1.0 for level in levels):
            raise ModelError("quantile levels must lie in the open interval (0, 1)")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ModelError("quantile levels must be strictly increasing")
        values = [_ordered_key(v) for _, v in entries]
        try:
            decreasing = any(b < a for a, b in zip(values, values[1:]))
        except TypeError:
            raise ModelError("quantile values must be mutually comparable") from None
        if decreasing:
            raise ModelError("quantile values must be non-decreasing in level")
        object.__setattr__(self, "entries", entries)

    @property
    def levels(self) -> tuple:
        return tuple(level for level, _ in self.entries)

    @property
    def values(self) -> tuple:
        return tuple(value for _, value in self.entries)

    def value_at(self, level: float, atol: float = 1e-9) -> Optional[Scalar]:
        for lvl, value in self.entries:
            if abs(lvl - level) <= atol:
                return value
        return None


PredictionElement = Union[Point, Named, Bin, Sample, Quantile]


@dataclass(frozen=True)
class Forecast:
    """All predictions from one model for one time-zero.

    ``issued_at`` is assigned by the store at registration; submitters can
    never set it. ``predictions`` maps (unit code, target name) to the
    elements submitted for that pair, at most one per element kind.
    """

    model_id: str
    timezero: datetime.date
    issued_at: datetime.datetime
    predictions: Mapping[tuple, tuple]
    source: str = ""

    def __post_init__(self):
        if not isinstance(self.timezero, datetime.date):
            raise ModelError("timezero must be a calendar date")
        if not isinstance(self.issued_at, datetime.datetime) or self.issued_at.tzinfo is None:
            raise ModelError("issued_at must be a timezone-aware timestamp")
        predictions = {}
        for key, elements in dict(self.predictions).items():
            unit, target = key
            elements = tuple(elements)
            kinds = [e.kind for e in elements]
            if len(set(kinds)) != len(kinds):
                raise ModelError(
                    f"({unit}, {target}) carries more than one element of the same kind"
                )
            predictions[(unit, target)] = elements
        object.__setattr__(self, "predictions", predictions)

    def elements_for(self, unit: str, target: str) -> tuple:
        return self.predictions.get((unit, target), ())


@dataclass(frozen=True)
class Model:
    """A forecasting model registered within a project."""

    abbreviation: str
    name: str = ""
    team: str = ""
    description: str = ""
    owners: tuple = ()

    def __post_init__(self):
        if not self.abbreviation:
            raise ModelError("model abbreviation must be non-empty")


@dataclass(frozen=True)
class Project:
    """A forecasting exercise: units, targets, and time-zero slots."""

    name: str
    description: str = ""
    visibility: str = "public"
    owners: tuple = ()
    units: tuple = ()
    targets: tuple = ()
    timezeros: tuple = ()

    def __post_init__(self):
        if not self.name:
            raise ModelError("project name must be non-empty")
        if self.visibility not in ("public", "private"):
            raise ModelError("visibility must be 'public' or 'private'")
