"""Translations between prediction representations.

A Named distribution converts deterministically to Bin or Quantile and
stochastically to Sample; a Sample converts to Bin or Quantile; any
probabilistic element yields a Point estimate. Coexisting elements for one
(unit, target) can be cross-checked for consistency on a common decile grid.

Stochastic conversion is reproducible by construction: uniforms come from
the PCG64 generator's raw 64-bit output (seeded, platform-independent),
mapped to open-interval doubles and pushed through the inverse CDF, so one
(distribution, n, seed) triple always yields the identical sample.

Empirical quantiles are type 1 (pure order statistics, no interpolation):
``q(p)`` is the ``ceil(p * n)``-th smallest value. Order statistics are
uniquely defined, so results are bit-identical across implementations.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .model import (
    DEFAULT_BIN_SUM_TOLERANCE,
    Bin,
    ElementKind,
    Named,
    NamedFamily,
    Point,
    PredictionElement,
    Quantile,
    Sample,
    Scalar,
    TargetDefinition,
    TargetType,
)

#: Quantile levels used by consistency checking.
CONSISTENCY_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))

DISCRETE_FAMILIES = frozenset({NamedFamily.POIS, NamedFamily.NEGBIN, NamedFamily.BINOM})


class ConversionError(ValueError):
    """A representation conversion could not be performed."""


class UncoveredMassError(ConversionError):
    """Categories leave more than the tolerated probability mass uncovered."""


class UncoveredSampleError(ConversionError):
    """A sample value falls in no bin."""


def distribution(named: Named):
    """The frozen scipy distribution behind a Named element."""
    family, p = named.family, named.params
    if family is NamedFamily.NORM:
        return stats.norm(loc=p[0], scale=p[1])
    if family is NamedFamily.LNORM:
        return stats.lognorm(s=p[1], scale=math.exp(p[0]))
    if family is NamedFamily.GAMMA:
        return stats.gamma(a=p[0], scale=1.0 / p[1])
    if family is NamedFamily.POIS:
        return stats.poisson(p[0])
    if family is NamedFamily.NEGBIN:
        return stats.nbinom(p[0], p[1])
    if family is NamedFamily.BINOM:
        return stats.binom(int(p[0]), p[1])
    raise ConversionError(f"unsupported family {family!r}")


def is_discrete_family(named: Named) -> bool:
    return named.family in DISCRETE_FAMILIES


def named_cdf(named: Named, x: float) -> float:
    """Cumulative probability P(X <= x) of a Named distribution."""
    return float(distribution(named).cdf(x))


def named_mean(named: Named) -> float:
    """Analytic mean of a Named distribution."""
    return float(distribution(named).mean())


def named_ppf(named: Named, level: float) -> Scalar:
    """Inverse CDF at ``level``; for discrete families, the smallest support
    value whose CDF reaches the level."""
    if not 0.0 < level < 1.0:
        raise ConversionError(f"level {level!r} outside the open interval (0, 1)")
    value = float(distribution(named).ppf(level))
    return int(value) if is_discrete_family(named) else value


def named_to_quantile(named: Named, levels: Sequence[float]) -> Quantile:
    """Quantile element of a Named distribution at the given levels."""
    levels = [float(lvl) for lvl in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConversionError("levels must be non-empty and strictly increasing")
    return Quantile(tuple((lvl, named_ppf(named, lvl)) for lvl in levels))


def _open_uniforms(n: int, seed: int) -> np.ndarray:
    # Raw PCG64 output >> 11 gives 53-bit integers; offsetting by 0.5 maps
    # them to dyadic midpoints strictly inside (0, 1).
    raw = np.random.PCG64(seed).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def named_to_sample(named: Named, n: int, seed: int) -> Sample:
    """Draw ``n`` reproducible samples from a Named distribution.

    Inverse-CDF sampling over a seeded deterministic uniform stream: the
    same (named, n, seed) yields the identical sample on every platform.
    """
    if n < 1:
        raise ConversionError("sample size must be >= 1")
    values = distribution(named).ppf(_open_uniforms(n, seed))
    if is_discrete_family(named):
        return Sample(tuple(int(v) for v in values))
    return Sample(tuple(float(v) for v in values))


def _interval_flag(categories: Sequence, interval: Optional[bool]) -> bool:
    if interval is not None:
        return interval
    return all(isinstance(c, float) for c in categories)


def named_to_bin(
    named: Named,
    categories: Sequence,
    upper: Optional[float] = None,
    tolerance: float = DEFAULT_BIN_SUM_TOLERANCE,
) -> Bin:
    """Deterministically bin a Named distribution over declared categories.

    Continuous families treat categories as left-inclusive interval edges
    (the final bin is closed at ``upper``, or unbounded); discrete families
    treat them as exact support values. The result is renormalized when the
    probability mass outside the categories is below ``tolerance``;
    otherwise :class:`UncoveredMassError` is raised.
    """
    cats = list(categories)
    if not cats:
        raise ConversionError("categories must be non-empty")
    dist = distribution(named)
    if is_discrete_family(named):
        probs = [float(dist.pmf(c)) for c in cats]
    else:
        if any(b <= a for a, b in zip(cats, cats[1:])):
            raise ConversionError("interval edges must be strictly increasing")
        cdf_at = [float(dist.cdf(c)) for c in cats]
        top = float(dist.cdf(upper)) if upper is not None else 1.0
        edges_hi = cdf_at[1:] + [top]
        probs = [max(hi - lo, 0.0) for lo, hi in zip(cdf_at, edges_hi)]
    covered = math.fsum(probs)
    if 1.0 - covered > tolerance:
        raise UncoveredMassError(
            f"categories leave {1.0 - covered:.6g} probability mass uncovered "
            f"(tolerance {tolerance:g})"
        )
    probs = [p / covered for p in probs]
    return Bin(tuple(zip(cats, probs)), tolerance=tolerance)


def _bin_lookup(categories: Sequence, interval: bool, upper):
    """Returns value -> bin index (or None) under the given basis."""
    if interval:
        cats = list(categories)

        def lookup(value):
            if value < cats[0]:
                return None
            idx = bisect_right(cats, value) - 1
            if idx == len(cats) - 1 and upper is not None and value > upper:
                return None
            return idx

        return lookup
    index = {c: i for i, c in enumerate(categories)}
    return index.get


def sample_to_bin(
    sample: Sample,
    categories: Sequence,
    interval: Optional[bool] = None,
    upper=None,
    tolerance: float = DEFAULT_BIN_SUM_TOLERANCE,
) -> Bin:
    """Bin an empirical sample: each bin's probability is its sample fraction.

    Counting is exact rational arithmetic, converted to float at the end.
    When ``interval`` is omitted it is inferred from the category values
    (float categories are interval edges, all others exact values).
    """
    lookup = _bin_lookup(categories, _interval_flag(categories, interval), upper)
    counts = [0] * len(categories)
    for value in sample.values:
        idx = lookup(value)
        if idx is None:
            raise UncoveredSampleError(f"sample value {value!r} falls in no bin")
        counts[idx] += 1
    n = len(sample.values)
    probs = [float(Fraction(c, n)) for c in counts]
    return Bin(tuple(zip(categories, probs)), tolerance=tolerance)


def sample_quantile(values: Sequence, level: float) -> Scalar:
    """Type-1 empirical quantile: the ceil(level * n)-th order statistic."""
    if not values:
        raise ConversionError("sample must be non-empty")
    if not 0.0 < level < 1.0:
        raise ConversionError(f"level {level!r} outside the open interval (0, 1)")
    ordered = sorted(values)
    # Fraction keeps ceil(level * n) exact for the given binary float level.
    k = math.ceil(Fraction(level) * len(ordered))
    return ordered[k - 1]


def sample_to_quantile(sample: Sample, levels: Sequence[float]) -> Quantile:
    """Quantile element read off the sample's order statistics (type 1)."""
    levels = [float(lvl) for lvl in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConversionError("levels must be non-empty and strictly increasing")
    ordered = sorted(sample.values)
    n = len(ordered)
    entries = []
    for lvl in levels:
        if not 0.0 < lvl < 1.0:
            raise ConversionError(f"level {lvl!r} outside the open interval (0, 1)")
        k = math.ceil(Fraction(lvl) * n)
        entries.append((lvl, ordered[k - 1]))
    return Quantile(tuple(entries))


def bin_quantile(bin_element: Bin, level: float) -> Scalar:
    """Representative value of the first bin whose cumulative probability
    reaches ``level`` (binary bins order false < true, complement implied)."""
    entries = bin_element.entries
    if Bin._is_single_true(entries):
        entries = ((False, 1.0 - entries[0][1]), (True, entries[0][1]))
    cum = 0.0
    for cat, prob in entries:
        cum += prob
        if cum >= level - 1e-12:
            return cat
    return entries[-1][0]


def to_point(element: PredictionElement, method: str = "median") -> Point:
    """Point estimate of a probabilistic element.

    ``median``: inverse CDF at 0.5 (Named), type-1 empirical median (Sample),
    first bin at cumulative probability 0.5 (Bin), the declared 0.5-level
    value (Quantile). ``mean``: analytic mean (Named), arithmetic mean
    (Sample), probability-weighted bin representatives (Bin); unavailable
    for Quantile.
    """
    if method not in ("median", "mean"):
        raise ConversionError(f"unknown point method {method!r}")
    if isinstance(element, Point):
        return element
    if method == "median":
        if isinstance(element, Named):
            return Point(named_ppf(element, 0.5))
        if isinstance(element, Sample):
            return Point(sample_quantile(element.values, 0.5))
        if isinstance(element, Bin):
            return Point(bin_quantile(element, 0.5))
        if isinstance(element, Quantile):
            value = element.value_at(0.5)
            if value is None:
                raise ConversionError("quantile element has no 0.5 level")
            return Point(value)
    else:
        if isinstance(element, Named):
            return Point(named_mean(element))
        if isinstance(element, Sample):
            return Point(_numeric_mean(element.values))
        if isinstance(element, Bin):
            if any(isinstance(c, (str, bool)) or not isinstance(c, (int, float))
                   for c in element.categories):
                raise ConversionError("mean is only defined for numeric bin categories")
            return Point(math.fsum(p * c for c, p in element.entries))
        if isinstance(element, Quantile):
            raise ConversionError("mean is unavailable for quantile elements")
    raise ConversionError(f"cannot derive a point from {type(element).__name__}")


def _numeric_mean(values) -> float:
    if any(isinstance(v, (str, bool)) or not isinstance(v, (int, float)) for v in values):
        raise ConversionError("mean is only defined for numeric samples")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class Discrepancy:
    """One disagreement between two coexisting prediction elements."""

    kind_a: str
    kind_b: str
    level: Optional[float]
    category: Optional[Scalar]
    value_a: Scalar
    value_b: Scalar

    def __str__(self):
        where = f"level {self.level}" if self.level is not None else f"category {self.category!r}"
        return (
            f"{self.kind_a} vs {self.kind_b} at {where}: "
            f"{self.value_a!r} != {self.value_b!r}"
        )


def _as_number(value) -> float:
    import datetime

    if isinstance(value, datetime.date):
        return float(value.toordinal())
    if isinstance(value, bool):
        return float(value)
    return float(value)


def _element_quantile(element: PredictionElement, level: float) -> Optional[Scalar]:
    if isinstance(element, Named):
        return named_ppf(element, level)
    if isinstance(element, Sample):
        return sample_quantile(element.values, level)
    if isinstance(element, Bin):
        return bin_quantile(element, level)
    if isinstance(element, Quantile):
        return element.value_at(level)
    if isinstance(element, Point):
        return element.value if abs(level - 0.5) < 1e-12 else None
    return None


def _category_probs(element: PredictionElement, categories) -> Optional[dict]:
    if isinstance(element, Bin):
        entries = element.entries
        if Bin._is_single_true(entries):
            entries = ((False, 1.0 - entries[0][1]), (True, entries[0][1]))
        return {c: p for c, p in entries}
    if isinstance(element, Sample):
        n = len(element.values)
        return {c: sum(1 for v in element.values if v == c) / n for c in categories}
    return None


def check_consistency(
    elements: Sequence[PredictionElement],
    tolerance: float,
    target: Optional[TargetDefinition] = None,
) -> list:
    """Cross-check coexisting elements for one (unit, target).

    Ordered targets are compared on the decile quantile grid (absolute
    tolerance; a Point joins at the median only). Nominal and binary targets
    are compared by per-category probability, and a Point must equal the
    other elements' median category. Returns the list of
    :class:`Discrepancy`; empty means consistent.
    """
    elements = list(elements)
    if len(elements) < 2:
        return []
    categorical = _is_categorical(elements, target)
    out: list = []
    for i in range(len(elements)):
        for j in range(i + 1, len(elements)):
            a, b = elements[i], elements[j]
            if categorical:
                out.extend(_compare_categorical(a, b, tolerance))
            else:
                out.extend(_compare_ordered(a, b, tolerance))
    return out


def _is_categorical(elements, target: Optional[TargetDefinition]) -> bool:
    if target is not None:
        return target.target_type in (TargetType.NOMINAL, TargetType.BINARY)
    for e in elements:
        values = ()
        if isinstance(e, Bin):
            values = e.categories
        elif isinstance(e, Sample):
            values = e.values
        elif isinstance(e, Point):
            values = (e.value,)
        if any(isinstance(v, (str, bool)) for v in values):
            return True
    return False


def _compare_ordered(a, b, tolerance) -> list:
    out = []
    for level in CONSISTENCY_GRID:
        qa = _element_quantile(a, level)
        qb = _element_quantile(b, level)
        if qa is None or qb is None:
            continue
        if abs(_as_number(qa) - _as_number(qb)) > tolerance:
            out.append(
                Discrepancy(
                    kind_a=a.kind.value,
                    kind_b=b.kind.value,
                    level=level,
                    category=None,
                    value_a=qa,
                    value_b=qb,
                )
            )
    return out


def _compare_categorical(a, b, tolerance: float) -> list:
    out = []
    if isinstance(a, Point) or isinstance(b, Point):
        point, other = (a, b) if isinstance(a, Point) else (b, a)
        if isinstance(other, Point):
            median: Optional[Scalar] = other.value
        elif isinstance(other, (Bin, Sample)):
            median = to_point(other, "median").value
        else:
            return out
        if point.value != median:
            out.append(
                Discrepancy(
                    kind_a=a.kind.value,
                    kind_b=b.kind.value,
                    level=None,
                    category=point.value,
                    value_a=point.value,
                    value_b=median,
                )
            )
        return out
    categories: list = []
    for e in (a, b):
        if isinstance(e, Bin):
            cats = list(e.categories)
            if Bin._is_single_true(e.entries):
                cats = [False, True]
        elif isinstance(e, Sample):
            cats = sorted(set(e.values), key=lambda v: (str(type(v)), str(v)))
        else:
            cats = []
        for c in cats:
            if c not in categories:
                categories.append(c)
    pa = _category_probs(a, categories)
    pb = _category_probs(b, categories)
    if pa is None or pb is None:
        return out
    for c in categories:
        da, db = pa.get(c, 0.0), pb.get(c, 0.0)
        if abs(da - db) > tolerance:
            out.append(
                Discrepancy(
                    kind_a=a.kind.value,
                    kind_b=b.kind.value,
                    level=None,
                    category=c,
                    value_a=da,
                    value_b=db,
                )
            )
    return out
