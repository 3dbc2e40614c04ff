"""Proper scores and the score dispatch matrix.

Which scores apply to a forecast element depends on the (target type,
element kind) pair; :func:`applicable_scores` encodes that matrix and the
scoring driver never computes a score outside it.

Scores
------
``error`` / ``abs_error``
    Residual (observed - predicted) and absolute error of point forecasts;
    day counts for date targets.
``log_score``
    Natural log of the probability assigned to the bin containing the
    truth. Probabilities below 1e-9 are clamped to 1e-9 and flagged.
``pit``
    Probability integral transform: the predictive cumulative probability
    at the observed value (inclusive of the truth's bin for binned and
    discrete predictions).
``interval_score_<alpha>``
    For a central (1 - alpha) interval [l, u]:
    ``(u - l) + (2/alpha) * (l - y) * 1{y < l} + (2/alpha) * (y - u) * 1{y > u}``.
    One score per symmetric level pair present in the quantile element.
``crps``
    Continuous ranked probability score. Point forecasts: absolute error.
    Samples: ``mean|x_i - y| - (1/(2 n^2)) sum_ij |x_i - x_j|``. Bins: the
    binned CDF form ``sum_k (F_k - 1{y <= b_k})^2 w_k`` with inclusive
    cumulative ``F``, bin representative ``b_k`` (the category value), and
    width ``w_k`` (1 for discrete/date/binary). Named distributions are
    scored through a fixed-seed inverse-CDF sample of size 10^4.
``brier``
    Binary: ``(p_true - o)^2``. Multicategory: ``sum_k (p_k - o_k)^2``.
"""

from __future__ import annotations

import csv
import datetime
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Tuple

from .convert import UncoveredMassError, named_cdf, named_to_bin, named_to_sample
from .formats import (
    ForecastDocument,
    ProjectConfig,
    TruthRow,
    element_from_record,
)
from .model import (
    Bin,
    ElementKind,
    Named,
    Point,
    PredictionElement,
    Quantile,
    Sample,
    Scalar,
    TargetDefinition,
    TargetType,
    _ordered_key,
)

TruthRecord = TruthRow

ERROR = "error"
ABS_ERROR = "abs_error"
LOG_SCORE = "log_score"
PIT = "pit"
INTERVAL_SCORE = "interval_score"
CRPS = "crps"
BRIER = "brier"

ALL_SCORES = (ERROR, ABS_ERROR, LOG_SCORE, CRPS, BRIER, PIT, INTERVAL_SCORE)

#: Probabilities below this are clamped before taking logs.
PROB_CLAMP = 1e-9
#: Sample size and fixed seed for scoring Named elements via sampling.
NAMED_SCORE_SAMPLE_SIZE = 10_000
NAMED_SCORE_SEED = 424242

_POINT_SCORES = frozenset({ERROR, ABS_ERROR, CRPS})
_ORDERED = (TargetType.CONTINUOUS, TargetType.DISCRETE, TargetType.DATE)

#: (target type, element kind) -> applicable score ids.
SCORE_DISPATCH: Mapping[Tuple[TargetType, ElementKind], frozenset] = {}


def _dispatch():
    d = {}
    for tt in TargetType:
        for kind in ElementKind:
            d[(tt, kind)] = frozenset()
    for tt in (TargetType.CONTINUOUS, TargetType.DISCRETE):
        d[(tt, ElementKind.POINT)] = _POINT_SCORES
        d[(tt, ElementKind.BIN)] = frozenset({LOG_SCORE, CRPS, BRIER, PIT})
        d[(tt, ElementKind.NAMED)] = frozenset({LOG_SCORE, CRPS, PIT})
        d[(tt, ElementKind.SAMPLE)] = frozenset({LOG_SCORE, CRPS, PIT})
        d[(tt, ElementKind.QUANTILE)] = frozenset({INTERVAL_SCORE})
    d[(TargetType.NOMINAL, ElementKind.BIN)] = frozenset({LOG_SCORE, BRIER})
    d[(TargetType.NOMINAL, ElementKind.SAMPLE)] = frozenset({LOG_SCORE, BRIER})
    d[(TargetType.BINARY, ElementKind.POINT)] = _POINT_SCORES
    d[(TargetType.BINARY, ElementKind.BIN)] = frozenset({LOG_SCORE, CRPS, BRIER})
    d[(TargetType.BINARY, ElementKind.SAMPLE)] = frozenset({LOG_SCORE, CRPS, BRIER})
    d[(TargetType.DATE, ElementKind.POINT)] = _POINT_SCORES
    d[(TargetType.DATE, ElementKind.BIN)] = frozenset({LOG_SCORE, CRPS, BRIER, PIT})
    d[(TargetType.DATE, ElementKind.SAMPLE)] = frozenset({LOG_SCORE, CRPS, PIT})
    d[(TargetType.DATE, ElementKind.QUANTILE)] = frozenset({INTERVAL_SCORE})
    return d


SCORE_DISPATCH = _dispatch()

#: When several elements could feed the same score id, the most informative
#: representation wins.
ELEMENT_PRIORITY = (
    ElementKind.NAMED,
    ElementKind.SAMPLE,
    ElementKind.BIN,
    ElementKind.QUANTILE,
    ElementKind.POINT,
)


class ScoreError(ValueError):
    """A score was requested for a (target type, element kind) it does not apply to."""


def applicable_scores(target_type: TargetType, element_kind: ElementKind) -> frozenset:
    """Score ids available for the given (target type, element kind) pair."""
    return SCORE_DISPATCH[(TargetType(target_type), ElementKind(element_kind))]


@dataclass(frozen=True)
class ScoreRecord:
    """One computed score for one (model, timezero, unit, target, score id)."""

    model_id: str
    timezero: datetime.date
    unit: str
    target: str
    score_id: str
    value: Optional[float]
    flag: Optional[str] = None

    def __post_init__(self):
        if self.value is None:
            if not self.flag:
                raise ValueError("a score record without a value must carry a flag")
        elif not math.isfinite(self.value):
            raise ValueError("score value must be finite")

    def key(self) -> tuple:
        return (self.model_id, self.timezero, self.unit, self.target, self.score_id)


def _numeric(value: Scalar) -> float:
    if isinstance(value, datetime.date):
        return float(value.toordinal())
    if isinstance(value, bool):
        return float(value)
    return float(value)


def _require(score: str, target: TargetDefinition, kind: ElementKind):
    if score not in applicable_scores(target.target_type, kind):
        raise ScoreError(
            f"{score} does not apply to {kind.value} elements on "
            f"{target.target_type.value} targets"
        )


# --- point scores -------------------------------------------------------------


def point_error(point: Point, truth: Scalar, target: TargetDefinition) -> float:
    """Residual error observed - predicted (days for date targets)."""
    _require(ERROR, target, ElementKind.POINT)
    return _numeric(truth) - _numeric(point.value)


def point_abs_error(point: Point, truth: Scalar, target: TargetDefinition) -> float:
    _require(ABS_ERROR, target, ElementKind.POINT)
    return abs(_numeric(truth) - _numeric(point.value))


# --- bin machinery ------------------------------------------------------------


def _sorted_entries(bin_element: Bin) -> list:
    entries = bin_element.entries
    if Bin._is_single_true(entries):
        entries = ((False, 1.0 - entries[0][1]), (True, entries[0][1]))
    return sorted(entries, key=lambda e: _ordered_key(e[0]))


def _truth_bin_index(entries: list, truth: Scalar, target: TargetDefinition) -> Optional[int]:
    """Index into sorted bin entries of the bin containing the truth."""
    cats = [c for c, _ in entries]
    if target.target_type is TargetType.CONTINUOUS:
        if truth < cats[0]:
            return None
        idx = 0
        for i, c in enumerate(cats):
            if truth >= c:
                idx = i
            else:
                break
        if idx == len(cats) - 1 and target.range is not None and truth > target.range[1]:
            return None
        return idx
    for i, c in enumerate(cats):
        if c == truth:
            return i
    return None


def log_score_bin(
    bin_element: Bin, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """ln of the probability assigned to the truth's bin.

    Returns (value, flag); a truth outside every bin yields
    (None, "truth-out-of-range"), and probabilities below the clamp yield
    the clamped value flagged "zero-prob-clamped".
    """
    _require(LOG_SCORE, target, ElementKind.BIN)
    entries = _sorted_entries(bin_element)
    idx = _truth_bin_index(entries, truth, target)
    if idx is None:
        return None, "truth-out-of-range"
    return _clamped_log(entries[idx][1])


def _clamped_log(p: float) -> Tuple[float, Optional[str]]:
    if p < PROB_CLAMP:
        return math.log(PROB_CLAMP), "zero-prob-clamped"
    return math.log(p), None


def log_score_sample(
    sample: Sample, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """Approximate log score: the sample is binned, then scored as a bin.

    Nominal and binary targets bin by equality with the truth; ordered
    targets require declared categories as the binning basis.
    """
    _require(LOG_SCORE, target, ElementKind.SAMPLE)
    values = sample.values
    if target.target_type in (TargetType.NOMINAL, TargetType.BINARY):
        p = sum(1 for v in values if v == truth) / len(values)
        return _clamped_log(p)
    if target.categories is None:
        return None, "no-binning-basis"
    from .validation import bin_index

    truth_idx = bin_index(truth, target)
    if truth_idx is None:
        return None, "truth-out-of-range"
    p = sum(1 for v in values if bin_index(v, target) == truth_idx) / len(values)
    return _clamped_log(p)


def log_score_named(
    named: Named, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """Log score of a Named element via its deterministic bin conversion
    over the target's declared categories."""
    _require(LOG_SCORE, target, ElementKind.NAMED)
    if target.categories is None:
        return None, "no-binning-basis"
    upper = None
    if target.target_type is TargetType.CONTINUOUS and target.range is not None:
        upper = target.range[1]
    try:
        binned = named_to_bin(named, list(target.categories), upper=upper)
    except UncoveredMassError:
        return None, "uncovered-mass"
    return log_score_bin(binned, truth, target)


def pit(
    element: PredictionElement, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """Probability integral transform of the truth under the forecast.

    Bin: cumulative probability through and including the truth's bin.
    Sample: fraction of samples <= truth. Named: CDF at the truth.
    """
    _require(PIT, target, element.kind)
    if isinstance(element, Bin):
        entries = _sorted_entries(element)
        idx = _truth_bin_index(entries, truth, target)
        if idx is None:
            return None, "truth-out-of-range"
        return math.fsum(p for _, p in entries[: idx + 1]), None
    if isinstance(element, Sample):
        key = _ordered_key(truth)
        frac = sum(1 for v in element.values if _ordered_key(v) <= key) / len(element.values)
        return frac, None
    if isinstance(element, Named):
        return named_cdf(element, _numeric(truth)), None
    raise ScoreError(f"pit does not apply to {element.kind.value} elements")


def interval_alphas(element: Quantile, atol: float = 1e-9) -> list:
    """Alphas of every symmetric (alpha/2, 1 - alpha/2) level pair present."""
    levels = element.levels
    alphas = []
    for level in levels:
        if level >= 0.5:
            continue
        if any(abs(other - (1.0 - level)) <= atol for other in levels):
            alphas.append(2.0 * level)
    return alphas


def interval_score(
    element: Quantile, alpha: float, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """Interval score of the central (1 - alpha) interval.

    ``(u - l) + (2/alpha)(l - y) 1{y < l} + (2/alpha)(y - u) 1{y > u}`` with
    l, u the quantile values at levels alpha/2 and 1 - alpha/2. Date values
    are scored in day counts.
    """
    _require(INTERVAL_SCORE, target, ElementKind.QUANTILE)
    if not 0.0 < alpha < 1.0:
        raise ScoreError(f"alpha {alpha!r} outside (0, 1)")
    lower = element.value_at(alpha / 2.0)
    upper = element.value_at(1.0 - alpha / 2.0)
    if lower is None or upper is None:
        return None, "no-interval-pair"
    l, u, y = _numeric(lower), _numeric(upper), _numeric(truth)
    value = (u - l)
    if y < l:
        value += (2.0 / alpha) * (l - y)
    if y > u:
        value += (2.0 / alpha) * (y - u)
    return value, None


# --- CRPS ---------------------------------------------------------------------


def crps_sample_values(values: Sequence[float], truth: float) -> float:
    """Energy form of the sample CRPS: mean|x-y| - (1/(2 n^2)) sum|x_i - x_j|."""
    xs = sorted(values)
    n = len(xs)
    mean_abs = math.fsum(abs(x - truth) for x in xs) / n
    # sum over ordered pairs i<j of (x_(j) - x_(i)); each sorted x_k appears
    # with coefficient (2k - 1 - n).
    pair_sum = math.fsum((2 * k - 1 - n) * x for k, x in enumerate(xs, start=1))
    return mean_abs - pair_sum / (n * n)


def _bin_widths(entries: list, target: TargetDefinition) -> list:
    if target.target_type is not TargetType.CONTINUOUS:
        return [1.0] * len(entries)
    cats = [c for c, _ in entries]
    widths = [b - a for a, b in zip(cats, cats[1:])]
    if target.range is not None:
        widths.append(target.range[1] - cats[-1])
    elif widths:
        # No upper bound declared: give the final bin the mean declared width.
        widths.append(math.fsum(widths) / len(widths))
    else:
        widths.append(1.0)
    return widths


def crps(
    element: PredictionElement, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """CRPS of a point, sample, bin, or named element against the truth."""
    _require(CRPS, target, element.kind)
    y = _numeric(truth)
    if isinstance(element, Point):
        return abs(y - _numeric(element.value)), None
    if isinstance(element, Sample):
        return crps_sample_values([_numeric(v) for v in element.values], y), None
    if isinstance(element, Bin):
        entries = _sorted_entries(element)
        widths = _bin_widths(entries, target)
        cum = 0.0
        total = 0.0
        for (cat, prob), width in zip(entries, widths):
            cum += prob
            indicator = 1.0 if _ordered_key(truth) <= _ordered_key(cat) else 0.0
            total += (cum - indicator) ** 2 * width
        return total, None
    if isinstance(element, Named):
        sample = named_to_sample(element, NAMED_SCORE_SAMPLE_SIZE, NAMED_SCORE_SEED)
        return crps_sample_values([_numeric(v) for v in sample.values], y), None
    raise ScoreError(f"crps does not apply to {element.kind.value} elements")


# --- Brier ---------------------------------------------------------------------


def brier(
    element: PredictionElement, truth: Scalar, target: TargetDefinition
) -> Tuple[Optional[float], Optional[str]]:
    """Brier score: binary squared error or the multicategory form."""
    _require(BRIER, target, element.kind)
    if target.target_type is TargetType.BINARY:
        o = 1.0 if truth else 0.0
        if isinstance(element, Bin):
            p_true = element.probability_of(True) if _has_true(element) else 0.0
        else:
            p_true = sum(1 for v in element.values if v is True) / len(element.values)
        return (p_true - o) ** 2, None

    if isinstance(element, Sample):
        if target.categories is None:
            return None, "no-binning-basis"
        from .validation import bin_index

        truth_idx = bin_index(truth, target)
        if truth_idx is None:
            return None, "truth-out-of-range"
        n = len(element.values)
        indices = [bin_index(v, target) for v in element.values]
        total = 0.0
        for k in range(len(target.categories)):
            p_k = sum(1 for i in indices if i == k) / n
            o_k = 1.0 if k == truth_idx else 0.0
            total += (p_k - o_k) ** 2
        return total, None

    entries = _sorted_entries(element)
    idx = _truth_bin_index(entries, truth, target)
    if idx is None:
        return None, "truth-out-of-range"
    total = math.fsum(
        (prob - (1.0 if k == idx else 0.0)) ** 2 for k, (_, prob) in enumerate(entries)
    )
    return total, None


def _has_true(element: Bin) -> bool:
    return any(cat is True for cat, _ in element.entries)


# --- project-level driver -------------------------------------------------------


def _score_element(
    score: str,
    element: PredictionElement,
    truth: Scalar,
    target: TargetDefinition,
) -> list:
    """Concrete (score_id, value, flag) triples for one score family."""
    if score == ERROR:
        return [(ERROR, point_error(element, truth, target), None)]
    if score == ABS_ERROR:
        return [(ABS_ERROR, point_abs_error(element, truth, target), None)]
    if score == LOG_SCORE:
        if isinstance(element, Sample):
            value, flag = log_score_sample(element, truth, target)
        elif isinstance(element, Named):
            value, flag = log_score_named(element, truth, target)
        else:
            value, flag = log_score_bin(element, truth, target)
        return [(LOG_SCORE, value, flag)]
    if score == PIT:
        value, flag = pit(element, truth, target)
        return [(PIT, value, flag)]
    if score == CRPS:
        value, flag = crps(element, truth, target)
        return [(CRPS, value, flag)]
    if score == BRIER:
        value, flag = brier(element, truth, target)
        return [(BRIER, value, flag)]
    if score == INTERVAL_SCORE:
        out = []
        for alpha in interval_alphas(element):
            value, flag = interval_score(element, alpha, truth, target)
            out.append((interval_score_id(alpha), value, flag))
        return out
    raise ScoreError(f"unknown score {score!r}")


def interval_score_id(alpha: float) -> str:
    return f"{INTERVAL_SCORE}_{alpha!r}"


def _interval_ids(element: Quantile) -> list:
    return [interval_score_id(alpha) for alpha in interval_alphas(element)]


def score_project(
    project: ProjectConfig,
    truth: Iterable[TruthRecord],
    forecasts: Iterable[tuple],
    score_ids: Optional[Iterable[str]] = None,
    models: Optional[Iterable[str]] = None,
) -> list:
    """Score every forecast against the truth set.

    ``forecasts`` yields (model_id, timezero date, ForecastDocument) triples
    that already passed validation. For every forecast, (unit, target), and
    applicable score there is exactly one :class:`ScoreRecord`; when several
    elements could feed one score id the most informative element wins
    (named > sample > bin > quantile > point). Keys with no truth row yield
    records flagged ``truth-missing``. Scoring is deterministic.
    """
    targets = project.target_map()
    truth_by_key = {(row.timezero, row.unit, row.target): row.value for row in truth}
    wanted_scores = set(score_ids) if score_ids is not None else None
    wanted_models = set(models) if models is not None else None

    records: list = []
    for model_id, timezero, document in forecasts:
        if wanted_models is not None and model_id not in wanted_models:
            continue
        by_key: dict = {}
        for record in document.predictions:
            by_key.setdefault((record.unit, record.target), []).append(record)
        for (unit, target_name), recs in by_key.items():
            target = targets[target_name]
            elements = {
                ElementKind(r.kind): element_from_record(r, target, project.bin_sum_tolerance)
                for r in recs
            }
            chosen: dict = {}
            for kind in reversed(ELEMENT_PRIORITY):
                if kind not in elements:
                    continue
                for score in applicable_scores(target.target_type, kind):
                    if wanted_scores is not None and score not in wanted_scores:
                        continue
                    chosen[score] = elements[kind]
            truth_value = truth_by_key.get((timezero, unit, target_name))
            for score in sorted(chosen):
                element = chosen[score]
                if truth_value is None:
                    ids = (
                        _interval_ids(element)
                        if score == INTERVAL_SCORE
                        else [score]
                    )
                    for concrete in ids:
                        records.append(
                            ScoreRecord(
                                model_id=model_id,
                                timezero=timezero,
                                unit=unit,
                                target=target_name,
                                score_id=concrete,
                                value=None,
                                flag="truth-missing",
                            )
                        )
                    continue
                for concrete, value, flag in _score_element(
                    score, element, truth_value, target
                ):
                    records.append(
                        ScoreRecord(
                            model_id=model_id,
                            timezero=timezero,
                            unit=unit,
                            target=target_name,
                            score_id=concrete,
                            value=value,
                            flag=flag,
                        )
                    )
    return records


SCORE_CSV_HEADER = ("model", "timezero", "unit", "target", "score", "value", "flag")


def scores_to_csv(records: Iterable[ScoreRecord]) -> bytes:
    """Deterministic CSV export of score records."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_CSV_HEADER)
    for r in records:
        writer.writerow(
            [
                r.model_id,
                r.timezero.isoformat(),
                r.unit,
                r.target,
                r.score_id,
                "" if r.value is None else repr(r.value),
                r.flag or "",
            ]
        )
    return buf.getvalue().encode("utf-8")
