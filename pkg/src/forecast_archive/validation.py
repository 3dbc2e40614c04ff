"""Upload-time rule engine.

Every forecast is checked against its project definition before storage.
Validation never stops at the first failure: the complete violation list is
returned, and an empty list means the forecast is storable. Violations with
``error`` severity block storage; ``warning`` severity (truth checks) flags
but does not block.

Rule identifiers are stable across releases so that clients can match or
suppress specific rules; the full catalog is :data:`RULE_CATALOG`.
"""

from __future__ import annotations

import datetime
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Sequence

from .formats import ForecastDocument, PredictionRecord, ProjectConfig, TruthTable
from .model import (
    Named,
    NamedFamily,
    TargetDefinition,
    TargetType,
    ElementKind,
    element_kinds_for,
    named_families_for,
    value_matches_type,
)

ERROR = "error"
WARNING = "warning"

#: rule id -> (severity, description)
RULE_CATALOG = {
    "UNIT-UNKNOWN-001": (ERROR, "record references a unit not declared by the project"),
    "TARGET-UNKNOWN-001": (ERROR, "record references a target not declared by the project"),
    "PAYLOAD-MISSING-001": (ERROR, "record carries no prediction payload"),
    "DUP-RECORD-001": (ERROR, "more than one record for the same (unit, target, class)"),
    "ELEM-MATRIX-001": (ERROR, "element kind is not valid for the target's type"),
    "TYPE-MISMATCH-001": (ERROR, "value does not match the target's data type"),
    "RANGE-001": (ERROR, "value lies outside the target's declared range"),
    "CAT-MEMBER-001": (ERROR, "nominal value is not one of the target's declared categories"),
    "BIN-NO-CATS-001": (ERROR, "bin submitted for a target without declared categories"),
    "BIN-PROB-001": (ERROR, "bin probability outside [0, 1]"),
    "BIN-SUM-001": (ERROR, "bin probabilities do not sum to 1 within tolerance"),
    "BIN-CAT-UNKNOWN-001": (ERROR, "bin category not in the target's declared category set"),
    "BIN-CAT-DUP-001": (ERROR, "duplicate bin category"),
    "BINARY-BIN-CAT-001": (ERROR, "binary bin category other than true/false"),
    "SAMPLE-EMPTY-001": (ERROR, "sample carries no values"),
    "QUANTILE-LEVEL-001": (ERROR, "quantile levels not strictly increasing within (0, 1)"),
    "QUANTILE-MONOTONE-001": (ERROR, "quantile values decrease as the level increases"),
    "NAMED-FAMILY-001": (ERROR, "named family is not valid for the target's type"),
    "NAMED-PARAM-001": (ERROR, "named distribution parameter constraint violated"),
    "TRUTH-RANGE-001": (WARNING, "observed value lies outside the target's declared range"),
    "TRUTH-CAT-001": (WARNING, "observed value not covered by the target's categories"),
}


@dataclass(frozen=True)
class RuleViolation:
    """One violated validation rule, locatable to (unit, target, element kind)."""

    rule_id: str
    severity: str
    unit: Optional[str]
    target: Optional[str]
    kind: Optional[str]
    message: str

    def to_json(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity,
            "unit": self.unit,
            "target": self.target,
            "message": self.message,
        }


def has_errors(violations: Sequence[RuleViolation]) -> bool:
    return any(v.severity == ERROR for v in violations)


def bin_index(value, target: TargetDefinition) -> Optional[int]:
    """Index of the bin containing ``value`` under the target's categories.

    Continuous categories are left-inclusive lower edges; the final bin is
    closed at the range upper bound (unbounded when no range). All other
    target types use exact-value membership. Binary targets use the implicit
    (false, true) categories. Returns None when no bin contains the value.
    """
    if target.target_type is TargetType.BINARY:
        return int(bool(value))
    cats = target.categories
    if cats is None:
        return None
    if target.target_type is TargetType.CONTINUOUS:
        if value < cats[0]:
            return None
        idx = bisect_right(cats, value) - 1
        if idx == len(cats) - 1 and target.range is not None and value > target.range[1]:
            return None
        return idx
    for i, cat in enumerate(cats):
        if cat == value:
            return i
    return None


class _Collector:
    def __init__(self):
        self.violations: list = []

    def add(self, rule_id: str, unit, target, kind, message: str):
        severity = RULE_CATALOG[rule_id][0]
        self.violations.append(
            RuleViolation(
                rule_id=rule_id,
                severity=severity,
                unit=unit,
                target=target,
                kind=kind,
                message=message,
            )
        )


def validate_forecast(
    document: ForecastDocument, project: ProjectConfig
) -> list:
    """Check every prediction record against the project definition.

    Returns the complete list of :class:`RuleViolation`; an empty list means
    the forecast is storable. Validation is a pure function: identical inputs
    always yield identical violation lists.
    """
    out = _Collector()
    units = project.unit_map()
    targets = project.target_map()

    seen_keys = set()
    for record in document.predictions:
        key = (record.unit, record.target, record.kind)
        known_unit = record.unit in units
        known_target = record.target in targets
        if not known_unit:
            out.add("UNIT-UNKNOWN-001", record.unit, record.target, record.kind,
                    f"unknown unit {record.unit!r}")
        if not known_target:
            out.add("TARGET-UNKNOWN-001", record.unit, record.target, record.kind,
                    f"unknown target {record.target!r}")
        if not (known_unit and known_target):
            continue
        if key in seen_keys:
            out.add("DUP-RECORD-001", record.unit, record.target, record.kind,
                    f"duplicate record for {key}")
            continue
        seen_keys.add(key)

        target = targets[record.target]
        if record.prediction is None:
            out.add("PAYLOAD-MISSING-001", record.unit, record.target, record.kind,
                    "record has no prediction payload")
            continue
        kind = ElementKind(record.kind)
        if kind not in element_kinds_for(target.target_type):
            out.add(
                "ELEM-MATRIX-001", record.unit, record.target, record.kind,
                f"{record.kind} elements are not valid for {target.target_type.value} targets",
            )
            continue
        _check_element(record, target, project.bin_sum_tolerance, out)

    return out.violations


def _coerced(value, target: TargetDefinition):
    """Typed value, or None if it does not match the target's data type."""
    tt = target.target_type
    if tt is TargetType.DATE:
        if isinstance(value, str):
            try:
                return datetime.date.fromisoformat(value)
            except ValueError:
                return None
        return None
    if not value_matches_type(value, tt):
        return None
    return float(value) if tt is TargetType.CONTINUOUS else value


def _check_values(record, target, values, out: _Collector,
                  membership: bool = True) -> Optional[list]:
    """Data-type, range, and nominal category membership for scalar values.

    ``membership`` is disabled for bin categories, whose membership in the
    declared set is reported through the dedicated bin rule instead.
    """
    u, t, k = record.unit, record.target, record.kind
    coerced = []
    ok = True
    for v in values:
        cv = _coerced(v, target)
        if cv is None:
            out.add("TYPE-MISMATCH-001", u, t, k,
                    f"value {v!r} is not valid for a {target.target_type.value} target")
            ok = False
        else:
            coerced.append(cv)
    if not ok:
        return None
    out_of_range = [v for v in coerced if not target.in_range(v)]
    if out_of_range:
        lo, up = target.range
        out.add("RANGE-001", u, t, k,
                f"{len(out_of_range)} value(s) outside the declared range [{lo}, {up}]: "
                f"first {out_of_range[0]!r}")
    if (membership and target.target_type is TargetType.NOMINAL
            and target.categories is not None):
        bad = [v for v in coerced if v not in target.categories]
        if bad:
            out.add("CAT-MEMBER-001", u, t, k,
                    f"value(s) not among declared categories: first {bad[0]!r}")
    return coerced


def _check_element(record: PredictionRecord, target: TargetDefinition,
                   tolerance: float, out: _Collector):
    u, t, k = record.unit, record.target, record.kind
    payload = record.prediction

    if record.kind == "point":
        _check_values(record, target, [payload["value"]], out)

    elif record.kind == "named":
        family = NamedFamily(payload["family"])
        if family not in named_families_for(target.target_type):
            out.add("NAMED-FAMILY-001", u, t, k,
                    f"family {family.value!r} is not valid for "
                    f"{target.target_type.value} targets")
            return
        params = (payload["param1"],) + ((payload["param2"],) if "param2" in payload else ())
        try:
            Named(family, params)
        except ValueError as exc:
            out.add("NAMED-PARAM-001", u, t, k, str(exc))

    elif record.kind == "bin":
        _check_bin(record, target, tolerance, out)

    elif record.kind == "sample":
        values = payload["sample"]
        if not values:
            out.add("SAMPLE-EMPTY-001", u, t, k, "sample has no values")
            return
        _check_values(record, target, values, out)

    elif record.kind == "quantile":
        levels = payload["quantile"]
        if not levels or any(not 0.0 < lvl < 1.0 for lvl in levels) or any(
            b <= a for a, b in zip(levels, levels[1:])
        ):
            out.add("QUANTILE-LEVEL-001", u, t, k,
                    f"levels must be strictly increasing within (0, 1): {levels}")
        coerced = _check_values(record, target, payload["value"], out)
        if coerced is not None and any(b < a for a, b in zip(coerced, coerced[1:])):
            out.add("QUANTILE-MONOTONE-001", u, t, k,
                    "values must be non-decreasing as the level increases")


def _check_bin(record, target: TargetDefinition, tolerance: float, out: _Collector):
    u, t, k = record.unit, record.target, record.kind
    payload = record.prediction
    cats, probs = payload["cat"], payload["prob"]

    bad_probs = [p for p in probs if not 0.0 <= p <= 1.0]
    if bad_probs:
        out.add("BIN-PROB-001", u, t, k, f"probability outside [0, 1]: first {bad_probs[0]!r}")

    if target.target_type is TargetType.BINARY:
        if any(not isinstance(c, bool) for c in cats):
            out.add("BINARY-BIN-CAT-001", u, t, k,
                    "binary bin categories must be true/false")
            return
        if len(set(cats)) != len(cats):
            out.add("BIN-CAT-DUP-001", u, t, k, "duplicate bin category")
        single_true = len(cats) == 1 and cats[0] is True
        if not single_true and not bad_probs:
            total = math.fsum(probs)
            if abs(total - 1.0) > tolerance:
                out.add("BIN-SUM-001", u, t, k,
                        f"probabilities sum to {total:.6g}, not 1 (tolerance {tolerance:g})")
        return

    if target.categories is None:
        out.add("BIN-NO-CATS-001", u, t, k,
                f"target {t!r} declares no categories, so bin submissions are not accepted")
        return
    coerced = _check_values(record, target, cats, out, membership=False)
    if coerced is None:
        return
    unknown = [c for c in coerced if c not in target.categories]
    if unknown:
        out.add("BIN-CAT-UNKNOWN-001", u, t, k,
                f"category not in the declared set: first {unknown[0]!r}")
    if len(set(coerced)) != len(coerced):
        out.add("BIN-CAT-DUP-001", u, t, k, "duplicate bin category")
    if not cats:
        out.add("BIN-SUM-001", u, t, k, "empty bin: probabilities sum to 0, not 1")
        return
    if not bad_probs:
        total = math.fsum(probs)
        if abs(total - 1.0) > tolerance:
            out.add("BIN-SUM-001", u, t, k,
                    f"probabilities sum to {total:.6g}, not 1 (tolerance {tolerance:g})")


def validate_truth(truth: TruthTable, project: ProjectConfig) -> list:
    """Range and category checks for observed values.

    All truth violations are warnings: the rows are stored but flagged.
    Type mismatches never reach this point (truth parsing coerces values).
    """
    out = _Collector()
    targets = project.target_map()
    for row in truth.rows:
        target = targets.get(row.target)
        if target is None:
            continue
        if not target.in_range(row.value):
            lo, up = target.range
            out.add("TRUTH-RANGE-001", row.unit, row.target, None,
                    f"observed {row.value!r} at {row.timezero.isoformat()} outside "
                    f"range [{lo}, {up}]")
        elif target.categories is not None and bin_index(row.value, target) is None:
            out.add("TRUTH-CAT-001", row.unit, row.target, None,
                    f"observed {row.value!r} at {row.timezero.isoformat()} not covered "
                    "by the declared categories")
    return out.violations
