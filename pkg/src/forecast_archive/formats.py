"""Wire formats: forecast JSON, truth CSV, and project configuration JSON.

Parsing is strict. Unknown keys are rejected, payload shapes must match the
record's class exactly, and no type inference is performed on CSV values —
types always come from the project configuration. Serialization is
deterministic: fixed key order and shortest round-trip float formatting, so
repeated serialization of one document is byte-identical.

Forecast document shape::

    {"predictions": [
        {"unit": "US", "target": "wk1", "class": "point",
         "prediction": {"value": 55}},
        ...
    ]}

Payloads by class: ``point`` -> ``{"value": v}``; ``named`` ->
``{"family": f, "param1": x[, "param2": y]}``; ``bin`` ->
``{"cat": [...], "prob": [...]}``; ``sample`` -> ``{"sample": [...]}``;
``quantile`` -> ``{"quantile": [...], "value": [...]}``. Dates travel as ISO
``YYYY-MM-DD`` strings. A ``null`` prediction parses but is rejected by
validation.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .model import (
    DEFAULT_BIN_SUM_TOLERANCE,
    Bin,
    ElementKind,
    KIND_ORDER,
    Named,
    NamedFamily,
    Point,
    PredictionElement,
    Quantile,
    Sample,
    Scalar,
    TargetDefinition,
    TargetType,
    TimeZero,
    Unit,
    coerce_value,
    wire_value,
)

#: Upload guard against pathological documents.
MAX_DOCUMENT_BYTES = 256 * 2**20

TRUTH_HEADER = ("timezero", "unit", "target", "value")

_KIND_NAMES = tuple(k.value for k in ElementKind)
_FAMILY_NAMES = tuple(f.value for f in NamedFamily)


@dataclass(frozen=True)
class ParseIssue:
    """One machine-readable parse diagnostic."""

    code: str
    location: str
    message: str

    def __str__(self):
        return f"{self.code} at {self.location}: {self.message}"

    def to_json(self) -> dict:
        return {"code": self.code, "location": self.location, "message": self.message}


class ParseError(ValueError):
    """Input could not be parsed; carries the full diagnostic list."""

    def __init__(self, issues: Sequence[ParseIssue]):
        self.issues = tuple(issues)
        summary = "; ".join(str(i) for i in self.issues[:5])
        if len(self.issues) > 5:
            summary += f"; ... ({len(self.issues)} issues)"
        super().__init__(summary)


class ForecastParseError(ParseError):
    pass


class TruthParseError(ParseError):
    pass


class ConfigParseError(ParseError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    """One (unit, target, class) record of a forecast document."""

    unit: str
    target: str
    kind: str
    prediction: Optional[Mapping]

    def payload_values(self) -> tuple:
        """All scalar values carried by the payload (categories, samples, ...)."""
        if self.prediction is None:
            return ()
        if self.kind == "point":
            return (self.prediction["value"],)
        if self.kind == "bin":
            return tuple(self.prediction["cat"])
        if self.kind == "sample":
            return tuple(self.prediction["sample"])
        if self.kind == "quantile":
            return tuple(self.prediction["value"])
        return ()


@dataclass(frozen=True)
class ForecastDocument:
    """Parsed forecast upload: an ordered list of prediction records."""

    predictions: tuple

    def records_for(self, unit: str, target: str) -> tuple:
        return tuple(
            r for r in self.predictions if r.unit == unit and r.target == target
        )


@dataclass(frozen=True)
class TruthRow:
    timezero: datetime.date
    unit: str
    target: str
    value: Scalar


@dataclass(frozen=True)
class TruthTable:
    """Typed truth rows plus warnings for skipped (unknown-reference) rows."""

    rows: tuple
    warnings: tuple = ()


@dataclass(frozen=True)
class ProjectConfig:
    """Fully validated project definition."""

    name: str
    description: str = ""
    visibility: str = "public"
    units: tuple = ()
    targets: tuple = ()
    timezeros: tuple = ()
    bin_sum_tolerance: float = DEFAULT_BIN_SUM_TOLERANCE

    def unit_map(self) -> dict:
        return {u.code: u for u in self.units}

    def target_map(self) -> dict:
        return {t.name: t for t in self.targets}

    def timezero_dates(self) -> tuple:
        return tuple(tz.date for tz in self.timezeros)


def _is_scalar(value) -> bool:
    return isinstance(value, (str, bool)) or (
        isinstance(value, (int, float)) and math.isfinite(value)
    )


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


class _Issues:
    def __init__(self):
        self.items: list = []

    def add(self, code: str, location: str, message: str):
        self.items.append(ParseIssue(code, location, message))

    def raise_if_any(self, exc_type):
        if self.items:
            raise exc_type(self.items)


def _reject_unknown_keys(obj: Mapping, allowed: Iterable[str], loc: str, issues: _Issues):
    unknown = sorted(set(obj) - set(allowed))
    for key in unknown:
        issues.add("UNKNOWN-KEY", f"{loc}.{key}", f"unknown key {key!r}")


def _scalar_list(payload, key, loc, issues, numbers_only=False) -> Optional[list]:
    values = payload.get(key)
    if not isinstance(values, list):
        issues.add("PAYLOAD-SHAPE", f"{loc}.{key}", f"{key!r} must be an array")
        return None
    ok = True
    for i, v in enumerate(values):
        if numbers_only and not _is_number(v):
            issues.add("VALUE-TYPE", f"{loc}.{key}[{i}]", "expected a finite number")
            ok = False
        elif not numbers_only and not _is_scalar(v):
            issues.add("VALUE-TYPE", f"{loc}.{key}[{i}]", "expected a scalar value")
            ok = False
    return values if ok else None


def _parse_payload(kind: str, payload, loc: str, issues: _Issues) -> Optional[Mapping]:
    if payload is None:
        return None
    if not isinstance(payload, dict):
        issues.add("PAYLOAD-SHAPE", loc, "prediction must be an object or null")
        return None

    before = len(issues.items)
    if kind == "point":
        _reject_unknown_keys(payload, ("value",), loc, issues)
        if "value" not in payload:
            issues.add("KEY-MISSING", f"{loc}.value", "point payload requires 'value'")
        elif not _is_scalar(payload.get("value")):
            issues.add("VALUE-TYPE", f"{loc}.value", "expected a scalar value")
    elif kind == "named":
        _reject_unknown_keys(payload, ("family", "param1", "param2"), loc, issues)
        family = payload.get("family")
        if family not in _FAMILY_NAMES:
            issues.add(
                "FAMILY-UNKNOWN",
                f"{loc}.family",
                f"family must be one of {', '.join(_FAMILY_NAMES)}",
            )
        if "param1" not in payload:
            issues.add("KEY-MISSING", f"{loc}.param1", "named payload requires 'param1'")
        elif not _is_number(payload.get("param1")):
            issues.add("VALUE-TYPE", f"{loc}.param1", "expected a finite number")
        if "param2" in payload and not _is_number(payload.get("param2")):
            issues.add("VALUE-TYPE", f"{loc}.param2", "expected a finite number")
    elif kind == "bin":
        _reject_unknown_keys(payload, ("cat", "prob"), loc, issues)
        cats = _scalar_list(payload, "cat", loc, issues)
        probs = _scalar_list(payload, "prob", loc, issues, numbers_only=True)
        if cats is not None and probs is not None and len(cats) != len(probs):
            issues.add(
                "PAYLOAD-SHAPE", loc, f"'cat' ({len(cats)}) and 'prob' ({len(probs)}) lengths differ"
            )
    elif kind == "sample":
        _reject_unknown_keys(payload, ("sample",), loc, issues)
        _scalar_list(payload, "sample", loc, issues)
    elif kind == "quantile":
        _reject_unknown_keys(payload, ("quantile", "value"), loc, issues)
        levels = _scalar_list(payload, "quantile", loc, issues, numbers_only=True)
        values = _scalar_list(payload, "value", loc, issues)
        if levels is not None and values is not None and len(levels) != len(values):
            issues.add(
                "PAYLOAD-SHAPE",
                loc,
                f"'quantile' ({len(levels)}) and 'value' ({len(values)}) lengths differ",
            )
    return payload if len(issues.items) == before else None


def parse_forecast(data: bytes) -> ForecastDocument:
    """Parse forecast JSON bytes into a :class:`ForecastDocument`.

    Raises :class:`ForecastParseError` carrying every shape violation found;
    the error list has machine-readable codes and JSON-path locations.
    """
    issues = _Issues()
    if len(data) > MAX_DOCUMENT_BYTES:
        issues.add("DOC-TOO-LARGE", "$", f"document exceeds {MAX_DOCUMENT_BYTES} bytes")
        issues.raise_if_any(ForecastParseError)
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        issues.add("JSON-MALFORMED", "$", str(exc))
        issues.raise_if_any(ForecastParseError)
    return parse_forecast_json(doc)


def parse_forecast_json(doc) -> ForecastDocument:
    """Like :func:`parse_forecast`, for already-decoded JSON data."""
    issues = _Issues()
    if not isinstance(doc, dict):
        issues.add("DOC-SHAPE", "$", "document root must be an object")
        issues.raise_if_any(ForecastParseError)
    _reject_unknown_keys(doc, ("predictions",), "$", issues)
    records_raw = doc.get("predictions")
    if not isinstance(records_raw, list):
        issues.add("DOC-SHAPE", "$.predictions", "'predictions' must be an array")
        issues.raise_if_any(ForecastParseError)

    records = []
    for i, raw in enumerate(records_raw):
        loc = f"$.predictions[{i}]"
        if not isinstance(raw, dict):
            issues.add("DOC-SHAPE", loc, "prediction record must be an object")
            continue
        _reject_unknown_keys(raw, ("unit", "target", "class", "prediction"), loc, issues)
        missing = [k for k in ("unit", "target", "class", "prediction") if k not in raw]
        for key in missing:
            issues.add("KEY-MISSING", f"{loc}.{key}", f"record requires {key!r}")
        if missing:
            continue
        unit, target, kind = raw["unit"], raw["target"], raw["class"]
        if not isinstance(unit, str) or not unit:
            issues.add("VALUE-TYPE", f"{loc}.unit", "unit must be a non-empty string")
            continue
        if not isinstance(target, str) or not target:
            issues.add("VALUE-TYPE", f"{loc}.target", "target must be a non-empty string")
            continue
        if kind not in _KIND_NAMES:
            issues.add(
                "CLASS-UNKNOWN", f"{loc}.class", f"class must be one of {', '.join(_KIND_NAMES)}"
            )
            continue
        payload = _parse_payload(kind, raw["prediction"], f"{loc}.prediction", issues)
        if payload is None and raw["prediction"] is not None:
            continue
        records.append(PredictionRecord(unit=unit, target=target, kind=kind, prediction=payload))

    issues.raise_if_any(ForecastParseError)
    return ForecastDocument(predictions=tuple(records))


def _canonical_payload(record: PredictionRecord) -> Optional[dict]:
    payload = record.prediction
    if payload is None:
        return None
    if record.kind == "point":
        return {"value": wire_value(payload["value"])}
    if record.kind == "named":
        out = {"family": payload["family"], "param1": payload["param1"]}
        if "param2" in payload:
            out["param2"] = payload["param2"]
        return out
    if record.kind == "bin":
        return {
            "cat": [wire_value(c) for c in payload["cat"]],
            "prob": list(payload["prob"]),
        }
    if record.kind == "sample":
        return {"sample": [wire_value(v) for v in payload["sample"]]}
    return {
        "quantile": list(payload["quantile"]),
        "value": [wire_value(v) for v in payload["value"]],
    }


def serialize_forecast(document: ForecastDocument) -> bytes:
    """Serialize a document to canonical UTF-8 JSON bytes.

    ``parse_forecast(serialize_forecast(d)) == d`` for every valid document,
    preserving sample order, and two serializations of equal documents are
    byte-identical.
    """
    out = {
        "predictions": [
            {
                "unit": r.unit,
                "target": r.target,
                "class": r.kind,
                "prediction": _canonical_payload(r),
            }
            for r in document.predictions
        ]
    }
    return json.dumps(out, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def document_from_elements(predictions: Mapping, order_keys: bool = True) -> ForecastDocument:
    """Build a wire document from typed prediction elements.

    ``predictions`` maps (unit code, target name) to a sequence of elements.
    Records are emitted in deterministic order: by (unit, target) when
    ``order_keys``, elements in canonical kind order.
    """
    keys = sorted(predictions) if order_keys else list(predictions)
    kind_rank = {k: i for i, k in enumerate(KIND_ORDER)}
    records = []
    for key in keys:
        unit, target = key
        for element in sorted(predictions[key], key=lambda e: kind_rank[e.kind]):
            records.append(
                PredictionRecord(
                    unit=unit,
                    target=target,
                    kind=element.kind.value,
                    prediction=_payload_from_element(element),
                )
            )
    return ForecastDocument(predictions=tuple(records))


def _payload_from_element(element: PredictionElement) -> dict:
    if isinstance(element, Point):
        return {"value": wire_value(element.value)}
    if isinstance(element, Named):
        payload = {"family": element.family.value, "param1": element.param1}
        if element.param2 is not None:
            payload["param2"] = element.param2
        return payload
    if isinstance(element, Bin):
        return {
            "cat": [wire_value(c) for c in element.categories],
            "prob": list(element.probabilities),
        }
    if isinstance(element, Sample):
        return {"sample": [wire_value(v) for v in element.values]}
    if isinstance(element, Quantile):
        return {"quantile": list(element.levels), "value": [wire_value(v) for v in element.values]}
    raise TypeError(f"not a prediction element: {element!r}")


def element_from_record(
    record: PredictionRecord,
    target: TargetDefinition,
    tolerance: float = DEFAULT_BIN_SUM_TOLERANCE,
) -> PredictionElement:
    """Bind a validated wire record to a typed prediction element.

    Callers must have run validation first; this raises ``ModelError`` on
    payloads that validation would have rejected.
    """
    tt = target.target_type
    payload = record.prediction
    if payload is None:
        raise ValueError("record has no prediction payload")
    if record.kind == "point":
        return Point(coerce_value(payload["value"], tt))
    if record.kind == "named":
        params = (payload["param1"],) + ((payload["param2"],) if "param2" in payload else ())
        return Named(NamedFamily(payload["family"]), params)
    if record.kind == "bin":
        entries = tuple(
            (coerce_value(c, tt) if tt is not TargetType.BINARY else c, p)
            for c, p in zip(payload["cat"], payload["prob"])
        )
        return Bin(entries, tolerance=tolerance)
    if record.kind == "sample":
        return Sample(tuple(coerce_value(v, tt) for v in payload["sample"]))
    if record.kind == "quantile":
        entries = tuple(
            (level, coerce_value(v, tt)) for level, v in zip(payload["quantile"], payload["value"])
        )
        return Quantile(entries)
    raise ValueError(f"unknown element class {record.kind!r}")


# --- truth CSV ---------------------------------------------------------------


def _coerce_truth_value(text: str, target: TargetDefinition) -> Scalar:
    tt = target.target_type
    if tt is TargetType.CONTINUOUS:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("non-finite")
        return value
    if tt is TargetType.DISCRETE:
        return int(text)
    if tt is TargetType.NOMINAL:
        return text
    if tt is TargetType.BINARY:
        if text not in ("true", "false"):
            raise ValueError("binary truth must be 'true' or 'false'")
        return text == "true"
    return datetime.date.fromisoformat(text)


def parse_truth_csv(data: bytes, config: ProjectConfig) -> TruthTable:
    """Parse a truth CSV (header ``timezero,unit,target,value``).

    Values are coerced to each target's data type using ``config``. Rows that
    reference unknown time-zeros, units, or targets become warnings and are
    skipped; bad headers, duplicate (timezero, unit, target) triples, and
    uncoercible values raise :class:`TruthParseError`.
    """
    issues = _Issues()
    warnings: list = []
    try:
        text = data.decode("utf-8-sig") if isinstance(data, (bytes, bytearray)) else data
    except UnicodeDecodeError as exc:
        issues.add("ENCODING", "line 1", str(exc))
        issues.raise_if_any(TruthParseError)

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        issues.add("HEADER", "line 1", "empty file")
        issues.raise_if_any(TruthParseError)
    if tuple(header) != TRUTH_HEADER:
        issues.add(
            "HEADER", "line 1", f"header must be exactly {','.join(TRUTH_HEADER)}"
        )
        issues.raise_if_any(TruthParseError)

    units = config.unit_map()
    targets = config.target_map()
    timezeros = set(config.timezero_dates())

    rows: list = []
    seen: set = set()
    for lineno, fields in enumerate(reader, start=2):
        loc = f"line {lineno}"
        if not fields:
            continue
        if len(fields) != 4:
            issues.add("ROW-SHAPE", loc, f"expected 4 fields, got {len(fields)}")
            continue
        tz_text, unit, target_name, value_text = fields
        try:
            timezero = datetime.date.fromisoformat(tz_text)
        except ValueError:
            issues.add("DATE-FORMAT", loc, f"timezero {tz_text!r} is not ISO YYYY-MM-DD")
            continue
        unknown = []
        if timezero not in timezeros:
            unknown.append(f"timezero {tz_text!r}")
        if unit not in units:
            unknown.append(f"unit {unit!r}")
        if target_name not in targets:
            unknown.append(f"target {target_name!r}")
        if unknown:
            warnings.append(
                ParseIssue("UNKNOWN-REF", loc, "skipped row with unknown " + ", ".join(unknown))
            )
            continue
        target = targets[target_name]
        try:
            value = _coerce_truth_value(value_text, target)
        except ValueError:
            issues.add(
                "TYPE-MISMATCH",
                loc,
                f"value {value_text!r} is not valid for {target.target_type.value} "
                f"target {target_name!r}",
            )
            continue
        key = (timezero, unit, target_name)
        if key in seen:
            issues.add("DUPLICATE-ROW", loc, f"duplicate truth row for {key}")
            continue
        seen.add(key)
        rows.append(TruthRow(timezero=timezero, unit=unit, target=target_name, value=value))

    issues.raise_if_any(TruthParseError)
    return TruthTable(rows=tuple(rows), warnings=tuple(warnings))


def serialize_truth_csv(table: TruthTable) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRUTH_HEADER)
    for row in table.rows:
        writer.writerow(
            [row.timezero.isoformat(), row.unit, row.target, _truth_text(row.value)]
        )
    return buf.getvalue().encode("utf-8")


def _truth_text(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, datetime.date):
        return value.isoformat()
    return repr(value) if isinstance(value, float) else str(value)


# --- project configuration ----------------------------------------------------

_CONFIG_KEYS = (
    "name",
    "description",
    "visibility",
    "units",
    "targets",
    "timezeros",
    "bin_sum_tolerance",
)
_TARGET_KEYS = (
    "name",
    "type",
    "description",
    "range",
    "categories",
    "is_step_ahead",
    "step_unit",
    "step_count",
)


def parse_project_config(data: bytes) -> ProjectConfig:
    """Parse and fully validate a project configuration JSON document."""
    issues = _Issues()
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        issues.add("JSON-MALFORMED", "$", str(exc))
        issues.raise_if_any(ConfigParseError)
    if not isinstance(doc, dict):
        issues.add("DOC-SHAPE", "$", "config root must be an object")
        issues.raise_if_any(ConfigParseError)

    _reject_unknown_keys(doc, _CONFIG_KEYS, "$", issues)
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        issues.add("VALUE-TYPE", "$.name", "project name must be a non-empty string")
    description = doc.get("description", "")
    if not isinstance(description, str):
        issues.add("VALUE-TYPE", "$.description", "description must be a string")
    visibility = doc.get("visibility", "public")
    if visibility not in ("public", "private"):
        issues.add("VALUE-TYPE", "$.visibility", "visibility must be 'public' or 'private'")
    tolerance = doc.get("bin_sum_tolerance", DEFAULT_BIN_SUM_TOLERANCE)
    if not _is_number(tolerance) or not 0 < tolerance < 1:
        issues.add("VALUE-TYPE", "$.bin_sum_tolerance", "tolerance must be in (0, 1)")

    units = _parse_units(doc.get("units", []), issues)
    targets = _parse_targets(doc.get("targets", []), issues)
    timezeros = _parse_timezeros(doc.get("timezeros", []), issues)

    issues.raise_if_any(ConfigParseError)
    return ProjectConfig(
        name=name,
        description=description,
        visibility=visibility,
        units=units,
        targets=targets,
        timezeros=timezeros,
        bin_sum_tolerance=float(tolerance),
    )


def _parse_units(raw, issues: _Issues) -> tuple:
    if not isinstance(raw, list):
        issues.add("VALUE-TYPE", "$.units", "'units' must be an array")
        return ()
    units = []
    seen = set()
    for i, entry in enumerate(raw):
        loc = f"$.units[{i}]"
        if not isinstance(entry, dict):
            issues.add("VALUE-TYPE", loc, "unit must be an object")
            continue
        _reject_unknown_keys(entry, ("code", "name"), loc, issues)
        code = entry.get("code")
        if not isinstance(code, str) or not code:
            issues.add("VALUE-TYPE", f"{loc}.code", "unit code must be a non-empty string")
            continue
        if code in seen:
            issues.add("DUPLICATE", f"{loc}.code", f"duplicate unit code {code!r}")
            continue
        seen.add(code)
        units.append(Unit(code=code, name=str(entry.get("name", ""))))
    return tuple(units)


def _parse_targets(raw, issues: _Issues) -> tuple:
    if not isinstance(raw, list):
        issues.add("VALUE-TYPE", "$.targets", "'targets' must be an array")
        return ()
    targets = []
    seen = set()
    for i, entry in enumerate(raw):
        loc = f"$.targets[{i}]"
        if not isinstance(entry, dict):
            issues.add("VALUE-TYPE", loc, "target must be an object")
            continue
        _reject_unknown_keys(entry, _TARGET_KEYS, loc, issues)
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            issues.add("VALUE-TYPE", f"{loc}.name", "target name must be a non-empty string")
            continue
        type_text = entry.get("type")
        try:
            target_type = TargetType(type_text)
        except ValueError:
            issues.add(
                "VALUE-TYPE",
                f"{loc}.type",
                f"type must be one of {', '.join(t.value for t in TargetType)}",
            )
            continue
        if name in seen:
            issues.add("DUPLICATE", f"{loc}.name", f"duplicate target name {name!r}")
            continue
        seen.add(name)
        try:
            targets.append(
                TargetDefinition(
                    name=name,
                    target_type=target_type,
                    description=str(entry.get("description", "")),
                    range=tuple(entry["range"]) if entry.get("range") is not None else None,
                    categories=(
                        tuple(entry["categories"])
                        if entry.get("categories") is not None
                        else None
                    ),
                    is_step_ahead=bool(entry.get("is_step_ahead", False)),
                    step_unit=entry.get("step_unit"),
                    step_count=entry.get("step_count"),
                )
            )
        except (ValueError, TypeError) as exc:
            issues.add("TARGET-INVALID", loc, str(exc))
    return tuple(targets)


def _parse_timezeros(raw, issues: _Issues) -> tuple:
    if not isinstance(raw, list):
        issues.add("VALUE-TYPE", "$.timezeros", "'timezeros' must be an array")
        return ()
    timezeros = []
    seen = set()
    for i, entry in enumerate(raw):
        loc = f"$.timezeros[{i}]"
        if not isinstance(entry, dict):
            issues.add("VALUE-TYPE", loc, "timezero must be an object")
            continue
        _reject_unknown_keys(entry, ("date", "data_version_date"), loc, issues)
        try:
            date = datetime.date.fromisoformat(entry.get("date", ""))
        except (TypeError, ValueError):
            issues.add("DATE-FORMAT", f"{loc}.date", "date must be ISO YYYY-MM-DD")
            continue
        if date in seen:
            issues.add("DUPLICATE", f"{loc}.date", f"duplicate timezero {date.isoformat()}")
            continue
        seen.add(date)
        dvd = entry.get("data_version_date")
        if dvd is not None:
            try:
                dvd = datetime.date.fromisoformat(dvd)
            except (TypeError, ValueError):
                issues.add(
                    "DATE-FORMAT", f"{loc}.data_version_date", "date must be ISO YYYY-MM-DD"
                )
                continue
        timezeros.append(TimeZero(date=date, data_version_date=dvd))
    return tuple(timezeros)


def serialize_project_config(config: ProjectConfig) -> bytes:
    """Serialize a project config to deterministic, human-editable JSON."""
    targets = []
    for t in config.targets:
        entry: dict = {"name": t.name, "type": t.target_type.value}
        if t.description:
            entry["description"] = t.description
        if t.range is not None:
            entry["range"] = [wire_value(v) for v in t.range]
        if t.categories is not None:
            entry["categories"] = [wire_value(c) for c in t.categories]
        entry["is_step_ahead"] = t.is_step_ahead
        if t.is_step_ahead:
            if t.step_unit is not None:
                entry["step_unit"] = t.step_unit
            entry["step_count"] = t.step_count
        targets.append(entry)
    timezeros = []
    for tz in config.timezeros:
        entry = {"date": tz.date.isoformat()}
        if tz.data_version_date is not None:
            entry["data_version_date"] = tz.data_version_date.isoformat()
        timezeros.append(entry)
    doc = {
        "name": config.name,
        "description": config.description,
        "visibility": config.visibility,
        "units": [
            {"code": u.code, "name": u.name} if u.name else {"code": u.code}
            for u in config.units
        ],
        "targets": targets,
        "timezeros": timezeros,
    }
    if config.bin_sum_tolerance != DEFAULT_BIN_SUM_TOLERANCE:
        doc["bin_sum_tolerance"] = config.bin_sum_tolerance
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def template_config() -> ProjectConfig:
    """A small self-consistent starter configuration covering each target type."""
    return ProjectConfig(
        name="example-project",
        description="Starter template: edit units, targets, and timezeros.",
        visibility="public",
        units=(Unit("US", "United States"), Unit("MA", "Massachusetts")),
        targets=(
            TargetDefinition(
                name="pct visits wk1",
                target_type=TargetType.CONTINUOUS,
                description="1-week-ahead percentage of visits",
                range=(0.0, 100.0),
                categories=tuple(float(x) for x in range(0, 100, 5)),
                is_step_ahead=True,
                step_unit="week",
                step_count=1,
            ),
            TargetDefinition(
                name="cases wk1",
                target_type=TargetType.DISCRETE,
                description="1-week-ahead incident case count",
                range=(0, 100000),
                categories=tuple(range(0, 1000, 100)),
                is_step_ahead=True,
                step_unit="week",
                step_count=1,
            ),
            TargetDefinition(
                name="severity",
                target_type=TargetType.NOMINAL,
                categories=("low", "moderate", "high"),
            ),
            TargetDefinition(name="above baseline", target_type=TargetType.BINARY),
            TargetDefinition(
                name="peak week",
                target_type=TargetType.DATE,
                categories=tuple(
                    datetime.date(2026, 1, 5) + datetime.timedelta(weeks=k) for k in range(8)
                ),
            ),
        ),
        timezeros=(
            TimeZero(datetime.date(2026, 1, 5)),
            TimeZero(datetime.date(2026, 1, 12), data_version_date=datetime.date(2026, 1, 11)),
        ),
    )
