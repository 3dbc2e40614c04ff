"""Durable persistence for projects, forecasts, truth, and scores.

The relational layout mirrors the data model: one table per prediction
element kind (point/named/bin/sample/quantile) keyed by
(forecast, unit, target[, index]), plus metadata tables for projects,
units, targets, time-zeros, and models.

Registration semantics: ``issued_at`` is assigned from the server clock at
successful registration (monotone non-decreasing per store) and can never
be supplied by the submitter. Re-uploading a (model, timezero) pair
replaces the stored forecast atomically and appends the superseded key to
an append-only audit log.

Writes are serialized through a single connection and lock; reads see
snapshot-consistent state. The on-disk format (SQLite) is private — all
access goes through this API.
"""

from __future__ import annotations

import datetime
import json
import sqlite3
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from . import scoring
from .formats import (
    ForecastDocument,
    PredictionRecord,
    ProjectConfig,
    TruthRow,
    TruthTable,
    serialize_forecast,
)
from .model import KIND_ORDER, TargetDefinition, TargetType, TimeZero, Unit
from .scoring import ScoreRecord
from .validation import RuleViolation, has_errors, validate_forecast

_KIND_RANK = {k.value: i for i, k in enumerate(KIND_ORDER)}

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS projects (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL UNIQUE,
    description TEXT NOT NULL DEFAULT '',
    visibility TEXT NOT NULL DEFAULT 'public',
    owners TEXT NOT NULL DEFAULT '[]',
    bin_sum_tolerance REAL NOT NULL DEFAULT 0.001
);
CREATE TABLE IF NOT EXISTS units (
    id INTEGER PRIMARY KEY,
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    code TEXT NOT NULL,
    name TEXT NOT NULL DEFAULT '',
    UNIQUE (project_id, code)
);
CREATE TABLE IF NOT EXISTS targets (
    id INTEGER PRIMARY KEY,
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    name TEXT NOT NULL,
    type TEXT NOT NULL,
    description TEXT NOT NULL DEFAULT '',
    range_json TEXT,
    categories_json TEXT,
    is_step_ahead INTEGER NOT NULL DEFAULT 0,
    step_unit TEXT,
    step_count INTEGER,
    UNIQUE (project_id, name)
);
CREATE TABLE IF NOT EXISTS timezeros (
    id INTEGER PRIMARY KEY,
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    date TEXT NOT NULL,
    data_version_date TEXT,
    UNIQUE (project_id, date)
);
CREATE TABLE IF NOT EXISTS models (
    id INTEGER PRIMARY KEY,
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    abbreviation TEXT NOT NULL,
    name TEXT NOT NULL DEFAULT '',
    team TEXT NOT NULL DEFAULT '',
    description TEXT NOT NULL DEFAULT '',
    owners TEXT NOT NULL DEFAULT '[]',
    UNIQUE (project_id, abbreviation)
);
CREATE TABLE IF NOT EXISTS forecasts (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    model_id INTEGER NOT NULL REFERENCES models(id) ON DELETE CASCADE,
    timezero_id INTEGER NOT NULL REFERENCES timezeros(id) ON DELETE CASCADE,
    issued_at TEXT NOT NULL,
    source TEXT NOT NULL DEFAULT '',
    UNIQUE (model_id, timezero_id)
);
CREATE TABLE IF NOT EXISTS forecast_audit (
    id INTEGER PRIMARY KEY,
    project_id INTEGER NOT NULL,
    model TEXT NOT NULL,
    timezero TEXT NOT NULL,
    forecast_id INTEGER NOT NULL,
    issued_at TEXT NOT NULL,
    superseded_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS point_elements (
    forecast_id INTEGER NOT NULL REFERENCES forecasts(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (forecast_id, unit_id, target_id)
);
CREATE TABLE IF NOT EXISTS named_elements (
    forecast_id INTEGER NOT NULL REFERENCES forecasts(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    family TEXT NOT NULL,
    param1 REAL NOT NULL,
    param2 REAL,
    PRIMARY KEY (forecast_id, unit_id, target_id)
);
CREATE TABLE IF NOT EXISTS bin_elements (
    forecast_id INTEGER NOT NULL REFERENCES forecasts(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    idx INTEGER NOT NULL,
    cat TEXT NOT NULL,
    prob REAL NOT NULL,
    PRIMARY KEY (forecast_id, unit_id, target_id, idx)
);
CREATE TABLE IF NOT EXISTS sample_elements (
    forecast_id INTEGER NOT NULL REFERENCES forecasts(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    idx INTEGER NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (forecast_id, unit_id, target_id, idx)
);
CREATE TABLE IF NOT EXISTS quantile_elements (
    forecast_id INTEGER NOT NULL REFERENCES forecasts(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    seq INTEGER NOT NULL,
    idx INTEGER NOT NULL,
    level REAL NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (forecast_id, unit_id, target_id, idx)
);
CREATE TABLE IF NOT EXISTS truth (
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    timezero_id INTEGER NOT NULL REFERENCES timezeros(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    value TEXT NOT NULL,
    PRIMARY KEY (project_id, timezero_id, unit_id, target_id)
);
CREATE TABLE IF NOT EXISTS scores (
    project_id INTEGER NOT NULL REFERENCES projects(id) ON DELETE CASCADE,
    model_id INTEGER NOT NULL REFERENCES models(id) ON DELETE CASCADE,
    timezero_id INTEGER NOT NULL REFERENCES timezeros(id) ON DELETE CASCADE,
    unit_id INTEGER NOT NULL REFERENCES units(id) ON DELETE CASCADE,
    target_id INTEGER NOT NULL REFERENCES targets(id) ON DELETE CASCADE,
    score_id TEXT NOT NULL,
    value REAL,
    flag TEXT,
    PRIMARY KEY (model_id, timezero_id, unit_id, target_id, score_id)
);
CREATE TABLE IF NOT EXISTS users (
    id INTEGER PRIMARY KEY,
    username TEXT NOT NULL UNIQUE,
    salt TEXT NOT NULL,
    pw_hash TEXT NOT NULL
);
"""


class StoreError(Exception):
    """A store operation failed (unknown reference, duplicate, bad filter)."""


class ForecastValidationError(StoreError):
    """Registration refused because validation reported errors."""

    def __init__(self, violations: Sequence[RuleViolation]):
        self.violations = tuple(violations)
        super().__init__(
            f"forecast failed validation with {len(self.violations)} violation(s): "
            + "; ".join(f"{v.rule_id} ({v.unit}/{v.target})" for v in self.violations[:4])
        )


@dataclass(frozen=True)
class StoredForecastKey:
    forecast_id: int
    model_id: str
    timezero: datetime.date
    issued_at: datetime.datetime


@dataclass(frozen=True)
class ForecastQuery:
    """Subset filters for forecast queries; an empty/absent set means 'all'."""

    models: Optional[frozenset] = None
    units: Optional[frozenset] = None
    targets: Optional[frozenset] = None
    timezeros: Optional[frozenset] = None
    types: Optional[frozenset] = None

    @classmethod
    def from_json(cls, doc: dict) -> "ForecastQuery":
        allowed = {"models", "units", "targets", "timezeros", "types"}
        unknown = set(doc) - allowed
        if unknown:
            raise StoreError(f"unknown query keys: {sorted(unknown)}")
        fields = {}
        for key in allowed:
            values = doc.get(key)
            if values is None:
                continue
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise StoreError(f"query key {key!r} must be a list of strings")
            if values:
                fields[key] = frozenset(values)
        return cls(**fields)


@dataclass(frozen=True)
class ForecastRow:
    """One element row of a forecast query result (wire-encoded scalars)."""

    model: str
    timezero: str
    unit: str
    target: str
    kind: str
    value: Optional[object] = None
    cat: Optional[object] = None
    prob: Optional[float] = None
    sample: Optional[object] = None
    quantile: Optional[float] = None
    family: Optional[str] = None
    param1: Optional[float] = None
    param2: Optional[float] = None

    def sort_key(self):
        return (
            self.model,
            self.timezero,
            self.unit,
            self.target,
            _KIND_RANK[self.kind],
        )


FORECAST_CSV_HEADER = (
    "model",
    "timezero",
    "unit",
    "target",
    "class",
    "value",
    "cat",
    "prob",
    "sample",
    "quantile",
    "family",
    "param1",
    "param2",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def forecast_rows_to_csv(rows: Iterable[ForecastRow]) -> bytes:
    """Deterministic wide-CSV export of forecast query rows."""
    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(FORECAST_CSV_HEADER)
    for r in rows:
        writer.writerow(
            [
                r.model,
                r.timezero,
                r.unit,
                r.target,
                r.kind,
                _cell(r.value),
                _cell(r.cat),
                _cell(r.prob),
                _cell(r.sample),
                _cell(r.quantile),
                _cell(r.family),
                _cell(r.param1),
                _cell(r.param2),
            ]
        )
    return buf.getvalue().encode("utf-8")


def forecast_rows_to_json(rows: Iterable[ForecastRow]) -> bytes:
    """JSON-lines-free structured export: an array of row objects."""
    out = [
        {
            "model": r.model,
            "timezero": r.timezero,
            "unit": r.unit,
            "target": r.target,
            "class": r.kind,
            "value": r.value,
            "cat": r.cat,
            "prob": r.prob,
            "sample": r.sample,
            "quantile": r.quantile,
            "family": r.family,
            "param1": r.param1,
            "param2": r.param2,
        }
        for r in rows
    ]
    return json.dumps(out, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _utcnow() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


def _encode(value) -> str:
    return json.dumps(value, ensure_ascii=False)


def _decode(text: str):
    return json.loads(text)


class ForecastStore:
    """Embedded transactional archive (single file or in-memory).

    Single-writer, multi-reader: all statements run on one connection
    guarded by a re-entrant lock, so readers always observe committed
    state and concurrent registrations serialize at commit.
    """

    def __init__(self, path: str = ":memory:"):
        self.path = path
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.isolation_level = None
        self._conn.execute("PRAGMA foreign_keys = ON")
        if path != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
        with self._lock:
            self._conn.executescript(_SCHEMA)

    def close(self):
        with self._lock:
            self._conn.close()

    # -- internal helpers ------------------------------------------------------

    def _tx(self):
        return _Transaction(self._conn, self._lock)

    def _one(self, sql: str, params=()) -> Optional[tuple]:
        with self._lock:
            return self._conn.execute(sql, params).fetchone()

    def _all(self, sql: str, params=()) -> list:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def _project_row(self, project) -> tuple:
        if isinstance(project, int) or (isinstance(project, str) and project.isdigit()):
            row = self._one(
                "SELECT id, name, description, visibility, owners, bin_sum_tolerance "
                "FROM projects WHERE id = ?",
                (int(project),),
            )
        else:
            row = None
        if row is None:
            row = self._one(
                "SELECT id, name, description, visibility, owners, bin_sum_tolerance "
                "FROM projects WHERE name = ?",
                (str(project),),
            )
        if row is None:
            raise StoreError(f"unknown project {project!r}")
        return row

    def project_id(self, project) -> int:
        return self._project_row(project)[0]

    # -- projects ----------------------------------------------------------------

    def create_project(self, config: ProjectConfig, owner: Optional[str] = None) -> int:
        """Persist a project with its units, targets, and timezeros atomically."""
        with self._tx() as conn:
            try:
                cur = conn.execute(
                    "INSERT INTO projects (name, description, visibility, owners, "
                    "bin_sum_tolerance) VALUES (?, ?, ?, ?, ?)",
                    (
                        config.name,
                        config.description,
                        config.visibility,
                        json.dumps([owner] if owner else []),
                        config.bin_sum_tolerance,
                    ),
                )
            except sqlite3.IntegrityError:
                raise StoreError(f"duplicate project name {config.name!r}") from None
            pid = cur.lastrowid
            conn.executemany(
                "INSERT INTO units (project_id, code, name) VALUES (?, ?, ?)",
                [(pid, u.code, u.name) for u in config.units],
            )
            conn.executemany(
                "INSERT INTO targets (project_id, name, type, description, range_json, "
                "categories_json, is_step_ahead, step_unit, step_count) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                [
                    (
                        pid,
                        t.name,
                        t.target_type.value,
                        t.description,
                        _encode([_wire(v) for v in t.range]) if t.range is not None else None,
                        _encode([_wire(c) for c in t.categories])
                        if t.categories is not None
                        else None,
                        int(t.is_step_ahead),
                        t.step_unit,
                        t.step_count,
                    )
                    for t in config.targets
                ],
            )
            conn.executemany(
                "INSERT INTO timezeros (project_id, date, data_version_date) VALUES (?, ?, ?)",
                [
                    (
                        pid,
                        tz.date.isoformat(),
                        tz.data_version_date.isoformat() if tz.data_version_date else None,
                    )
                    for tz in config.timezeros
                ],
            )
        return pid

    def delete_project(self, project):
        pid = self.project_id(project)
        with self._tx() as conn:
            conn.execute("DELETE FROM projects WHERE id = ?", (pid,))

    def list_projects(self) -> list:
        rows = self._all(
            "SELECT id, name, description, visibility, owners FROM projects ORDER BY name"
        )
        return [
            {
                "id": r[0],
                "name": r[1],
                "description": r[2],
                "visibility": r[3],
                "owners": json.loads(r[4]),
            }
            for r in rows
        ]

    def project_info(self, project) -> dict:
        pid, name, description, visibility, owners, tol = self._project_row(project)
        return {
            "id": pid,
            "name": name,
            "description": description,
            "visibility": visibility,
            "owners": json.loads(owners),
        }

    def project_config(self, project) -> ProjectConfig:
        pid, name, description, visibility, _owners, tol = self._project_row(project)
        units = tuple(
            Unit(code=r[0], name=r[1])
            for r in self._all(
                "SELECT code, name FROM units WHERE project_id = ? ORDER BY id", (pid,)
            )
        )
        targets = []
        for r in self._all(
            "SELECT name, type, description, range_json, categories_json, is_step_ahead, "
            "step_unit, step_count FROM targets WHERE project_id = ? ORDER BY id",
            (pid,),
        ):
            targets.append(
                TargetDefinition(
                    name=r[0],
                    target_type=TargetType(r[1]),
                    description=r[2],
                    range=tuple(_decode(r[3])) if r[3] is not None else None,
                    categories=tuple(_decode(r[4])) if r[4] is not None else None,
                    is_step_ahead=bool(r[5]),
                    step_unit=r[6],
                    step_count=r[7],
                )
            )
        timezeros = tuple(
            TimeZero(
                date=datetime.date.fromisoformat(r[0]),
                data_version_date=datetime.date.fromisoformat(r[1]) if r[1] else None,
            )
            for r in self._all(
                "SELECT date, data_version_date FROM timezeros WHERE project_id = ? "
                "ORDER BY date",
                (pid,),
            )
        )
        return ProjectConfig(
            name=name,
            description=description,
            visibility=visibility,
            units=units,
            targets=tuple(targets),
            timezeros=timezeros,
            bin_sum_tolerance=tol,
        )

    # -- models -------------------------------------------------------------------

    def add_model(
        self,
        project,
        abbreviation: str,
        name: str = "",
        team: str = "",
        description: str = "",
        owner: Optional[str] = None,
    ) -> int:
        pid = self.project_id(project)
        if not abbreviation:
            raise StoreError("model abbreviation must be non-empty")
        with self._tx() as conn:
            try:
                cur = conn.execute(
                    "INSERT INTO models (project_id, abbreviation, name, team, description, "
                    "owners) VALUES (?, ?, ?, ?, ?, ?)",
                    (pid, abbreviation, name, team, description,
                     json.dumps([owner] if owner else [])),
                )
            except sqlite3.IntegrityError:
                raise StoreError(
                    f"duplicate model abbreviation {abbreviation!r} in project"
                ) from None
            return cur.lastrowid

    def list_models(self, project) -> list:
        pid = self.project_id(project)
        rows = self._all(
            "SELECT id, abbreviation, name, team, description, owners FROM models "
            "WHERE project_id = ? ORDER BY abbreviation",
            (pid,),
        )
        return [
            {
                "id": r[0],
                "abbreviation": r[1],
                "name": r[2],
                "team": r[3],
                "description": r[4],
                "owners": json.loads(r[5]),
            }
            for r in rows
        ]

    def model_info(self, model_id: int) -> dict:
        row = self._one(
            "SELECT id, project_id, abbreviation, name, team, description, owners "
            "FROM models WHERE id = ?",
            (model_id,),
        )
        if row is None:
            raise StoreError(f"unknown model id {model_id}")
        return {
            "id": row[0],
            "project_id": row[1],
            "abbreviation": row[2],
            "name": row[3],
            "team": row[4],
            "description": row[5],
            "owners": json.loads(row[6]),
        }

    def model_id_for(self, project, abbreviation: str) -> int:
        pid = self.project_id(project)
        row = self._one(
            "SELECT id FROM models WHERE project_id = ? AND abbreviation = ?",
            (pid, abbreviation),
        )
        if row is None:
            raise StoreError(f"unknown model {abbreviation!r}")
        return row[0]

    # -- forecasts -------------------------------------------------------------------

    def _next_issued_at(self, conn) -> str:
        now = _utcnow().isoformat(timespec="microseconds")
        row = conn.execute("SELECT value FROM meta WHERE key = 'last_issued_at'").fetchone()
        stamp = max(now, row[0]) if row else now
        conn.execute(
            "INSERT INTO meta (key, value) VALUES ('last_issued_at', ?) "
            "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            (stamp,),
        )
        return stamp

    def register_forecast(
        self,
        model_id: int,
        timezero: datetime.date,
        document: ForecastDocument,
        source: str = "",
        run_validation: bool = True,
    ) -> StoredForecastKey:
        """Validate and persist a forecast, replacing any previous one.

        ``issued_at`` comes from the server clock. A replaced forecast's key
        is appended to the audit log with its original ``issued_at``.
        Raises :class:`ForecastValidationError` when validation reports
        errors and :class:`StoreError` for unknown model/timezero.
        """
        info = self.model_info(model_id)
        pid = info["project_id"]
        config = self.project_config(pid)
        tz_row = self._one(
            "SELECT id FROM timezeros WHERE project_id = ? AND date = ?",
            (pid, timezero.isoformat()),
        )
        if tz_row is None:
            raise StoreError(f"unknown timezero {timezero.isoformat()} for project")
        tz_id = tz_row[0]

        if run_validation:
            violations = validate_forecast(document, config)
            if has_errors(violations):
                raise ForecastValidationError(violations)

        unit_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, code FROM units WHERE project_id = ?", (pid,))
        }
        target_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, name FROM targets WHERE project_id = ?", (pid,))
        }

        with self._tx() as conn:
            issued_at = self._next_issued_at(conn)
            old = conn.execute(
                "SELECT id, issued_at FROM forecasts WHERE model_id = ? AND timezero_id = ?",
                (model_id, tz_id),
            ).fetchone()
            if old is not None:
                conn.execute(
                    "INSERT INTO forecast_audit (project_id, model, timezero, forecast_id, "
                    "issued_at, superseded_at) VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        pid,
                        info["abbreviation"],
                        timezero.isoformat(),
                        old[0],
                        old[1],
                        issued_at,
                    ),
                )
                conn.execute("DELETE FROM forecasts WHERE id = ?", (old[0],))
            cur = conn.execute(
                "INSERT INTO forecasts (model_id, timezero_id, issued_at, source) "
                "VALUES (?, ?, ?, ?)",
                (model_id, tz_id, issued_at, source),
            )
            fid = cur.lastrowid
            self._insert_elements(conn, fid, document, unit_ids, target_ids)

        return StoredForecastKey(
            forecast_id=fid,
            model_id=info["abbreviation"],
            timezero=timezero,
            issued_at=datetime.datetime.fromisoformat(issued_at),
        )

    def _insert_elements(self, conn, fid: int, document: ForecastDocument, unit_ids, target_ids):
        points, nameds, bins, samples, quantiles = [], [], [], [], []
        for seq, record in enumerate(document.predictions):
            uid = unit_ids[record.unit]
            tid = target_ids[record.target]
            payload = record.prediction
            if record.kind == "point":
                points.append((fid, uid, tid, seq, _encode(payload["value"])))
            elif record.kind == "named":
                nameds.append(
                    (fid, uid, tid, seq, payload["family"], payload["param1"],
                     payload.get("param2"))
                )
            elif record.kind == "bin":
                for idx, (cat, prob) in enumerate(zip(payload["cat"], payload["prob"])):
                    bins.append((fid, uid, tid, seq, idx, _encode(cat), prob))
            elif record.kind == "sample":
                for idx, value in enumerate(payload["sample"]):
                    samples.append((fid, uid, tid, seq, idx, _encode(value)))
            elif record.kind == "quantile":
                for idx, (level, value) in enumerate(
                    zip(payload["quantile"], payload["value"])
                ):
                    quantiles.append((fid, uid, tid, seq, idx, level, _encode(value)))
        conn.executemany(
            "INSERT INTO point_elements VALUES (?, ?, ?, ?, ?)", points
        )
        conn.executemany(
            "INSERT INTO named_elements VALUES (?, ?, ?, ?, ?, ?, ?)", nameds
        )
        conn.executemany(
            "INSERT INTO bin_elements VALUES (?, ?, ?, ?, ?, ?, ?)", bins
        )
        conn.executemany(
            "INSERT INTO sample_elements VALUES (?, ?, ?, ?, ?, ?)", samples
        )
        conn.executemany(
            "INSERT INTO quantile_elements VALUES (?, ?, ?, ?, ?, ?, ?)", quantiles
        )

    def forecast_key(self, forecast_id: int) -> StoredForecastKey:
        row = self._one(
            "SELECT f.id, m.abbreviation, tz.date, f.issued_at FROM forecasts f "
            "JOIN models m ON m.id = f.model_id "
            "JOIN timezeros tz ON tz.id = f.timezero_id WHERE f.id = ?",
            (forecast_id,),
        )
        if row is None:
            raise StoreError(f"unknown forecast id {forecast_id}")
        return StoredForecastKey(
            forecast_id=row[0],
            model_id=row[1],
            timezero=datetime.date.fromisoformat(row[2]),
            issued_at=datetime.datetime.fromisoformat(row[3]),
        )

    def forecast_id_for(self, model_id: int, timezero: datetime.date) -> Optional[int]:
        row = self._one(
            "SELECT f.id FROM forecasts f JOIN timezeros tz ON tz.id = f.timezero_id "
            "WHERE f.model_id = ? AND tz.date = ?",
            (model_id, timezero.isoformat()),
        )
        return row[0] if row else None

    def forecast_project_id(self, forecast_id: int) -> int:
        row = self._one(
            "SELECT m.project_id FROM forecasts f JOIN models m ON m.id = f.model_id "
            "WHERE f.id = ?",
            (forecast_id,),
        )
        if row is None:
            raise StoreError(f"unknown forecast id {forecast_id}")
        return row[0]

    def forecast_document(self, forecast_id: int) -> ForecastDocument:
        """Reconstruct the stored document in its original record order."""
        self.forecast_key(forecast_id)
        pieces: list = []
        for row in self._all(
            "SELECT p.seq, u.code, t.name, p.value FROM point_elements p "
            "JOIN units u ON u.id = p.unit_id JOIN targets t ON t.id = p.target_id "
            "WHERE p.forecast_id = ?",
            (forecast_id,),
        ):
            pieces.append(
                (row[0], PredictionRecord(row[1], row[2], "point", {"value": _decode(row[3])}))
            )
        for row in self._all(
            "SELECT n.seq, u.code, t.name, n.family, n.param1, n.param2 FROM named_elements n "
            "JOIN units u ON u.id = n.unit_id JOIN targets t ON t.id = n.target_id "
            "WHERE n.forecast_id = ?",
            (forecast_id,),
        ):
            payload = {"family": row[3], "param1": row[4]}
            if row[5] is not None:
                payload["param2"] = row[5]
            pieces.append((row[0], PredictionRecord(row[1], row[2], "named", payload)))
        grouped: dict = {}
        for row in self._all(
            "SELECT b.seq, u.code, t.name, b.idx, b.cat, b.prob FROM bin_elements b "
            "JOIN units u ON u.id = b.unit_id JOIN targets t ON t.id = b.target_id "
            "WHERE b.forecast_id = ? ORDER BY b.seq, b.idx",
            (forecast_id,),
        ):
            grouped.setdefault((row[0], row[1], row[2], "bin"), []).append(
                (_decode(row[4]), row[5])
            )
        for row in self._all(
            "SELECT s.seq, u.code, t.name, s.idx, s.value FROM sample_elements s "
            "JOIN units u ON u.id = s.unit_id JOIN targets t ON t.id = s.target_id "
            "WHERE s.forecast_id = ? ORDER BY s.seq, s.idx",
            (forecast_id,),
        ):
            grouped.setdefault((row[0], row[1], row[2], "sample"), []).append(
                _decode(row[4])
            )
        for row in self._all(
            "SELECT q.seq, u.code, t.name, q.idx, q.level, q.value FROM quantile_elements q "
            "JOIN units u ON u.id = q.unit_id JOIN targets t ON t.id = q.target_id "
            "WHERE q.forecast_id = ? ORDER BY q.seq, q.idx",
            (forecast_id,),
        ):
            grouped.setdefault((row[0], row[1], row[2], "quantile"), []).append(
                (row[4], _decode(row[5]))
            )
        for (seq, unit, target, kind), values in grouped.items():
            if kind == "bin":
                payload = {"cat": [c for c, _ in values], "prob": [p for _, p in values]}
            elif kind == "sample":
                payload = {"sample": values}
            else:
                payload = {
                    "quantile": [lvl for lvl, _ in values],
                    "value": [v for _, v in values],
                }
            pieces.append((seq, PredictionRecord(unit, target, kind, payload)))
        pieces.sort(key=lambda p: p[0])
        return ForecastDocument(predictions=tuple(r for _, r in pieces))

    def forecast_data(self, forecast_id: int) -> bytes:
        return serialize_forecast(self.forecast_document(forecast_id))

    def forecasts_for_project(self, project, models: Optional[Iterable[str]] = None) -> list:
        """(model abbreviation, timezero date, document) for every stored forecast."""
        pid = self.project_id(project)
        rows = self._all(
            "SELECT f.id, m.abbreviation, tz.date FROM forecasts f "
            "JOIN models m ON m.id = f.model_id "
            "JOIN timezeros tz ON tz.id = f.timezero_id "
            "WHERE m.project_id = ? ORDER BY m.abbreviation, tz.date",
            (pid,),
        )
        wanted = set(models) if models is not None else None
        out = []
        for fid, abbrev, date_text in rows:
            if wanted is not None and abbrev not in wanted:
                continue
            out.append(
                (abbrev, datetime.date.fromisoformat(date_text), self.forecast_document(fid))
            )
        return out

    def audit_rows(self, project=None) -> list:
        sql = (
            "SELECT project_id, model, timezero, forecast_id, issued_at, superseded_at "
            "FROM forecast_audit"
        )
        params: tuple = ()
        if project is not None:
            sql += " WHERE project_id = ?"
            params = (self.project_id(project),)
        sql += " ORDER BY id"
        return [
            {
                "project_id": r[0],
                "model": r[1],
                "timezero": r[2],
                "forecast_id": r[3],
                "issued_at": r[4],
                "superseded_at": r[5],
            }
            for r in self._all(sql, params)
        ]

    # -- truth --------------------------------------------------------------------

    def upload_truth(self, project, table: TruthTable) -> int:
        """Replace the project's truth set atomically; returns the row count."""
        pid = self.project_id(project)
        unit_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, code FROM units WHERE project_id = ?", (pid,))
        }
        target_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, name FROM targets WHERE project_id = ?", (pid,))
        }
        tz_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, date FROM timezeros WHERE project_id = ?", (pid,))
        }
        with self._tx() as conn:
            conn.execute("DELETE FROM truth WHERE project_id = ?", (pid,))
            conn.executemany(
                "INSERT INTO truth VALUES (?, ?, ?, ?, ?)",
                [
                    (
                        pid,
                        tz_ids[row.timezero.isoformat()],
                        unit_ids[row.unit],
                        target_ids[row.target],
                        _encode(_wire(row.value)),
                    )
                    for row in table.rows
                ],
            )
        return len(table.rows)

    def truth_records(self, project) -> list:
        pid = self.project_id(project)
        config = self.project_config(pid)
        targets = config.target_map()
        rows = self._all(
            "SELECT tz.date, u.code, t.name, tr.value FROM truth tr "
            "JOIN timezeros tz ON tz.id = tr.timezero_id "
            "JOIN units u ON u.id = tr.unit_id "
            "JOIN targets t ON t.id = tr.target_id "
            "WHERE tr.project_id = ? ORDER BY tz.date, u.code, t.name",
            (pid,),
        )
        out = []
        for date_text, unit, target_name, value_text in rows:
            from .model import coerce_value

            value = coerce_value(_decode(value_text), targets[target_name].target_type)
            out.append(
                TruthRow(
                    timezero=datetime.date.fromisoformat(date_text),
                    unit=unit,
                    target=target_name,
                    value=value,
                )
            )
        return out

    # -- queries -------------------------------------------------------------------

    def _check_filters(self, pid: int, query: ForecastQuery):
        def missing(values, known, label):
            unknown = sorted(set(values) - set(known))
            if unknown:
                raise StoreError(f"unknown {label}: {', '.join(map(str, unknown))}")

        if query.models is not None:
            known = [r[0] for r in self._all(
                "SELECT abbreviation FROM models WHERE project_id = ?", (pid,))]
            missing(query.models, known, "models")
        if query.units is not None:
            known = [r[0] for r in self._all(
                "SELECT code FROM units WHERE project_id = ?", (pid,))]
            missing(query.units, known, "units")
        if query.targets is not None:
            known = [r[0] for r in self._all(
                "SELECT name FROM targets WHERE project_id = ?", (pid,))]
            missing(query.targets, known, "targets")
        if query.timezeros is not None:
            known = [r[0] for r in self._all(
                "SELECT date FROM timezeros WHERE project_id = ?", (pid,))]
            missing(query.timezeros, known, "timezeros")
        if query.types is not None:
            missing(query.types, _KIND_RANK, "types")

    def query_forecasts(self, project, query: ForecastQuery = ForecastQuery()) -> list:
        """Element rows matching every supplied filter, in deterministic order
        (model, timezero, unit, target, kind, intra-element index)."""
        pid = self.project_id(project)
        self._check_filters(pid, query)

        def clause(column, values):
            if values is None:
                return "", ()
            marks = ",".join("?" for _ in values)
            return f" AND {column} IN ({marks})", tuple(sorted(values))

        base_join = (
            "FROM {table} e "
            "JOIN forecasts f ON f.id = e.forecast_id "
            "JOIN models m ON m.id = f.model_id "
            "JOIN timezeros tz ON tz.id = f.timezero_id "
            "JOIN units u ON u.id = e.unit_id "
            "JOIN targets t ON t.id = e.target_id "
            "WHERE m.project_id = ?"
        )
        mc, mp = clause("m.abbreviation", query.models)
        uc, up = clause("u.code", query.units)
        tc, tp = clause("t.name", query.targets)
        zc, zp = clause("tz.date", query.timezeros)
        suffix = mc + uc + tc + zc
        params = (pid,) + mp + up + tp + zp

        def wanted(kind: str) -> bool:
            return query.types is None or kind in query.types

        rows: list = []
        if wanted("point"):
            for r in self._all(
                "SELECT m.abbreviation, tz.date, u.code, t.name, e.value "
                + base_join.format(table="point_elements") + suffix,
                params,
            ):
                rows.append(
                    (r[0], r[1], r[2], r[3], "point", 0,
                     ForecastRow(r[0], r[1], r[2], r[3], "point", value=_decode(r[4])))
                )
        if wanted("named"):
            for r in self._all(
                "SELECT m.abbreviation, tz.date, u.code, t.name, e.family, e.param1, e.param2 "
                + base_join.format(table="named_elements") + suffix,
                params,
            ):
                rows.append(
                    (r[0], r[1], r[2], r[3], "named", 0,
                     ForecastRow(r[0], r[1], r[2], r[3], "named",
                                 family=r[4], param1=r[5], param2=r[6]))
                )
        if wanted("bin"):
            for r in self._all(
                "SELECT m.abbreviation, tz.date, u.code, t.name, e.idx, e.cat, e.prob "
                + base_join.format(table="bin_elements") + suffix,
                params,
            ):
                rows.append(
                    (r[0], r[1], r[2], r[3], "bin", r[4],
                     ForecastRow(r[0], r[1], r[2], r[3], "bin",
                                 cat=_decode(r[5]), prob=r[6]))
                )
        if wanted("sample"):
            for r in self._all(
                "SELECT m.abbreviation, tz.date, u.code, t.name, e.idx, e.value "
                + base_join.format(table="sample_elements") + suffix,
                params,
            ):
                rows.append(
                    (r[0], r[1], r[2], r[3], "sample", r[4],
                     ForecastRow(r[0], r[1], r[2], r[3], "sample", sample=_decode(r[5])))
                )
        if wanted("quantile"):
            for r in self._all(
                "SELECT m.abbreviation, tz.date, u.code, t.name, e.idx, e.level, e.value "
                + base_join.format(table="quantile_elements") + suffix,
                params,
            ):
                rows.append(
                    (r[0], r[1], r[2], r[3], "quantile", r[4],
                     ForecastRow(r[0], r[1], r[2], r[3], "quantile",
                                 quantile=r[5], value=_decode(r[6])))
                )
        rows.sort(key=lambda item: (item[0], item[1], item[2], item[3],
                                    _KIND_RANK[item[4]], item[5]))
        return [item[6] for item in rows]

    # -- scores --------------------------------------------------------------------

    def replace_scores(
        self,
        project,
        records: Sequence[ScoreRecord],
        models: Optional[Iterable[str]] = None,
        score_families: Optional[Iterable[str]] = None,
    ) -> int:
        """Atomically replace the score records in the given scope.

        Scope is the cross product of ``models`` (all when None) and
        ``score_families`` (all when None); existing rows in scope are
        deleted and ``records`` inserted.
        """
        pid = self.project_id(project)
        model_ids = {
            r[1]: r[0]
            for r in self._all(
                "SELECT id, abbreviation FROM models WHERE project_id = ?", (pid,)
            )
        }
        unit_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, code FROM units WHERE project_id = ?", (pid,))
        }
        target_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, name FROM targets WHERE project_id = ?", (pid,))
        }
        tz_ids = {
            r[1]: r[0]
            for r in self._all("SELECT id, date FROM timezeros WHERE project_id = ?", (pid,))
        }
        with self._tx() as conn:
            sql = "DELETE FROM scores WHERE project_id = ?"
            params: list = [pid]
            skip_delete = False
            if models is not None:
                ids = [model_ids[m] for m in models if m in model_ids]
                if ids:
                    sql += " AND model_id IN (%s)" % ",".join("?" for _ in ids)
                    params.extend(ids)
                else:
                    skip_delete = True
            if score_families is not None:
                families = sorted(score_families)
                if families:
                    sql += " AND (" + " OR ".join(
                        "(score_id = ? OR score_id LIKE ?)" for _ in families
                    ) + ")"
                    for fam in families:
                        params.extend([fam, fam + "_%"])
                else:
                    skip_delete = True
            if not skip_delete:
                conn.execute(sql, params)
            conn.executemany(
                "INSERT OR REPLACE INTO scores VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                [
                    (
                        pid,
                        model_ids[r.model_id],
                        tz_ids[r.timezero.isoformat()],
                        unit_ids[r.unit],
                        target_ids[r.target],
                        r.score_id,
                        r.value,
                        r.flag,
                    )
                    for r in records
                ],
            )
        return len(records)

    def query_scores(
        self,
        project,
        models: Optional[Iterable[str]] = None,
        units: Optional[Iterable[str]] = None,
        targets: Optional[Iterable[str]] = None,
        timezeros: Optional[Iterable[str]] = None,
        scores: Optional[Iterable[str]] = None,
    ) -> list:
        """Score records matching every supplied filter, deterministically ordered."""
        pid = self.project_id(project)
        query = ForecastQuery(
            models=frozenset(models) if models else None,
            units=frozenset(units) if units else None,
            targets=frozenset(targets) if targets else None,
            timezeros=frozenset(timezeros) if timezeros else None,
        )
        self._check_filters(pid, query)
        rows = self._all(
            "SELECT m.abbreviation, tz.date, u.code, t.name, s.score_id, s.value, s.flag "
            "FROM scores s "
            "JOIN models m ON m.id = s.model_id "
            "JOIN timezeros tz ON tz.id = s.timezero_id "
            "JOIN units u ON u.id = s.unit_id "
            "JOIN targets t ON t.id = s.target_id "
            "WHERE s.project_id = ? "
            "ORDER BY m.abbreviation, tz.date, u.code, t.name, s.score_id",
            (pid,),
        )
        out = []
        score_filter = set(scores) if scores else None
        for model, date_text, unit, target, score_id, value, flag in rows:
            if query.models is not None and model not in query.models:
                continue
            if query.units is not None and unit not in query.units:
                continue
            if query.targets is not None and target not in query.targets:
                continue
            if query.timezeros is not None and date_text not in query.timezeros:
                continue
            if score_filter is not None and not any(
                score_id == f or score_id.startswith(f + "_") for f in score_filter
            ):
                continue
            out.append(
                ScoreRecord(
                    model_id=model,
                    timezero=datetime.date.fromisoformat(date_text),
                    unit=unit,
                    target=target,
                    score_id=score_id,
                    value=value,
                    flag=flag,
                )
            )
        return out

    def clear_scores(self, project) -> None:
        pid = self.project_id(project)
        with self._tx() as conn:
            conn.execute("DELETE FROM scores WHERE project_id = ?", (pid,))

    def score_families_for_model(self, project, model: str) -> list:
        """Score families applicable to a model's stored forecasts."""
        config = self.project_config(project)
        targets = config.target_map()
        families: set = set()
        for _model, _tz, document in self.forecasts_for_project(project, models=[model]):
            for record in document.predictions:
                target = targets[record.target]
                families.update(
                    scoring.applicable_scores(target.target_type, record.kind)
                )
        return sorted(families)

    # -- users ----------------------------------------------------------------------

    def create_user(self, username: str, password: str):
        from .auth import hash_password

        salt, pw_hash = hash_password(password)
        with self._tx() as conn:
            try:
                conn.execute(
                    "INSERT INTO users (username, salt, pw_hash) VALUES (?, ?, ?)",
                    (username, salt, pw_hash),
                )
            except sqlite3.IntegrityError:
                raise StoreError(f"duplicate username {username!r}") from None

    def verify_user(self, username: str, password: str) -> bool:
        from .auth import verify_password

        row = self._one("SELECT salt, pw_hash FROM users WHERE username = ?", (username,))
        if row is None:
            return False
        return verify_password(password, row[0], row[1])


def _wire(value):
    from .model import wire_value

    return wire_value(value)


class _Transaction:
    def __init__(self, conn, lock):
        self.conn = conn
        self.lock = lock

    def __enter__(self):
        self.lock.acquire()
        self.conn.execute("BEGIN IMMEDIATE")
        return self.conn

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.conn.execute("COMMIT")
            else:
                self.conn.execute("ROLLBACK")
        finally:
            self.lock.release()
        return False
