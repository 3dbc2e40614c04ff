import datetime
import random

import pytest

from forecast_archive.formats import parse_truth_csv
from forecast_archive.model import KIND_ORDER
from forecast_archive.store import (
    ForecastQuery,
    ForecastStore,
    ForecastValidationError,
    StoreError,
)

from conftest import MINIMAL_PAYLOADS, TARGET_BY_TYPE, document, record, weekly
from forecast_archive.model import TargetType

KIND_RANK = {k.value: i for i, k in enumerate(KIND_ORDER)}


@pytest.fixture
def store(tmp_path):
    s = ForecastStore(str(tmp_path / "archive.db"))
    yield s
    s.close()


def full_document():
    records = []
    for tt in TargetType:
        target = TARGET_BY_TYPE[tt]
        from forecast_archive.model import element_kinds_for

        for kind in element_kinds_for(tt):
            records.append(record("US", target, kind.value, MINIMAL_PAYLOADS[tt][kind.value]))
    return document(records)


class TestProjects:
    def test_persistence_round_trip(self, store, project_config, tmp_path):
        pid = store.create_project(project_config)
        store.close()
        reopened = ForecastStore(str(tmp_path / "archive.db"))
        assert reopened.project_config(pid) == project_config
        reopened.close()

    def test_duplicate_name(self, store, project_config):
        store.create_project(project_config)
        with pytest.raises(StoreError, match="duplicate project name"):
            store.create_project(project_config)

    def test_lookup_by_name(self, store, project_config):
        pid = store.create_project(project_config)
        assert store.project_id(project_config.name) == pid

    def test_large_config_accepted(self, store):
        from forecast_archive.formats import ProjectConfig
        from forecast_archive.model import TargetDefinition, TimeZero, Unit

        config = ProjectConfig(
            name="hub-scale",
            units=tuple(Unit(f"U{i:02d}") for i in range(57)),
            targets=tuple(
                TargetDefinition(
                    f"{k} wk ahead cases",
                    TargetType.DISCRETE,
                    is_step_ahead=True,
                    step_unit="week",
                    step_count=k,
                )
                for k in range(1, 121)
            ),
            timezeros=(TimeZero(weekly(0)),),
        )
        pid = store.create_project(config)
        assert len(store.project_config(pid).targets) == 120


class TestRegistration:
    def test_first_upload(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        key = store.register_forecast(mid, weekly(0), full_document())
        assert key.model_id == "mA"
        assert key.issued_at.tzinfo is not None
        assert store.audit_rows(pid) == []

    def test_replacement_appends_audit(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        first = store.register_forecast(mid, weekly(0), full_document())
        second = store.register_forecast(mid, weekly(0), full_document())
        assert second.forecast_id != first.forecast_id
        audit = store.audit_rows(pid)
        assert len(audit) == 1
        assert audit[0]["forecast_id"] == first.forecast_id
        assert audit[0]["issued_at"] == first.issued_at.isoformat(timespec="microseconds")
        # only one live forecast remains
        assert len(store.forecasts_for_project(pid)) == 1

    def test_unknown_timezero(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        with pytest.raises(StoreError, match="unknown timezero"):
            store.register_forecast(mid, datetime.date(1999, 1, 1), full_document())

    def test_validation_enforced(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        bad = document(
            [record("US", "severity", "bin",
                    {"cat": ["low", "moderate", "high"], "prob": [0.3, 0.3, 0.3]})]
        )
        with pytest.raises(ForecastValidationError) as err:
            store.register_forecast(mid, weekly(0), bad)
        assert [v.rule_id for v in err.value.violations] == ["BIN-SUM-001"]

    def test_issued_at_monotone(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        doc = full_document()
        stamps = [store.register_forecast(mid, weekly(0), doc).issued_at
                  for _ in range(10)]
        assert stamps == sorted(stamps)
        audit = store.audit_rows(pid)
        audit_stamps = [row["issued_at"] for row in audit]
        assert audit_stamps == sorted(audit_stamps)

    def test_document_round_trip(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        doc = full_document()
        key = store.register_forecast(mid, weekly(0), doc)
        assert store.forecast_document(key.forecast_id) == doc

    def test_atomic_rollback_on_failure(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        good = full_document()
        key = store.register_forecast(mid, weekly(0), good)
        broken = document([record("XX", "pct wk1", "point", {"value": 1.0})])
        with pytest.raises(Exception):
            store.register_forecast(mid, weekly(0), broken, run_validation=False)
        # the original forecast survives untouched
        assert store.forecast_document(key.forecast_id) == good
        assert len(store.forecasts_for_project(pid)) == 1

    def test_model_cascade(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        store.register_forecast(mid, weekly(0), full_document())
        with store._tx() as conn:
            conn.execute("DELETE FROM models WHERE id = ?", (mid,))
        assert store.forecasts_for_project(pid) == []
        assert store.query_forecasts(pid) == []


class TestTruth:
    CSV = (
        b"timezero,unit,target,value\n"
        b"2026-01-05,US,pct wk1,42.5\n"
        b"2026-01-05,US,cases wk2,12\n"
        b"2026-01-12,MA,severity,low\n"
    )

    def test_upload_and_read(self, store, project_config):
        pid = store.create_project(project_config)
        table = parse_truth_csv(self.CSV, project_config)
        assert store.upload_truth(pid, table) == 3
        rows = store.truth_records(pid)
        assert len(rows) == 3
        assert rows[0].value == 12  # ordered by timezero, unit, target

    def test_replacement(self, store, project_config):
        pid = store.create_project(project_config)
        store.upload_truth(pid, parse_truth_csv(self.CSV, project_config))
        smaller = parse_truth_csv(
            b"timezero,unit,target,value\n2026-01-05,US,pct wk1,43.0\n", project_config
        )
        assert store.upload_truth(pid, smaller) == 1
        rows = store.truth_records(pid)
        assert len(rows) == 1 and rows[0].value == 43.0

    def test_clearing(self, store, project_config):
        pid = store.create_project(project_config)
        store.upload_truth(pid, parse_truth_csv(self.CSV, project_config))
        empty = parse_truth_csv(b"timezero,unit,target,value\n", project_config)
        assert store.upload_truth(pid, empty) == 0
        assert store.truth_records(pid) == []


def _scan_oracle(stored, query: ForecastQuery):
    """Independent expectation: enumerate rows straight from the documents."""
    rows = []
    for model, timezero, doc in stored:
        if query.models is not None and model not in query.models:
            continue
        if query.timezeros is not None and timezero.isoformat() not in query.timezeros:
            continue
        for rec in doc.predictions:
            if query.units is not None and rec.unit not in query.units:
                continue
            if query.targets is not None and rec.target not in query.targets:
                continue
            if query.types is not None and rec.kind not in query.types:
                continue
            payload = rec.prediction
            if rec.kind == "point":
                cells = [("value", payload["value"])]
            elif rec.kind == "named":
                cells = [("family", payload["family"])]
            elif rec.kind == "bin":
                cells = [("cat", c) for c in payload["cat"]]
            elif rec.kind == "sample":
                cells = [("sample", v) for v in payload["sample"]]
            else:
                cells = [("quantile", q) for q in payload["quantile"]]
            for idx, _ in enumerate(cells):
                rows.append(
                    (model, timezero.isoformat(), rec.unit, rec.target,
                     KIND_RANK[rec.kind], idx)
                )
    return sorted(rows)


class TestQueries:
    def _populate(self, store, project_config):
        pid = store.create_project(project_config)
        stored = []
        for m in ("mA", "mB", "mC"):
            mid = store.add_model(pid, m)
            for k in range(5):
                doc = full_document()
                store.register_forecast(mid, weekly(k), doc)
                stored.append((m, weekly(k), doc))
        return pid, stored

    def test_filter_combination(self, store, project_config):
        pid, stored = self._populate(store, project_config)
        rows = store.query_forecasts(
            pid, ForecastQuery(models=frozenset({"mA"}), types=frozenset({"quantile"}))
        )
        assert rows and all(r.model == "mA" and r.kind == "quantile" for r in rows)

    def test_timezero_subset(self, store, project_config):
        pid, stored = self._populate(store, project_config)
        t3 = weekly(3).isoformat()
        rows = store.query_forecasts(pid, ForecastQuery(timezeros=frozenset({t3})))
        assert rows and all(r.timezero == t3 for r in rows)
        models = {r.model for r in rows}
        assert models == {"mA", "mB", "mC"}

    def test_empty_query_returns_all(self, store, project_config):
        pid, stored = self._populate(store, project_config)
        rows = store.query_forecasts(pid)
        assert len(rows) == len(_scan_oracle(stored, ForecastQuery()))

    def test_unknown_filter_values_reported(self, store, project_config):
        pid, _ = self._populate(store, project_config)
        with pytest.raises(StoreError, match="unknown models"):
            store.query_forecasts(pid, ForecastQuery(models=frozenset({"ghost"})))
        with pytest.raises(StoreError, match="unknown types"):
            store.query_forecasts(pid, ForecastQuery(types=frozenset({"histogram"})))

    def test_randomized_queries_match_scan(self, store, project_config):
        pid, stored = self._populate(store, project_config)
        rng = random.Random(42)
        all_models = ["mA", "mB", "mC"]
        all_units = ["US", "MA", "NY"]
        all_targets = list(TARGET_BY_TYPE.values())
        all_tz = [weekly(k).isoformat() for k in range(5)]
        all_kinds = list(KIND_RANK)
        for _ in range(25):
            def pick(values):
                if rng.random() < 0.4:
                    return None
                return frozenset(rng.sample(values, rng.randint(1, len(values))))

            query = ForecastQuery(
                models=pick(all_models),
                units=pick(all_units),
                targets=pick(all_targets),
                timezeros=pick(all_tz),
                types=pick(all_kinds),
            )
            rows = store.query_forecasts(pid, query)
            got = [
                (r.model, r.timezero, r.unit, r.target, KIND_RANK[r.kind])
                for r in rows
            ]
            expected = [row[:5] for row in _scan_oracle(stored, query)]
            assert got == expected

    def test_sample_order_preserved(self, store, project_config):
        pid = store.create_project(project_config)
        mid = store.add_model(pid, "mA")
        doc = document(
            [record("US", "cases wk2", "sample", {"sample": [30, 10, 20]})]
        )
        store.register_forecast(mid, weekly(0), doc)
        rows = store.query_forecasts(pid, ForecastQuery(types=frozenset({"sample"})))
        assert [r.sample for r in rows] == [30, 10, 20]


class TestUsers:
    def test_password_round_trip(self, store):
        store.create_user("alice", "s3cret")
        assert store.verify_user("alice", "s3cret")
        assert not store.verify_user("alice", "wrong")
        assert not store.verify_user("ghost", "s3cret")

    def test_duplicate_username(self, store):
        store.create_user("alice", "x")
        with pytest.raises(StoreError):
            store.create_user("alice", "y")
