import datetime
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecast_archive.formats import (
    ConfigParseError,
    ForecastDocument,
    ForecastParseError,
    PredictionRecord,
    TruthParseError,
    parse_forecast,
    parse_project_config,
    parse_truth_csv,
    serialize_forecast,
    serialize_project_config,
    template_config,
)

from conftest import document_bytes, record


class TestParseForecast:
    def test_minimal_point(self):
        doc = parse_forecast(
            document_bytes([record("US", "wk1", "point", {"value": 55})])
        )
        assert doc.predictions == (
            PredictionRecord("US", "wk1", "point", {"value": 55}),
        )

    def test_bin_shape(self):
        doc = parse_forecast(
            document_bytes([record("US", "wk1", "bin", {"cat": [0, 10], "prob": [0.4, 0.6]})])
        )
        (rec,) = doc.predictions
        assert rec.prediction == {"cat": [0, 10], "prob": [0.4, 0.6]}

    def test_missing_fields_reported_together(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(b'{"predictions":[{"class":"point"}]}')
        codes = {(i.code, i.location) for i in err.value.issues}
        assert ("KEY-MISSING", "$.predictions[0].unit") in codes
        assert ("KEY-MISSING", "$.predictions[0].target") in codes
        assert ("KEY-MISSING", "$.predictions[0].prediction") in codes

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(b'{"predictions":[],"issued_at":"2020-01-01"}')
        assert err.value.issues[0].code == "UNKNOWN-KEY"

    def test_unknown_class(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(document_bytes([record("US", "t", "histogram", {"value": 1})]))
        assert {i.code for i in err.value.issues} == {"CLASS-UNKNOWN"}

    def test_payload_class_mismatch(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(document_bytes([record("US", "t", "point", {"sample": [1]})]))
        codes = {i.code for i in err.value.issues}
        assert "UNKNOWN-KEY" in codes and "KEY-MISSING" in codes

    def test_bin_length_mismatch(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(
                document_bytes([record("US", "t", "bin", {"cat": [1, 2], "prob": [1.0]})])
            )
        assert any(i.code == "PAYLOAD-SHAPE" for i in err.value.issues)

    def test_malformed_json(self):
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(b"{not json")
        assert err.value.issues[0].code == "JSON-MALFORMED"

    def test_null_prediction_parses(self):
        doc = parse_forecast(document_bytes([record("US", "t", "point", None)]))
        assert doc.predictions[0].prediction is None

    def test_non_finite_rejected(self):
        with pytest.raises(ForecastParseError):
            parse_forecast(
                document_bytes([record("US", "t", "sample", {"sample": [1.0, float("inf")]})])
            )

    def test_every_issue_has_code_and_location(self):
        bad = [
            record("US", "t", "point", {"value": [1]}),
            record("", "t", "point", {"value": 1}),
            record("US", "t", "quantile", {"quantile": [0.5], "value": [1], "x": 2}),
        ]
        with pytest.raises(ForecastParseError) as err:
            parse_forecast(document_bytes(bad))
        for issue in err.value.issues:
            assert issue.code and issue.location.startswith("$")


class TestSerializeForecast:
    def test_sample_order_preserved(self):
        doc = parse_forecast(
            document_bytes([record("US", "t", "sample", {"sample": [3, 1, 2]})])
        )
        data = serialize_forecast(doc)
        assert json.loads(data)["predictions"][0]["prediction"]["sample"] == [3, 1, 2]

    def test_date_strings_survive(self):
        doc = parse_forecast(
            document_bytes([record("US", "t", "point", {"value": "2020-05-31"})])
        )
        assert b'"2020-05-31"' in serialize_forecast(doc)

    def test_deterministic(self):
        doc = parse_forecast(
            document_bytes(
                [
                    record("US", "t", "named", {"family": "norm", "param1": 0.1, "param2": 2.5}),
                    record("US", "t", "bin", {"cat": [0.0, 1.5], "prob": [0.25, 0.75]}),
                ]
            )
        )
        assert serialize_forecast(doc) == serialize_forecast(doc)


_scalars = st.one_of(
    st.integers(min_value=-10**9, max_value=10**9),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(min_size=0, max_size=12),
    st.booleans(),
)
_levels = st.lists(
    st.floats(min_value=0.001, max_value=0.999, allow_nan=False),
    min_size=1,
    max_size=6,
    unique=True,
).map(sorted)


@st.composite
def _records(draw):
    unit = draw(st.text(min_size=1, max_size=6))
    target = draw(st.text(min_size=1, max_size=6))
    kind = draw(st.sampled_from(["point", "named", "bin", "sample", "quantile"]))
    if kind == "point":
        payload = {"value": draw(_scalars)}
    elif kind == "named":
        payload = {"family": draw(st.sampled_from(["norm", "lnorm", "gamma"])),
                   "param1": draw(st.floats(-100, 100, allow_nan=False)),
                   "param2": draw(st.floats(0.01, 100, allow_nan=False))}
    elif kind == "bin":
        n = draw(st.integers(1, 5))
        payload = {
            "cat": draw(st.lists(_scalars, min_size=n, max_size=n)),
            "prob": draw(
                st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)
            ),
        }
    elif kind == "sample":
        payload = {"sample": draw(st.lists(_scalars, min_size=1, max_size=8))}
    else:
        levels = draw(_levels)
        payload = {
            "quantile": levels,
            "value": draw(st.lists(_scalars, min_size=len(levels), max_size=len(levels))),
        }
    return {"unit": unit, "target": target, "class": kind, "prediction": payload}


@given(st.lists(_records(), max_size=8))
@settings(max_examples=120, deadline=None)
def test_round_trip_property(records):
    doc = parse_forecast(document_bytes(records))
    data = serialize_forecast(doc)
    assert parse_forecast(data) == doc
    assert serialize_forecast(parse_forecast(data)) == data


class TestTruthCsv:
    HEADER = b"timezero,unit,target,value\n"

    def test_typed_rows(self, project_config):
        data = self.HEADER + (
            b"2026-01-05,US,cases wk2,34\n"
            b"2026-01-05,US,pct wk1,12.5\n"
            b"2026-01-05,US,above baseline,true\n"
            b"2026-01-05,US,peak week,2026-01-19\n"
            b"2026-01-05,US,severity,high\n"
        )
        table = parse_truth_csv(data, project_config)
        values = {row.target: row.value for row in table.rows}
        assert values["cases wk2"] == 34 and isinstance(values["cases wk2"], int)
        assert values["pct wk1"] == 12.5
        assert values["above baseline"] is True
        assert values["peak week"] == datetime.date(2026, 1, 19)
        assert values["severity"] == "high"

    def test_type_mismatch(self, project_config):
        with pytest.raises(TruthParseError) as err:
            parse_truth_csv(self.HEADER + b"2026-01-05,US,peak week,12.5\n", project_config)
        assert err.value.issues[0].code == "TYPE-MISMATCH"

    def test_float_rejected_for_discrete(self, project_config):
        with pytest.raises(TruthParseError):
            parse_truth_csv(self.HEADER + b"2026-01-05,US,cases wk2,12.5\n", project_config)

    def test_duplicate_triple(self, project_config):
        data = self.HEADER + b"2026-01-05,US,pct wk1,1.0\n2026-01-05,US,pct wk1,2.0\n"
        with pytest.raises(TruthParseError) as err:
            parse_truth_csv(data, project_config)
        assert err.value.issues[0].code == "DUPLICATE-ROW"

    def test_unknown_reference_skipped_with_warning(self, project_config):
        data = self.HEADER + b"2026-01-05,XX,pct wk1,1.0\n2026-01-05,US,pct wk1,2.0\n"
        table = parse_truth_csv(data, project_config)
        assert len(table.rows) == 1
        assert len(table.warnings) == 1
        assert table.warnings[0].code == "UNKNOWN-REF"

    def test_bad_header(self, project_config):
        with pytest.raises(TruthParseError) as err:
            parse_truth_csv(b"timezero,unit,target\n", project_config)
        assert err.value.issues[0].code == "HEADER"

    def test_quoted_fields(self, project_config):
        data = self.HEADER + b'2026-01-05,US,severity,"high"\n'
        table = parse_truth_csv(data, project_config)
        assert table.rows[0].value == "high"


class TestProjectConfig:
    def test_template_round_trips(self):
        config = template_config()
        data = serialize_project_config(config)
        assert parse_project_config(data) == config

    def test_minimal_config(self):
        doc = {
            "name": "p",
            "units": [{"code": "US"}],
            "targets": [{"name": "t", "type": "continuous"}],
            "timezeros": [{"date": "2026-01-05"}],
        }
        config = parse_project_config(json.dumps(doc).encode())
        assert config.units[0].code == "US"
        assert config.targets[0].target_type.value == "continuous"

    def test_category_type_mismatch(self):
        doc = {
            "name": "p",
            "units": [],
            "targets": [{"name": "t", "type": "discrete", "categories": [0, 1, "a"]}],
            "timezeros": [],
        }
        with pytest.raises(ConfigParseError) as err:
            parse_project_config(json.dumps(doc).encode())
        assert any(i.code == "TARGET-INVALID" for i in err.value.issues)

    def test_duplicate_timezero(self):
        doc = {
            "name": "p",
            "units": [],
            "targets": [],
            "timezeros": [{"date": "2026-01-05"}, {"date": "2026-01-05"}],
        }
        with pytest.raises(ConfigParseError) as err:
            parse_project_config(json.dumps(doc).encode())
        assert any(i.code == "DUPLICATE" for i in err.value.issues)

    def test_duplicate_unit_and_target(self):
        doc = {
            "name": "p",
            "units": [{"code": "US"}, {"code": "US"}],
            "targets": [
                {"name": "t", "type": "binary"},
                {"name": "t", "type": "nominal"},
            ],
            "timezeros": [],
        }
        with pytest.raises(ConfigParseError) as err:
            parse_project_config(json.dumps(doc).encode())
        locations = {i.location for i in err.value.issues}
        assert "$.units[1].code" in locations
        assert "$.targets[1].name" in locations

    def test_unknown_key_has_field_path(self):
        doc = {"name": "p", "surprise": 1, "units": [], "targets": [], "timezeros": []}
        with pytest.raises(ConfigParseError) as err:
            parse_project_config(json.dumps(doc).encode())
        assert err.value.issues[0].location == "$.surprise"


def test_document_size_guard(monkeypatch):
    import forecast_archive.formats as formats

    monkeypatch.setattr(formats, "MAX_DOCUMENT_BYTES", 64)
    data = document_bytes([record("US", "t", "point", {"value": 1})])
    assert len(data) > 64
    with pytest.raises(ForecastParseError) as err:
        parse_forecast(data)
    assert err.value.issues[0].code == "DOC-TOO-LARGE"
