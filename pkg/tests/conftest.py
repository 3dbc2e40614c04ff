import datetime
import json

import pytest

from forecast_archive.formats import ProjectConfig, parse_forecast
from forecast_archive.model import TargetDefinition, TargetType, TimeZero, Unit

WEEK0 = datetime.date(2026, 1, 5)


def weekly(k: int) -> datetime.date:
    return WEEK0 + datetime.timedelta(weeks=k)


@pytest.fixture
def project_config() -> ProjectConfig:
    """3 units, one target per target type, 5 weekly timezeros."""
    return ProjectConfig(
        name="flu-exercise",
        description="test project",
        visibility="public",
        units=(Unit("US", "national"), Unit("MA", "Massachusetts"), Unit("NY", "New York")),
        targets=(
            TargetDefinition(
                name="pct wk1",
                target_type=TargetType.CONTINUOUS,
                range=(0.0, 100.0),
                categories=tuple(float(x) for x in range(0, 100, 10)),
                is_step_ahead=True,
                step_unit="week",
                step_count=1,
            ),
            TargetDefinition(
                name="cases wk2",
                target_type=TargetType.DISCRETE,
                range=(0, 1000),
                categories=tuple(range(0, 51)),
                is_step_ahead=True,
                step_unit="week",
                step_count=2,
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
                categories=tuple(weekly(k) for k in range(8)),
            ),
        ),
        timezeros=tuple(TimeZero(weekly(k)) for k in range(5)),
    )


def record(unit, target, kind, payload):
    return {"unit": unit, "target": target, "class": kind, "prediction": payload}


def document_bytes(records) -> bytes:
    return json.dumps({"predictions": list(records)}).encode()


def document(records):
    return parse_forecast(document_bytes(records))


#: A structurally minimal valid payload for each element kind, per target type.
MINIMAL_PAYLOADS = {
    TargetType.CONTINUOUS: {
        "point": {"value": 42.5},
        "named": {"family": "norm", "param1": 40.0, "param2": 5.0},
        "bin": {"cat": [float(x) for x in range(0, 100, 10)], "prob": [0.1] * 10},
        "sample": {"sample": [35.0, 41.0, 44.5]},
        "quantile": {"quantile": [0.25, 0.5, 0.75], "value": [35.0, 42.0, 50.0]},
    },
    TargetType.DISCRETE: {
        "point": {"value": 12},
        "named": {"family": "pois", "param1": 10.0},
        "bin": {"cat": [10, 11, 12], "prob": [0.3, 0.4, 0.3]},
        "sample": {"sample": [9, 12, 15]},
        "quantile": {"quantile": [0.25, 0.5, 0.75], "value": [8, 12, 17]},
    },
    TargetType.NOMINAL: {
        "point": {"value": "moderate"},
        "named": {"family": "norm", "param1": 0.0, "param2": 1.0},
        "bin": {"cat": ["low", "moderate", "high"], "prob": [0.2, 0.5, 0.3]},
        "sample": {"sample": ["low", "moderate", "moderate"]},
        "quantile": {"quantile": [0.25, 0.75], "value": ["low", "moderate"]},
    },
    TargetType.BINARY: {
        "point": {"value": True},
        "named": {"family": "norm", "param1": 0.0, "param2": 1.0},
        "bin": {"cat": [True], "prob": [0.7]},
        "sample": {"sample": [True, False, True]},
        "quantile": {"quantile": [0.25, 0.75], "value": [False, True]},
    },
    TargetType.DATE: {
        "point": {"value": "2026-01-19"},
        "named": {"family": "norm", "param1": 0.0, "param2": 1.0},
        "bin": {
            "cat": [weekly(k).isoformat() for k in range(8)],
            "prob": [0.125] * 8,
        },
        "sample": {"sample": ["2026-01-12", "2026-01-19", "2026-01-19"]},
        "quantile": {
            "quantile": [0.25, 0.5, 0.75],
            "value": ["2026-01-12", "2026-01-19", "2026-01-26"],
        },
    },
}

TARGET_BY_TYPE = {
    TargetType.CONTINUOUS: "pct wk1",
    TargetType.DISCRETE: "cases wk2",
    TargetType.NOMINAL: "severity",
    TargetType.BINARY: "above baseline",
    TargetType.DATE: "peak week",
}
