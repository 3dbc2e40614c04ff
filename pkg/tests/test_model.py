import datetime

import pytest

from forecast_archive.model import (
    Bin,
    ElementKind,
    Forecast,
    ModelError,
    Named,
    NamedFamily,
    Point,
    Quantile,
    Sample,
    TargetDefinition,
    TargetType,
    TimeZero,
    Unit,
    element_kinds_for,
    named_families_for,
)

# element-kind validity, cell by cell
MATRIX = {
    TargetType.CONTINUOUS: {"point", "bin", "sample", "quantile", "named"},
    TargetType.DISCRETE: {"point", "bin", "sample", "quantile", "named"},
    TargetType.BINARY: {"point", "bin", "sample"},
    TargetType.DATE: {"point", "bin", "sample", "quantile"},
    TargetType.NOMINAL: {"point", "bin", "sample"},
}


@pytest.mark.parametrize("target_type", list(TargetType))
@pytest.mark.parametrize("kind", list(ElementKind))
def test_element_kind_matrix_cell(target_type, kind):
    expected = kind.value in MATRIX[target_type]
    assert (kind in element_kinds_for(target_type)) is expected


@pytest.mark.parametrize(
    "target_type,expected",
    [
        (TargetType.CONTINUOUS, {"norm", "lnorm", "gamma"}),
        (TargetType.DISCRETE, {"pois", "negbin", "binom"}),
        (TargetType.NOMINAL, set()),
        (TargetType.BINARY, set()),
        (TargetType.DATE, set()),
    ],
)
def test_named_families(target_type, expected):
    assert {f.value for f in named_families_for(target_type)} == expected


class TestTargetDefinition:
    def test_range_must_be_ordered(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.CONTINUOUS, range=(10.0, 1.0))

    def test_range_not_allowed_for_nominal(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.NOMINAL, range=(0, 1))

    def test_categories_strictly_increasing_for_ordered(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.DISCRETE, categories=(3, 1, 2))

    def test_nominal_categories_distinct(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.NOMINAL, categories=("a", "a"))
        t = TargetDefinition("t", TargetType.NOMINAL, categories=("b", "a"))
        assert t.categories == ("b", "a")

    def test_categories_within_range(self):
        with pytest.raises(ModelError):
            TargetDefinition(
                "t", TargetType.CONTINUOUS, range=(0.0, 10.0), categories=(0.0, 20.0)
            )

    def test_category_type_checked(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.DISCRETE, categories=(0, 1, "a"))

    def test_step_ahead_requires_count(self):
        with pytest.raises(ModelError):
            TargetDefinition("t", TargetType.CONTINUOUS, is_step_ahead=True)
        t = TargetDefinition(
            "t", TargetType.CONTINUOUS, is_step_ahead=True, step_unit="week", step_count=0
        )
        assert t.step_count == 0

    def test_date_range(self):
        t = TargetDefinition(
            "t",
            TargetType.DATE,
            range=("2026-01-01", "2026-03-01"),
        )
        assert t.range == (datetime.date(2026, 1, 1), datetime.date(2026, 3, 1))


class TestElements:
    def test_bin_probability_bounds(self):
        with pytest.raises(ModelError):
            Bin(((0.0, 1.2), (1.0, -0.2)))

    def test_bin_sum_tolerance(self):
        with pytest.raises(ModelError):
            Bin(((0.0, 0.3), (1.0, 0.3), (2.0, 0.3)))
        Bin(((0.0, 0.5), (1.0, 0.5005)))  # inside the default 1e-3 tolerance

    def test_bin_single_true_exception(self):
        b = Bin(((True, 0.7),))
        assert b.probability_of(True) == 0.7
        assert b.probability_of(False) == pytest.approx(0.3)

    def test_bin_duplicate_categories(self):
        with pytest.raises(ModelError):
            Bin((("a", 0.5), ("a", 0.5)))

    def test_sample_non_empty_and_order_preserved(self):
        with pytest.raises(ModelError):
            Sample(())
        assert Sample((3, 1, 2)).values == (3, 1, 2)

    def test_quantile_levels_open_interval(self):
        with pytest.raises(ModelError):
            Quantile(((0.0, 1.0), (0.5, 2.0)))
        with pytest.raises(ModelError):
            Quantile(((0.5, 1.0), (1.0, 2.0)))

    def test_quantile_levels_strictly_increasing(self):
        with pytest.raises(ModelError):
            Quantile(((0.5, 1.0), (0.25, 2.0)))

    def test_quantile_values_non_decreasing(self):
        with pytest.raises(ModelError):
            Quantile(((0.25, 30.0), (0.75, 20.0)))
        q = Quantile(((0.25, 10.0), (0.75, 10.0)))
        assert q.values == (10.0, 10.0)

    @pytest.mark.parametrize(
        "family,params",
        [
            (NamedFamily.NORM, (0.0, -1.0)),
            (NamedFamily.LNORM, (0.0, 0.0)),
            (NamedFamily.GAMMA, (0.0, 1.0)),
            (NamedFamily.GAMMA, (1.0, -2.0)),
            (NamedFamily.POIS, (0.0,)),
            (NamedFamily.POIS, (1.0, 2.0)),
            (NamedFamily.NEGBIN, (5.0, 0.0)),
            (NamedFamily.NEGBIN, (0.0, 0.5)),
            (NamedFamily.BINOM, (2.5, 0.5)),
            (NamedFamily.BINOM, (10.0, 1.5)),
        ],
    )
    def test_named_parameter_constraints(self, family, params):
        with pytest.raises(ModelError):
            Named(family, params)

    def test_named_valid(self):
        n = Named(NamedFamily.NEGBIN, (5, 1.0))
        assert n.params == (5.0, 1.0)
        assert Named(NamedFamily.POIS, (2,)).param2 is None

    def test_point_finite(self):
        with pytest.raises(ModelError):
            Point(float("inf"))


class TestForecastAndMeta:
    def test_unit_code_required(self):
        with pytest.raises(ModelError):
            Unit("")

    def test_timezero_date(self):
        tz = TimeZero(datetime.date(2026, 1, 5))
        assert tz.data_version_date is None

    def test_forecast_one_element_per_kind(self):
        issued = datetime.datetime(2026, 1, 5, tzinfo=datetime.timezone.utc)
        with pytest.raises(ModelError):
            Forecast(
                model_id="m",
                timezero=datetime.date(2026, 1, 5),
                issued_at=issued,
                predictions={("US", "t"): (Point(1.0), Point(2.0))},
            )
        f = Forecast(
            model_id="m",
            timezero=datetime.date(2026, 1, 5),
            issued_at=issued,
            predictions={("US", "t"): (Point(1.0), Sample((1.0, 2.0)))},
        )
        assert len(f.elements_for("US", "t")) == 2

    def test_forecast_issued_at_must_be_aware(self):
        with pytest.raises(ModelError):
            Forecast(
                model_id="m",
                timezero=datetime.date(2026, 1, 5),
                issued_at=datetime.datetime(2026, 1, 5),
                predictions={},
            )
