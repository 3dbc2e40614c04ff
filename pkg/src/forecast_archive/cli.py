"""Operator and submitter command line.

Data commands run against either a local archive file (``--db PATH``) or a
running server (``--server URL`` plus a bearer token). Exit codes: 0
success, 1 usage or request error, 2-125 validation-error count (from
``forecast validate``), 126 I/O error, 127 server unreachable.

Environment: ``FORECAST_ARCHIVE_DB``, ``FORECAST_ARCHIVE_SERVER``,
``FORECAST_ARCHIVE_TOKEN``, ``FORECAST_ARCHIVE_TOKEN_FILE``.
"""

from __future__ import annotations

import datetime
import json
import sys
import time
import urllib.error
import urllib.request
from typing import Optional

import click

from .formats import (
    ConfigParseError,
    ForecastParseError,
    TruthParseError,
    parse_forecast,
    parse_project_config,
    parse_truth_csv,
    serialize_project_config,
    template_config,
)
from .scoring import score_project, scores_to_csv
from .store import (
    ForecastQuery,
    ForecastStore,
    ForecastValidationError,
    StoreError,
    forecast_rows_to_csv,
    forecast_rows_to_json,
)
from .validation import ERROR, validate_forecast, validate_truth


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _split_multi(values) -> Optional[list]:
    out: list = []
    for v in values:
        out.extend(p for p in v.split(",") if p)
    return out or None


class Remote:
    """Minimal HTTP client for the archive API."""

    def __init__(self, base_url: str, token: Optional[str]):
        self.base_url = base_url.rstrip("/")
        self.token = token

    def request(self, method: str, path: str, data: Optional[bytes] = None,
                content_type: str = "application/json") -> bytes:
        req = urllib.request.Request(self.base_url + path, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", content_type)
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            body = exc.read().decode("utf-8", "replace")
            try:
                message = json.loads(body)["error"]["message"]
            except Exception:
                message = body[:500]
            raise CliFailure(1, f"server returned {exc.code}: {message}") from None
        except urllib.error.URLError as exc:
            raise CliFailure(127, f"server unreachable: {exc.reason}") from None

    def json(self, method: str, path: str, payload=None) -> dict:
        data = json.dumps(payload).encode() if payload is not None else None
        return json.loads(self.request(method, path, data))

    def poll_job(self, job: dict, timeout: float = 300.0) -> dict:
        deadline = time.monotonic() + timeout
        while job["status"] in ("queued", "running"):
            if time.monotonic() > deadline:
                raise CliFailure(1, f"job {job['job_id']} did not finish in time")
            time.sleep(0.05)
            job = self.json("GET", f"/api/jobs/{job['job_id']}")
        return job

    def project_id(self, name_or_id: str) -> int:
        if name_or_id.isdigit():
            return int(name_or_id)
        for p in self.json("GET", "/api/projects"):
            if p["name"] == name_or_id:
                return p["id"]
        raise CliFailure(1, f"unknown project {name_or_id!r}")

    def model_id(self, project: str, abbreviation: str) -> int:
        pid = self.project_id(project)
        for m in self.json("GET", f"/api/projects/{pid}/models"):
            if m["abbreviation"] == abbreviation:
                return m["id"]
        raise CliFailure(1, f"unknown model {abbreviation!r}")


def _emit(ctx_obj: dict, payload: dict, text: str):
    if ctx_obj.get("json"):
        click.echo(json.dumps(payload, ensure_ascii=False))
    else:
        click.echo(text)


def _open_store(obj: dict) -> ForecastStore:
    if not obj.get("db"):
        raise CliFailure(1, "this command needs --db PATH (or --server URL where supported)")
    return ForecastStore(obj["db"])


def _remote(obj: dict) -> Optional[Remote]:
    if obj.get("server"):
        return Remote(obj["server"], obj.get("token"))
    return None


def _rescore(store: ForecastStore, project, models=None):
    """Local-mode equivalent of the server's scoring jobs."""
    config = store.project_config(project)
    truth = store.truth_records(project)
    if not truth:
        return 0
    names = models if models is not None else [
        m["abbreviation"] for m in store.list_models(project)
    ]
    total = 0
    for model in names:
        forecasts = store.forecasts_for_project(project, models=[model])
        records = score_project(config, truth, forecasts, models=[model])
        store.replace_scores(project, records, models=[model])
        total += len(records)
    return total


@click.group()
@click.option("--db", envvar="FORECAST_ARCHIVE_DB", default=None,
              help="Path to a local archive file.")
@click.option("--server", envvar="FORECAST_ARCHIVE_SERVER", default=None,
              help="Base URL of a running archive server.")
@click.option("--token", envvar="FORECAST_ARCHIVE_TOKEN", default=None,
              help="Bearer token for --server mode.")
@click.option("--token-file", envvar="FORECAST_ARCHIVE_TOKEN_FILE",
              type=click.Path(exists=False), default=None,
              help="File holding the bearer token.")
@click.option("--json", "json_out", is_flag=True, help="Machine-readable output.")
@click.pass_context
def cli(ctx, db, server, token, token_file, json_out):
    if token is None and token_file:
        try:
            with open(token_file, "r", encoding="utf-8") as fh:
                token = fh.read().strip()
        except OSError:
            token = None
    ctx.obj = {"db": db, "server": server, "token": token, "json": json_out}


# -- serve ---------------------------------------------------------------------


@cli.command()
@click.option("--db", "db_path", required=True, type=click.Path())
@click.option("--port", default=8417, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--user", "users", multiple=True, metavar="NAME:PASSWORD",
              help="Provision a login (repeatable).")
@click.option("--workers", default=None, type=int, help="Job worker pool size.")
@click.pass_obj
def serve(obj, db_path, port, host, users, workers):
    """Run the archive HTTP server over a local database."""
    import uvicorn

    from .service import create_app

    store = ForecastStore(db_path)
    for spec_text in users:
        name, _, password = spec_text.partition(":")
        if not name or not password:
            raise CliFailure(1, f"--user must be NAME:PASSWORD, got {spec_text!r}")
        try:
            store.create_user(name, password)
        except StoreError:
            pass  # existing login keeps its password
    app = create_app(store, workers=workers)
    uvicorn.run(app, host=host, port=port, log_level="warning")


# -- project -------------------------------------------------------------------


@cli.group()
def project():
    """Create projects and print config templates."""


@project.command("create")
@click.argument("config_file", type=click.Path(exists=True))
@click.pass_obj
def project_create(obj, config_file):
    with open(config_file, "rb") as fh:
        data = fh.read()
    remote = _remote(obj)
    if remote:
        created = json.loads(remote.request("POST", "/api/projects", data))
        _emit(obj, {"project_id": created["id"], "name": created["name"]},
              f"created project {created['name']!r} (id {created['id']})")
        return
    try:
        config = parse_project_config(data)
    except ConfigParseError as exc:
        raise CliFailure(1, f"config invalid: {exc}") from None
    store = _open_store(obj)
    try:
        pid = store.create_project(config)
    except StoreError as exc:
        raise CliFailure(1, str(exc)) from None
    _emit(obj, {"project_id": pid, "name": config.name},
          f"created project {config.name!r} (id {pid})")


@project.command("template")
def project_template():
    """Print a starter project config to stdout."""
    sys.stdout.write(serialize_project_config(template_config()).decode("utf-8"))


# -- model ---------------------------------------------------------------------


@cli.group()
def model():
    """Register models within a project."""


@model.command("add")
@click.option("--project", "project_ref", required=True)
@click.argument("abbreviation")
@click.option("--name", default="")
@click.option("--team", default="")
@click.pass_obj
def model_add(obj, project_ref, abbreviation, name, team):
    remote = _remote(obj)
    if remote:
        pid = remote.project_id(project_ref)
        created = remote.json(
            "POST", f"/api/projects/{pid}/models",
            {"abbreviation": abbreviation, "name": name, "team": team},
        )
        _emit(obj, {"model_id": created["id"]}, f"added model {abbreviation!r}")
        return
    store = _open_store(obj)
    try:
        mid = store.add_model(project_ref, abbreviation, name=name, team=team)
    except StoreError as exc:
        raise CliFailure(1, str(exc)) from None
    _emit(obj, {"model_id": mid}, f"added model {abbreviation!r} (id {mid})")


# -- forecast --------------------------------------------------------------------


@cli.group()
def forecast():
    """Upload and validate forecast documents."""


@forecast.command("upload")
@click.option("--project", "project_ref", required=True)
@click.option("--model", "model_ref", required=True)
@click.option("--timezero", required=True)
@click.option("--source", default="")
@click.argument("forecast_file", type=click.Path(exists=True))
@click.pass_obj
def forecast_upload(obj, project_ref, model_ref, timezero, source, forecast_file):
    try:
        tz = datetime.date.fromisoformat(timezero)
    except ValueError:
        raise CliFailure(1, f"--timezero must be ISO YYYY-MM-DD, got {timezero!r}") from None
    with open(forecast_file, "rb") as fh:
        data = fh.read()
    remote = _remote(obj)
    if remote:
        mid = remote.model_id(project_ref, model_ref)
        try:
            forecast_obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise CliFailure(1, f"forecast file is not JSON: {exc}") from None
        job = remote.json(
            "POST", f"/api/models/{mid}/forecasts",
            {"timezero": timezero, "forecast": forecast_obj, "source": source},
        )
        job = remote.poll_job(job)
        if job["status"] != "success":
            detail = json.dumps(job["detail"], indent=2)
            raise CliFailure(1, f"upload failed: {detail}")
        _emit(obj, job["detail"],
              f"registered forecast {job['detail']['forecast_id']} "
              f"(issued_at {job['detail']['issued_at']})")
        return
    store = _open_store(obj)
    try:
        document = parse_forecast(data)
    except ForecastParseError as exc:
        raise CliFailure(1, f"forecast JSON invalid: {exc}") from None
    try:
        mid = store.model_id_for(project_ref, model_ref)
        key = store.register_forecast(mid, tz, document, source=source)
    except ForecastValidationError as exc:
        lines = "\n".join(f"  {v.rule_id} [{v.unit}/{v.target}] {v.message}"
                          for v in exc.violations)
        raise CliFailure(1, f"forecast failed validation:\n{lines}") from None
    except StoreError as exc:
        raise CliFailure(1, str(exc)) from None
    _rescore(store, project_ref, models=[model_ref])
    _emit(obj, {"forecast_id": key.forecast_id,
                "issued_at": key.issued_at.isoformat(timespec="microseconds")},
          f"registered forecast {key.forecast_id} (issued_at {key.issued_at.isoformat()})")


@forecast.command("validate")
@click.option("--project", "project_ref", default=None,
              help="Project whose definition to validate against (--db/--server mode).")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None,
              help="Offline: validate against this project config file.")
@click.argument("forecast_file", type=click.Path(exists=True))
@click.pass_obj
def forecast_validate(obj, project_ref, config_file, forecast_file):
    """Validate a forecast without uploading.

    Exit code is the number of error-severity violations, capped at 125.
    """
    if config_file:
        with open(config_file, "rb") as fh:
            config = parse_project_config(fh.read())
    elif project_ref:
        remote = _remote(obj)
        if remote:
            pid = remote.project_id(project_ref)
            doc = remote.json("GET", f"/api/projects/{pid}")
            doc.pop("id", None)
            doc.pop("owners", None)
            config = parse_project_config(json.dumps(doc).encode())
        else:
            config = _open_store(obj).project_config(project_ref)
    else:
        raise CliFailure(1, "forecast validate needs --config FILE or --project P")
    with open(forecast_file, "rb") as fh:
        data = fh.read()
    try:
        document = parse_forecast(data)
    except ForecastParseError as exc:
        for issue in exc.issues:
            click.echo(str(issue), err=True)
        raise CliFailure(min(len(exc.issues), 125) or 1, "forecast JSON invalid") from None
    violations = validate_forecast(document, config)
    errors = [v for v in violations if v.severity == ERROR]
    if obj.get("json"):
        click.echo(json.dumps([v.to_json() for v in violations]))
    else:
        for v in violations:
            click.echo(f"{v.rule_id} [{v.unit}/{v.target}/{v.kind}] {v.message}")
        click.echo(f"{len(errors)} error(s), {len(violations) - len(errors)} warning(s)")
    if errors:
        raise click.exceptions.Exit(min(len(errors), 125))


# -- truth -----------------------------------------------------------------------


@cli.group()
def truth():
    """Upload observed values."""


@truth.command("upload")
@click.option("--project", "project_ref", required=True)
@click.argument("truth_file", type=click.Path(exists=True))
@click.pass_obj
def truth_upload(obj, project_ref, truth_file):
    with open(truth_file, "rb") as fh:
        data = fh.read()
    remote = _remote(obj)
    if remote:
        pid = remote.project_id(project_ref)
        job = json.loads(remote.request("POST", f"/api/projects/{pid}/truth", data,
                                        content_type="text/csv"))
        job = remote.poll_job(job)
        if job["status"] != "success":
            raise CliFailure(1, f"truth upload failed: {json.dumps(job['detail'])}")
        _emit(obj, job["detail"], f"uploaded {job['detail']['rows']} truth rows")
        return
    store = _open_store(obj)
    config = store.project_config(project_ref)
    try:
        table = parse_truth_csv(data, config)
    except TruthParseError as exc:
        raise CliFailure(1, f"truth CSV invalid: {exc}") from None
    warnings = validate_truth(table, config)
    count = store.upload_truth(project_ref, table)
    if count == 0:
        store.clear_scores(project_ref)
    else:
        _rescore(store, project_ref)
    payload = {
        "rows": count,
        "skipped": [i.to_json() for i in table.warnings],
        "warnings": [v.to_json() for v in warnings],
    }
    text = f"uploaded {count} truth rows"
    if table.warnings:
        text += f" ({len(table.warnings)} skipped)"
    for w in warnings:
        text += f"\nwarning {w.rule_id} [{w.unit}/{w.target}] {w.message}"
    _emit(obj, payload, text)


# -- query / scores -----------------------------------------------------------------


@cli.command("query")
@click.option("--project", "project_ref", required=True)
@click.option("--models", multiple=True)
@click.option("--units", multiple=True)
@click.option("--targets", multiple=True)
@click.option("--timezeros", multiple=True)
@click.option("--types", multiple=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_obj
def query(obj, project_ref, models, units, targets, timezeros, types, fmt, out_file):
    """Download the forecast rows matching the given filters."""
    filters = {
        "models": _split_multi(models),
        "units": _split_multi(units),
        "targets": _split_multi(targets),
        "timezeros": _split_multi(timezeros),
        "types": _split_multi(types),
    }
    remote = _remote(obj)
    if remote:
        pid = remote.project_id(project_ref)
        payload = {k: v for k, v in filters.items() if v is not None}
        payload["format"] = fmt
        job = remote.json("POST", f"/api/projects/{pid}/forecast_queries", payload)
        job = remote.poll_job(job)
        if job["status"] != "success":
            raise CliFailure(1, f"query failed: {json.dumps(job['detail'])}")
        data = remote.request("GET", f"/api/jobs/{job['job_id']}/result")
        row_count = job["detail"]["row_count"]
    else:
        store = _open_store(obj)
        fq = ForecastQuery(
            **{k: frozenset(v) for k, v in filters.items() if v is not None}
        )
        try:
            rows = store.query_forecasts(project_ref, fq)
        except StoreError as exc:
            raise CliFailure(1, str(exc)) from None
        data = forecast_rows_to_csv(rows) if fmt == "csv" else forecast_rows_to_json(rows)
        row_count = len(rows)
    with open(out_file, "wb") as fh:
        fh.write(data)
    _emit(obj, {"rows": row_count, "out": out_file},
          f"wrote {row_count} rows to {out_file}")


@cli.group()
def scores():
    """Download computed scores."""


@scores.command("download")
@click.option("--project", "project_ref", required=True)
@click.option("--models", multiple=True)
@click.option("--units", multiple=True)
@click.option("--targets", multiple=True)
@click.option("--timezeros", multiple=True)
@click.option("--scores", "score_ids", multiple=True)
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_obj
def scores_download(obj, project_ref, models, units, targets, timezeros, score_ids, out_file):
    remote = _remote(obj)
    if remote:
        pid = remote.project_id(project_ref)
        params = []
        for key, vals in (
            ("models", models), ("units", units), ("targets", targets),
            ("timezeros", timezeros), ("scores", score_ids),
        ):
            split = _split_multi(vals)
            if split:
                params.append(f"{key}={','.join(split)}")
        suffix = ("?" + "&".join(params)) if params else ""
        data = remote.request("GET", f"/api/projects/{pid}/scores{suffix}")
    else:
        store = _open_store(obj)
        try:
            records = store.query_scores(
                project_ref,
                models=_split_multi(models),
                units=_split_multi(units),
                targets=_split_multi(targets),
                timezeros=_split_multi(timezeros),
                scores=_split_multi(score_ids),
            )
        except StoreError as exc:
            raise CliFailure(1, str(exc)) from None
        data = scores_to_csv(records)
    with open(out_file, "wb") as fh:
        fh.write(data)
    rows = max(data.count(b"\n") - 1, 0)
    _emit(obj, {"rows": rows, "out": out_file}, f"wrote {rows} score rows to {out_file}")


# -- convert -------------------------------------------------------------------------


@cli.command("convert")
@click.option("--to", "to_kind", required=True,
              type=click.Choice(["bin", "sample", "quantile", "point"]))
@click.option("--categories", default=None,
              help="JSON array of bin categories (for --to bin).")
@click.option("--upper", default=None, type=float,
              help="Range upper bound closing the final interval bin.")
@click.option("--levels", default=None, help="Comma-separated quantile levels.")
@click.option("--n", "n_samples", default=None, type=int, help="Sample size.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--method", default="median", type=click.Choice(["median", "mean"]),
              show_default=True, help="Point method (for --to point).")
@click.argument("element_file", type=click.Path(exists=True))
def convert_cmd(to_kind, categories, upper, levels, n_samples, seed, method,
                element_file):
    """Convert one prediction element between representations.

    ELEMENT_FILE holds {"class": ..., "prediction": ...} using the forecast
    wire payload shapes; the converted element prints to stdout in the same
    shape.
    """
    from . import convert as cv
    from .formats import PredictionRecord, _payload_from_element, element_from_record
    from .model import TargetDefinition, TargetType

    with open(element_file, "rb") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliFailure(1, f"element file is not JSON: {exc}") from None
    if not isinstance(raw, dict) or "class" not in raw or "prediction" not in raw:
        raise CliFailure(1, 'element file must hold {"class": ..., "prediction": ...}')

    payload = raw["prediction"]
    values = []
    if raw["class"] == "sample":
        values = payload.get("sample", [])
    elif raw["class"] == "point":
        values = [payload.get("value")]
    elif raw["class"] == "quantile":
        values = payload.get("value", [])
    if any(isinstance(v, bool) for v in values):
        target_type = TargetType.BINARY
    elif any(isinstance(v, str) for v in values):
        target_type = TargetType.NOMINAL
    elif all(isinstance(v, int) for v in values) and values:
        target_type = TargetType.DISCRETE
    else:
        target_type = TargetType.CONTINUOUS
    target = TargetDefinition("element", target_type)
    try:
        element = element_from_record(
            PredictionRecord("-", "-", raw["class"], payload), target
        )
        if to_kind == "point":
            out = cv.to_point(element, method)
        elif to_kind == "quantile":
            if not levels:
                raise CliFailure(1, "--to quantile needs --levels")
            level_list = [float(x) for x in levels.split(",") if x]
            if isinstance(element, cv.Sample):
                out = cv.sample_to_quantile(element, level_list)
            elif isinstance(element, cv.Named):
                out = cv.named_to_quantile(element, level_list)
            else:
                raise CliFailure(1, f"cannot derive quantiles from {raw['class']}")
        elif to_kind == "sample":
            if not isinstance(element, cv.Named):
                raise CliFailure(1, "only named elements convert to samples")
            if not n_samples:
                raise CliFailure(1, "--to sample needs --n")
            out = cv.named_to_sample(element, n_samples, seed)
        else:
            if categories is None:
                raise CliFailure(1, "--to bin needs --categories")
            try:
                cats = json.loads(categories)
            except json.JSONDecodeError as exc:
                raise CliFailure(1, f"--categories must be a JSON array: {exc}") from None
            if isinstance(element, cv.Named):
                out = cv.named_to_bin(element, cats, upper=upper)
            elif isinstance(element, cv.Sample):
                out = cv.sample_to_bin(element, cats, upper=upper)
            else:
                raise CliFailure(1, f"cannot bin a {raw['class']} element")
    except (cv.ConversionError, ValueError) as exc:
        raise CliFailure(1, str(exc)) from None
    click.echo(json.dumps({"class": out.kind.value,
                           "prediction": _payload_from_element(out)}))


# -- plot data ------------------------------------------------------------------------


@cli.command("plot-data")
@click.option("--project", "project_ref", required=True)
@click.option("--unit", required=True)
@click.option("--target-prefix", "prefix", required=True)
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_obj
def plot_data(obj, project_ref, unit, prefix, out_file):
    """Export a truth series and per-model step-ahead point forecasts.

    Step-ahead targets sharing the name prefix form one trace per
    (model, timezero), ready for external time-series plotting.
    """
    if _remote(obj):
        raise CliFailure(1, "plot-data reads truth and needs --db (local mode)")
    store = _open_store(obj)
    config = store.project_config(project_ref)
    targets = sorted(
        (t for t in config.targets if t.is_step_ahead and t.name.startswith(prefix)),
        key=lambda t: (t.step_count, t.name),
    )
    if not targets:
        raise CliFailure(1, f"no step-ahead targets with prefix {prefix!r}")
    names = {t.name: t for t in targets}
    if unit not in config.unit_map():
        raise CliFailure(1, f"unknown unit {unit!r}")

    truth_series = [
        {"timezero": row.timezero.isoformat(), "target": row.target,
         "value": _plot_value(row.value)}
        for row in store.truth_records(project_ref)
        if row.unit == unit and row.target in names
    ]
    rows = store.query_forecasts(
        project_ref,
        ForecastQuery(units=frozenset({unit}), targets=frozenset(names),
                      types=frozenset({"point"})),
    )
    traces: dict = {}
    for row in rows:
        traces.setdefault((row.model, row.timezero), []).append(
            {"target": row.target, "step_count": names[row.target].step_count,
             "value": row.value}
        )
    forecasts = [
        {"model": model, "timezero": timezero,
         "points": sorted(points, key=lambda p: p["step_count"])}
        for (model, timezero), points in sorted(traces.items())
    ]
    doc = {
        "unit": unit,
        "target_prefix": prefix,
        "targets": [
            {"name": t.name, "step_count": t.step_count, "step_unit": t.step_unit}
            for t in targets
        ],
        "truth": truth_series,
        "forecasts": forecasts,
    }
    with open(out_file, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    _emit(obj, {"truth_points": len(truth_series), "traces": len(forecasts)},
          f"wrote {len(truth_series)} truth points and {len(forecasts)} traces to {out_file}")


def _plot_value(value):
    if isinstance(value, datetime.date):
        return value.isoformat()
    return value


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        if isinstance(rv, int):
            return rv
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except CliFailure as exc:
        click.echo(str(exc), err=True)
        return exc.code
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        return 126
    return 0


if __name__ == "__main__":
    sys.exit(main())
