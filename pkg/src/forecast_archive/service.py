"""Token-authenticated HTTP interface over the forecast store.

Routes (all JSON unless noted):

- ``POST /api/token`` — credentials to bearer token (JWT, HS256)
- ``GET|POST /api/projects`` — list / create projects
- ``GET|DELETE /api/projects/{id}``
- ``GET|POST /api/projects/{id}/models`` — list / register models
- ``GET /api/models/{id}``
- ``POST /api/models/{id}/forecasts`` — async upload, returns a job
- ``GET /api/forecasts/{id}/data`` — canonical forecast JSON
- ``POST /api/projects/{id}/truth`` — async truth CSV upload, returns a job
- ``POST /api/projects/{id}/forecast_queries`` — async query, job result file
- ``GET /api/projects/{id}/scores`` — filtered score CSV
- ``GET /api/jobs/{id}`` and ``GET /api/jobs/{id}/result``

Uploads are asynchronous: validation plus writing of large forecasts should
not hold the HTTP connection, so POST returns a job to poll. Failed
validation surfaces as a failed job whose detail carries the violation
list. Errors use the envelope ``{"error": {"code", "message", ...}}`` with
401 (unauthenticated), 403 (unauthorized), 404 (unknown resource), or 400.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import jobs as jobmod
from .auth import DEFAULT_TOKEN_LIFETIME, AuthError, issue_token, verify_token
from .formats import (
    ConfigParseError,
    ForecastParseError,
    TruthParseError,
    parse_forecast_json,
    parse_project_config,
    parse_truth_csv,
    serialize_project_config,
)
from .jobs import JobFailure, JobQueue
from .scoring import score_project, scores_to_csv
from .store import (
    ForecastQuery,
    ForecastStore,
    ForecastValidationError,
    StoreError,
    forecast_rows_to_csv,
    forecast_rows_to_json,
)
from .validation import validate_truth


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, extra: Optional[dict] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.extra = extra or {}

    def body(self) -> dict:
        error = {"code": self.code, "message": str(self)}
        error.update(self.extra)
        return {"error": error}


def create_app(
    store: ForecastStore,
    secret: Optional[bytes] = None,
    token_lifetime: int = DEFAULT_TOKEN_LIFETIME,
    workers: Optional[int] = None,
) -> FastAPI:
    """Build the service around an open store.

    ``secret`` signs bearer tokens (randomly generated per process when
    omitted); ``workers`` bounds the job worker pool (default: processor
    count).
    """
    secret = secret or os.urandom(32)
    queue = JobQueue(workers=workers)

    @asynccontextmanager
    async def lifespan(app0: FastAPI):
        queue.start()
        try:
            yield
        finally:
            queue.stop()

    app = FastAPI(lifespan=lifespan, docs_url=None, redoc_url=None, openapi_url=None)
    app.state.store = store
    app.state.queue = queue

    # -- helpers ----------------------------------------------------------------

    def subject_of(request: Request) -> Optional[str]:
        header = request.headers.get("authorization")
        if header is None:
            return None
        if not header.lower().startswith("bearer "):
            raise ApiError(401, "AUTH-SCHEME", "expected 'Authorization: Bearer <token>'")
        try:
            return verify_token(secret, header[7:].strip())
        except AuthError as exc:
            raise ApiError(401, "AUTH-TOKEN", str(exc)) from None

    def require_subject(request: Request) -> str:
        subject = subject_of(request)
        if subject is None:
            raise ApiError(401, "AUTH-REQUIRED", "this route requires a bearer token")
        return subject

    def check_read(project_info: dict, subject: Optional[str]):
        if project_info["visibility"] == "public":
            return
        if subject is None:
            raise ApiError(401, "AUTH-REQUIRED", "private project requires a bearer token")
        if project_info["owners"] and subject not in project_info["owners"]:
            raise ApiError(403, "FORBIDDEN", "not an owner of this private project")

    def check_owner(project_info: dict, subject: str):
        if project_info["owners"] and subject not in project_info["owners"]:
            raise ApiError(403, "FORBIDDEN", "not an owner of this project")

    async def json_body(request: Request) -> dict:
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise ApiError(400, "JSON-MALFORMED", str(exc)) from None
        if not isinstance(body, dict):
            raise ApiError(400, "BODY-SHAPE", "request body must be a JSON object")
        return body

    def paginate(request: Request, items: list) -> list:
        try:
            offset = int(request.query_params.get("offset", 0))
            limit_text = request.query_params.get("limit")
            limit = int(limit_text) if limit_text is not None else None
        except ValueError:
            raise ApiError(400, "PAGINATION", "limit/offset must be integers") from None
        if offset:
            items = items[offset:]
        if limit is not None:
            items = items[:limit]
        return items

    def csv_params(request: Request, name: str) -> Optional[list]:
        values: list = []
        for raw in request.query_params.getlist(name):
            values.extend(v for v in raw.split(",") if v)
        return values or None

    def project_json(project) -> dict:
        info = store.project_info(project)
        config = store.project_config(info["id"])
        doc = json.loads(serialize_project_config(config))
        doc["id"] = info["id"]
        doc["owners"] = info["owners"]
        return doc

    def spawn_scoring(pid: int, models: Optional[list] = None) -> list:
        truth = store.truth_records(pid)
        if not truth:
            return []
        names = models if models is not None else [
            m["abbreviation"] for m in store.list_models(pid)
        ]
        spawned = []
        for model in names:
            for family in store.score_families_for_model(pid, model):
                spawned.append(
                    queue.submit(
                        pid,
                        jobmod.SCORE_BATCH,
                        _score_batch_fn(pid, model, family),
                        coalesce_key=f"score:{pid}:{model}:{family}",
                        detail={"model": model, "score": family},
                    )
                )
        return spawned

    def _score_batch_fn(pid: int, model: str, family: str):
        def run(job):
            config = store.project_config(pid)
            truth = store.truth_records(pid)
            forecasts = store.forecasts_for_project(pid, models=[model])
            records = score_project(
                config, truth, forecasts, score_ids=[family], models=[model]
            )
            store.replace_scores(pid, records, models=[model], score_families=[family])
            job.detail["records"] = len(records)

        return run

    # -- error envelope -----------------------------------------------------------

    @app.exception_handler(ApiError)
    async def on_api_error(_req, exc: ApiError):
        return JSONResponse(exc.body(), status_code=exc.status)

    @app.exception_handler(StoreError)
    async def on_store_error(_req, exc: StoreError):
        status = 404 if str(exc).startswith("unknown") else 400
        return JSONResponse(
            {"error": {"code": "STORE", "message": str(exc)}}, status_code=status
        )

    # -- token ---------------------------------------------------------------------

    @app.post("/api/token")
    async def token(request: Request):
        body = await json_body(request)
        username = body.get("username")
        password = body.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            raise ApiError(400, "CREDENTIALS", "body requires username and password strings")
        if not store.verify_user(username, password):
            raise ApiError(401, "INVALID-CREDENTIALS", "unknown user or wrong password")
        tok, expires = issue_token(secret, username, lifetime=token_lifetime)
        return {"token": tok, "expires_at": expires}

    # -- projects ---------------------------------------------------------------------

    @app.get("/api/projects")
    async def list_projects(request: Request):
        subject = subject_of(request)
        visible = [
            p
            for p in store.list_projects()
            if p["visibility"] == "public"
            or (subject is not None and (not p["owners"] or subject in p["owners"]))
        ]
        return paginate(request, visible)

    @app.post("/api/projects", status_code=201)
    async def create_project(request: Request):
        subject = require_subject(request)
        body = await request.body()
        try:
            config = parse_project_config(body)
        except ConfigParseError as exc:
            raise ApiError(
                400, "CONFIG-INVALID", "project config failed validation",
                {"issues": [i.to_json() for i in exc.issues]},
            ) from None
        pid = store.create_project(config, owner=subject)
        return project_json(pid)

    @app.get("/api/projects/{project_id}")
    async def get_project(project_id: int, request: Request):
        info = store.project_info(project_id)
        check_read(info, subject_of(request))
        return project_json(project_id)

    @app.delete("/api/projects/{project_id}", status_code=204)
    async def delete_project(project_id: int, request: Request):
        subject = require_subject(request)
        info = store.project_info(project_id)
        check_owner(info, subject)
        store.delete_project(project_id)
        return Response(status_code=204)

    # -- models ----------------------------------------------------------------------

    @app.get("/api/projects/{project_id}/models")
    async def list_models(project_id: int, request: Request):
        info = store.project_info(project_id)
        check_read(info, subject_of(request))
        return paginate(request, store.list_models(project_id))

    @app.post("/api/projects/{project_id}/models", status_code=201)
    async def add_model(project_id: int, request: Request):
        subject = require_subject(request)
        info = store.project_info(project_id)
        check_owner(info, subject)
        body = await json_body(request)
        unknown = set(body) - {"abbreviation", "name", "team", "description"}
        if unknown:
            raise ApiError(400, "UNKNOWN-KEY", f"unknown keys: {sorted(unknown)}")
        abbreviation = body.get("abbreviation")
        if not isinstance(abbreviation, str) or not abbreviation:
            raise ApiError(400, "MODEL-ABBREV", "abbreviation must be a non-empty string")
        model_id = store.add_model(
            project_id,
            abbreviation,
            name=str(body.get("name", "")),
            team=str(body.get("team", "")),
            description=str(body.get("description", "")),
            owner=subject,
        )
        return store.model_info(model_id)

    @app.get("/api/models/{model_id}")
    async def get_model(model_id: int, request: Request):
        info = store.model_info(model_id)
        check_read(store.project_info(info["project_id"]), subject_of(request))
        return info

    # -- forecasts ----------------------------------------------------------------------

    @app.post("/api/models/{model_id}/forecasts", status_code=202)
    async def upload_forecast(model_id: int, request: Request):
        subject = require_subject(request)
        minfo = store.model_info(model_id)
        pid = minfo["project_id"]
        pinfo = store.project_info(pid)
        allowed = pinfo["owners"] + minfo["owners"]
        if allowed and subject not in allowed:
            raise ApiError(403, "FORBIDDEN", "not an owner of this model or project")
        body = await json_body(request)
        if "issued_at" in body:
            raise ApiError(
                400, "ISSUED-AT-REJECTED",
                "issued_at is assigned by the server at registration and cannot be submitted",
            )
        unknown = set(body) - {"timezero", "forecast", "source"}
        if unknown:
            raise ApiError(400, "UNKNOWN-KEY", f"unknown keys: {sorted(unknown)}")
        try:
            timezero = datetime.date.fromisoformat(body.get("timezero", ""))
        except (TypeError, ValueError):
            raise ApiError(400, "TIMEZERO", "body requires ISO 'timezero'") from None
        forecast_obj = body.get("forecast")
        if not isinstance(forecast_obj, dict):
            raise ApiError(400, "FORECAST-MISSING", "body requires a 'forecast' object")
        source = str(body.get("source", ""))
        digest = hashlib.sha256(
            json.dumps([model_id, body], sort_keys=True).encode()
        ).hexdigest()

        def run(job):
            try:
                document = parse_forecast_json(forecast_obj)
            except ForecastParseError as exc:
                raise JobFailure(
                    "forecast JSON is malformed",
                    {"issues": [i.to_json() for i in exc.issues]},
                ) from None
            try:
                key = store.register_forecast(model_id, timezero, document, source=source)
            except ForecastValidationError as exc:
                raise JobFailure(
                    "forecast failed validation",
                    {"violations": [v.to_json() for v in exc.violations]},
                ) from None
            job.detail.update(
                {
                    "forecast_id": key.forecast_id,
                    "model": key.model_id,
                    "timezero": key.timezero.isoformat(),
                    "issued_at": key.issued_at.isoformat(timespec="microseconds"),
                    "records": len(document.predictions),
                }
            )
            job.spawned_job_ids.extend(
                j.job_id for j in spawn_scoring(pid, models=[minfo["abbreviation"]])
            )

        job = queue.submit(
            pid, jobmod.UPLOAD_FORECAST, run, coalesce_key=f"forecast:{digest}"
        )
        return job.to_json()

    @app.get("/api/forecasts/{forecast_id}/data")
    async def forecast_data(forecast_id: int, request: Request):
        pid = store.forecast_project_id(forecast_id)
        check_read(store.project_info(pid), subject_of(request))
        return Response(content=store.forecast_data(forecast_id), media_type="application/json")

    # -- truth -------------------------------------------------------------------------

    @app.post("/api/projects/{project_id}/truth", status_code=202)
    async def upload_truth(project_id: int, request: Request):
        subject = require_subject(request)
        info = store.project_info(project_id)
        check_owner(info, subject)
        data = await request.body()
        digest = hashlib.sha256(data).hexdigest()

        def run(job):
            config = store.project_config(project_id)
            try:
                table = parse_truth_csv(data, config)
            except TruthParseError as exc:
                raise JobFailure(
                    "truth CSV failed to parse",
                    {"issues": [i.to_json() for i in exc.issues]},
                ) from None
            warnings = validate_truth(table, config)
            count = store.upload_truth(project_id, table)
            job.detail.update(
                {
                    "rows": count,
                    "skipped": [i.to_json() for i in table.warnings],
                    "warnings": [v.to_json() for v in warnings],
                }
            )
            if count == 0:
                store.clear_scores(project_id)
            else:
                job.spawned_job_ids.extend(j.job_id for j in spawn_scoring(project_id))

        job = queue.submit(
            project_id, jobmod.UPLOAD_TRUTH, run, coalesce_key=f"truth:{project_id}:{digest}"
        )
        return job.to_json()

    # -- queries --------------------------------------------------------------------------

    @app.post("/api/projects/{project_id}/forecast_queries", status_code=202)
    async def forecast_queries(project_id: int, request: Request):
        info = store.project_info(project_id)
        check_read(info, subject_of(request))
        body = await json_body(request)
        fmt = body.pop("format", "csv")
        if fmt not in ("csv", "json"):
            raise ApiError(400, "FORMAT", "format must be 'csv' or 'json'")
        query = ForecastQuery.from_json(body)

        def run(job):
            try:
                rows = store.query_forecasts(project_id, query)
            except StoreError as exc:
                raise JobFailure(str(exc)) from None
            if fmt == "csv":
                job.result = forecast_rows_to_csv(rows)
                job.result_content_type = "text/csv"
            else:
                job.result = forecast_rows_to_json(rows)
                job.result_content_type = "application/json"
            job.detail.update({"row_count": len(rows), "format": fmt})

        digest = hashlib.sha256(
            json.dumps([project_id, fmt, body], sort_keys=True).encode()
        ).hexdigest()
        job = queue.submit(
            project_id, jobmod.FORECAST_QUERY, run, coalesce_key=f"query:{digest}"
        )
        return job.to_json()

    @app.get("/api/projects/{project_id}/scores")
    async def scores(project_id: int, request: Request):
        info = store.project_info(project_id)
        check_read(info, subject_of(request))
        records = store.query_scores(
            project_id,
            models=csv_params(request, "models"),
            units=csv_params(request, "units"),
            targets=csv_params(request, "targets"),
            timezeros=csv_params(request, "timezeros"),
            scores=csv_params(request, "scores"),
        )
        return Response(content=scores_to_csv(records), media_type="text/csv")

    # -- jobs ------------------------------------------------------------------------------

    def get_job(job_id: int, request: Request):
        job = queue.get(job_id)
        if job is None:
            raise ApiError(404, "JOB-UNKNOWN", f"unknown job {job_id}")
        check_read(store.project_info(job.project_id), subject_of(request))
        return job

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: int, request: Request):
        return get_job(job_id, request).to_json()

    @app.get("/api/jobs/{job_id}/result")
    async def job_result(job_id: int, request: Request):
        job = get_job(job_id, request)
        if job.result is None:
            raise ApiError(404, "JOB-NO-RESULT", "job has no result file")
        return Response(
            content=job.result, media_type=job.result_content_type or "application/octet-stream"
        )

    return app
