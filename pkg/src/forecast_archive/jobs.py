"""Asynchronous job queue for uploads, query materialization, and scoring.

Jobs drain FIFO through a bounded worker pool, with at most one job running
per project at a time so replacement semantics stay deterministic. A job
submitted with a coalesce key returns the already-queued identical job
instead of enqueueing a duplicate. Status only ever moves
queued -> running -> {success, failed}; results are immutable once the
status is terminal.
"""

from __future__ import annotations

import datetime
import itertools
import os
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Optional

UPLOAD_FORECAST = "upload_forecast"
UPLOAD_TRUTH = "upload_truth"
FORECAST_QUERY = "forecast_query"
SCORE_BATCH = "score_batch"

QUEUED = "queued"
RUNNING = "running"
SUCCESS = "success"
FAILED = "failed"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="microseconds")


@dataclass
class Job:
    job_id: int
    kind: str
    project_id: int
    status: str = QUEUED
    submitted_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    detail: dict = field(default_factory=dict)
    result: Optional[bytes] = None
    result_content_type: Optional[str] = None
    spawned_job_ids: list = field(default_factory=list)
    coalesce_key: Optional[str] = None

    def to_json(self) -> dict:
        out = {
            "job_id": self.job_id,
            "kind": self.kind,
            "project_id": self.project_id,
            "status": self.status,
            "submitted_at": self.submitted_at,
            "finished_at": self.finished_at,
            "detail": self.detail,
            "spawned_job_ids": list(self.spawned_job_ids),
        }
        if self.result is not None:
            out["result_url"] = f"/api/jobs/{self.job_id}/result"
        return out


class JobFailure(Exception):
    """Raised by job bodies to fail the job with structured detail."""

    def __init__(self, message: str, detail: Optional[dict] = None):
        super().__init__(message)
        self.detail = detail or {}


class JobQueue:
    """FIFO-per-project queue over a bounded thread pool."""

    def __init__(self, workers: Optional[int] = None):
        self.workers = max(1, workers if workers is not None else os.cpu_count() or 1)
        self._cond = threading.Condition()
        self._jobs: dict = {}
        self._pending: list = []
        self._busy_projects: set = set()
        self._ids = itertools.count(1)
        self._threads: list = []
        self._stopping = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        with self._cond:
            if self._threads:
                return
            self._stopping = False
            for i in range(self.workers):
                t = threading.Thread(target=self._worker, name=f"job-worker-{i}", daemon=True)
                t.start()
                self._threads.append(t)

    def stop(self):
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout=5)
        self._threads = []

    # -- submission ----------------------------------------------------------------

    def submit(
        self,
        project_id: int,
        kind: str,
        func: Callable[[Job], None],
        coalesce_key: Optional[str] = None,
        detail: Optional[dict] = None,
    ) -> Job:
        """Queue a job; returns the queued Job (or the identical pending one)."""
        with self._cond:
            if coalesce_key is not None:
                for job, _fn in self._pending:
                    if job.coalesce_key == coalesce_key and job.status == QUEUED:
                        return job
            job = Job(
                job_id=next(self._ids),
                kind=kind,
                project_id=project_id,
                detail=dict(detail or {}),
                coalesce_key=coalesce_key,
            )
            self._jobs[job.job_id] = job
            self._pending.append((job, func))
            self._cond.notify()
            return job

    def get(self, job_id: int) -> Optional[Job]:
        with self._cond:
            return self._jobs.get(job_id)

    def jobs(self) -> list:
        with self._cond:
            return list(self._jobs.values())

    def drain(self, timeout: float = 60.0):
        """Block until every queued/running job reaches a terminal status."""
        deadline = None if timeout is None else (time.monotonic() + timeout)
        with self._cond:
            while self._pending or self._busy_projects:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError("job queue did not drain in time")
                self._cond.wait(timeout=remaining)

    # -- worker loop ------------------------------------------------------------------

    def _take(self):
        for i, (job, fn) in enumerate(self._pending):
            if job.project_id not in self._busy_projects:
                del self._pending[i]
                self._busy_projects.add(job.project_id)
                return job, fn
        return None

    def _worker(self):
        while True:
            with self._cond:
                item = None
                while not self._stopping:
                    item = self._take()
                    if item is not None:
                        break
                    self._cond.wait()
                if self._stopping:
                    return
                job, fn = item
                job.status = RUNNING
            try:
                fn(job)
            except JobFailure as exc:
                job.detail.update(exc.detail)
                job.detail["error"] = str(exc)
                job.status = FAILED
            except Exception as exc:  # job bodies must not take the worker down
                job.detail["error"] = f"{type(exc).__name__}: {exc}"
                job.detail["traceback"] = traceback.format_exc(limit=8)
                job.status = FAILED
            else:
                job.status = SUCCESS
            finally:
                job.finished_at = _now()
                with self._cond:
                    self._busy_projects.discard(job.project_id)
                    self._cond.notify_all()
