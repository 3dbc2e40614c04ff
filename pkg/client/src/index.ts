/**
 * Thin programmatic client for the forecast-archive HTTP API.
 *
 * A Connection authenticates against the server, lists projects and
 * models, uploads forecasts and truth files, polls the resulting jobs,
 * runs filtered forecast queries, and downloads scores. Tabular results
 * expose rows keyed by the exact column names of the server CSV exports.
 *
 * The client performs no validation beyond JSON well-formedness; the
 * server's rule catalog is the single source of truth, and its violation
 * lists are surfaced on errors and failed jobs.
 *
 * A Connection is not safe for concurrent use from multiple logical
 * flows; create one per thread of control.
 */

import { readFile } from "node:fs/promises";

import { Table, tableFromCsv } from "./csv.js";

export { Table, parseCsv, tableFromCsv } from "./csv.js";

export interface QueryFilters {
  models?: string[];
  units?: string[];
  targets?: string[];
  timezeros?: string[];
  types?: string[];
}

export interface ScoreFilters extends QueryFilters {
  scores?: string[];
}

export interface Job {
  job_id: number;
  kind: string;
  project_id: number;
  status: "queued" | "running" | "success" | "failed";
  submitted_at: string;
  finished_at: string | null;
  detail: Record<string, unknown>;
  spawned_job_ids: number[];
  result_url?: string;
}

export interface ProjectSummary {
  id: number;
  name: string;
  description: string;
  visibility: "public" | "private";
  owners: string[];
}

export interface ModelInfo {
  id: number;
  project_id?: number;
  abbreviation: string;
  name: string;
  team: string;
  description: string;
  owners: string[];
}

export interface RetryPolicy {
  /** Extra attempts after the first, on network errors and 5xx responses. */
  retries: number;
  /** Base backoff in milliseconds, doubled per attempt. */
  backoffMs: number;
}

interface ErrorEnvelope {
  code?: string;
  message?: string;
  violations?: unknown[];
  issues?: unknown[];
}

/** An HTTP error from the server, with any violation/issue lists attached. */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly violations: unknown[];
  readonly issues: unknown[];

  constructor(status: number, envelope: ErrorEnvelope) {
    super(envelope.message ?? `server returned ${status}`);
    this.name = "ApiError";
    this.status = status;
    this.code = envelope.code ?? "UNKNOWN";
    this.violations = envelope.violations ?? [];
    this.issues = envelope.issues ?? [];
  }
}

export class PollTimeoutError extends Error {
  constructor(jobId: number, timeoutMs: number) {
    super(`job ${jobId} did not reach a terminal status within ${timeoutMs} ms`);
    this.name = "PollTimeoutError";
  }
}

/** Model addressing: a numeric server id or (project, abbreviation). */
export type ModelRef =
  | number
  | { project: number | string; abbreviation: string };

const REFRESH_MARGIN_S = 30;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class Connection {
  readonly baseUrl: string;
  private readonly retry: RetryPolicy;
  private token: string | null = null;
  private tokenExpiresAt = 0;
  private credentials: { username: string; password: string } | null = null;

  constructor(baseUrl: string, options: { retry?: Partial<RetryPolicy> } = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.retry = { retries: 2, backoffMs: 200, ...options.retry };
  }

  /**
   * Exchange credentials for a bearer token. Credentials are kept so an
   * expired token refreshes automatically; nothing is cached on failure.
   */
  async authenticate(username: string, password: string): Promise<void> {
    const body = JSON.stringify({ username, password });
    const response = await this.rawFetch("POST", "/api/token", body, "application/json", false);
    if (!response.ok) {
      throw await this.toApiError(response);
    }
    const payload = (await response.json()) as { token: string; expires_at: number };
    this.token = payload.token;
    this.tokenExpiresAt = payload.expires_at;
    this.credentials = { username, password };
  }

  async projects(): Promise<ProjectSummary[]> {
    const response = await this.request("GET", "/api/projects");
    return (await response.json()) as ProjectSummary[];
  }

  async models(project: number | string): Promise<ModelInfo[]> {
    const pid = await this.projectId(project);
    const response = await this.request("GET", `/api/projects/${pid}/models`);
    return (await response.json()) as ModelInfo[];
  }

  /** Create a project from a config document (object, JSON text, or path). */
  async createProject(config: object | string): Promise<ProjectSummary> {
    const body =
      typeof config === "string"
        ? await this.loadJsonText(config)
        : JSON.stringify(config);
    const response = await this.request("POST", "/api/projects", body, "application/json");
    return (await response.json()) as ProjectSummary;
  }

  async addModel(
    project: number | string,
    abbreviation: string,
    extra: { name?: string; team?: string; description?: string } = {},
  ): Promise<ModelInfo> {
    const pid = await this.projectId(project);
    const response = await this.request(
      "POST",
      `/api/projects/${pid}/models`,
      JSON.stringify({ abbreviation, ...extra }),
      "application/json",
    );
    return (await response.json()) as ModelInfo;
  }

  /**
   * Submit a forecast for one (model, timezero) slot. `documentOrPath`
   * may be the document object or a path to a JSON file; either way the
   * only client-side check is JSON well-formedness. Returns the upload
   * job to poll.
   */
  async uploadForecast(
    model: ModelRef,
    timezero: string,
    documentOrPath: object | string,
    source = "",
  ): Promise<Job> {
    const modelId = await this.modelId(model);
    const forecast =
      typeof documentOrPath === "string"
        ? (JSON.parse(await readFile(documentOrPath, "utf-8")) as object)
        : documentOrPath;
    const response = await this.request(
      "POST",
      `/api/models/${modelId}/forecasts`,
      JSON.stringify({ timezero, forecast, source }),
      "application/json",
    );
    return (await response.json()) as Job;
  }

  /** Upload a truth CSV (path, text, or bytes); returns the job to poll. */
  async uploadTruth(
    project: number | string,
    csvOrPath: string | Uint8Array,
  ): Promise<Job> {
    const pid = await this.projectId(project);
    let body: Uint8Array;
    if (typeof csvOrPath === "string") {
      body = csvOrPath.includes("\n")
        ? new TextEncoder().encode(csvOrPath)
        : new Uint8Array(await readFile(csvOrPath));
    } else {
      body = csvOrPath;
    }
    const response = await this.request(
      "POST",
      `/api/projects/${pid}/truth`,
      body,
      "text/csv",
    );
    return (await response.json()) as Job;
  }

  /** Fetch the current state of a job. */
  async job(jobId: number): Promise<Job> {
    const response = await this.request("GET", `/api/jobs/${jobId}`);
    return (await response.json()) as Job;
  }

  /**
   * Poll until the job reaches a terminal status (returned as-is, failed
   * jobs included); throws PollTimeoutError once `timeoutMs` elapses.
   */
  async poll(job: Job | number, timeoutMs = 120_000): Promise<Job> {
    const jobId = typeof job === "number" ? job : job.job_id;
    const deadline = Date.now() + timeoutMs;
    let current = typeof job === "number" ? await this.job(job) : job;
    while (current.status === "queued" || current.status === "running") {
      if (Date.now() > deadline) {
        throw new PollTimeoutError(jobId, timeoutMs);
      }
      await sleep(50);
      current = await this.job(jobId);
    }
    return current;
  }

  /** Raw bytes of a job's result file. */
  async jobResult(job: Job | number): Promise<Uint8Array> {
    const jobId = typeof job === "number" ? job : job.job_id;
    const response = await this.request("GET", `/api/jobs/${jobId}/result`);
    return new Uint8Array(await response.arrayBuffer());
  }

  /** Run a filtered forecast query; resolves to the tabular result. */
  async forecastQuery(
    project: number | string,
    filters: QueryFilters = {},
    timeoutMs = 120_000,
  ): Promise<Table> {
    const bytes = await this.forecastQueryCsv(project, filters, timeoutMs);
    return tableFromCsv(new TextDecoder().decode(bytes));
  }

  /** Like forecastQuery, but returns the exact CSV bytes the server built. */
  async forecastQueryCsv(
    project: number | string,
    filters: QueryFilters = {},
    timeoutMs = 120_000,
  ): Promise<Uint8Array> {
    const pid = await this.projectId(project);
    const payload: Record<string, unknown> = { format: "csv" };
    for (const key of ["models", "units", "targets", "timezeros", "types"] as const) {
      const values = filters[key];
      if (values && values.length > 0) {
        payload[key] = values;
      }
    }
    const response = await this.request(
      "POST",
      `/api/projects/${pid}/forecast_queries`,
      JSON.stringify(payload),
      "application/json",
    );
    const job = await this.poll((await response.json()) as Job, timeoutMs);
    if (job.status !== "success") {
      throw new ApiError(400, {
        code: "QUERY-FAILED",
        message: String(job.detail["error"] ?? "forecast query failed"),
      });
    }
    return this.jobResult(job);
  }

  /** Download filtered scores as a table. */
  async scores(
    project: number | string,
    filters: ScoreFilters = {},
  ): Promise<Table> {
    const bytes = await this.scoresCsv(project, filters);
    return tableFromCsv(new TextDecoder().decode(bytes));
  }

  /** Filtered score CSV, byte-exact as served. */
  async scoresCsv(
    project: number | string,
    filters: ScoreFilters = {},
  ): Promise<Uint8Array> {
    const pid = await this.projectId(project);
    const params = new URLSearchParams();
    for (const key of ["models", "units", "targets", "timezeros", "scores"] as const) {
      const values = filters[key];
      if (values && values.length > 0) {
        params.set(key, values.join(","));
      }
    }
    const suffix = params.size > 0 ? `?${params.toString()}` : "";
    const response = await this.request("GET", `/api/projects/${pid}/scores${suffix}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  /** Download one stored forecast as its canonical JSON document. */
  async forecastData(forecastId: number): Promise<unknown> {
    return JSON.parse(new TextDecoder().decode(await this.forecastDataBytes(forecastId)));
  }

  async forecastDataBytes(forecastId: number): Promise<Uint8Array> {
    const response = await this.request("GET", `/api/forecasts/${forecastId}/data`);
    return new Uint8Array(await response.arrayBuffer());
  }

  // ---- plumbing -------------------------------------------------------------

  private async loadJsonText(pathOrText: string): Promise<string> {
    const text = pathOrText.trimStart().startsWith("{")
      ? pathOrText
      : await readFile(pathOrText, "utf-8");
    JSON.parse(text); // well-formedness only
    return text;
  }

  private async projectId(project: number | string): Promise<number> {
    if (typeof project === "number") {
      return project;
    }
    const all = await this.projects();
    const match = all.find((p) => p.name === project);
    if (!match) {
      throw new ApiError(404, { code: "PROJECT-UNKNOWN", message: `unknown project ${project}` });
    }
    return match.id;
  }

  private async modelId(model: ModelRef): Promise<number> {
    if (typeof model === "number") {
      return model;
    }
    const all = await this.models(model.project);
    const match = all.find((m) => m.abbreviation === model.abbreviation);
    if (!match) {
      throw new ApiError(404, {
        code: "MODEL-UNKNOWN",
        message: `unknown model ${model.abbreviation}`,
      });
    }
    return match.id;
  }

  private async ensureFreshToken(): Promise<void> {
    if (!this.credentials) {
      return;
    }
    const now = Math.floor(Date.now() / 1000);
    if (this.token === null || now >= this.tokenExpiresAt - REFRESH_MARGIN_S) {
      const { username, password } = this.credentials;
      await this.authenticate(username, password);
    }
  }

  private async toApiError(response: Response): Promise<ApiError> {
    let envelope: ErrorEnvelope = {};
    try {
      const body = (await response.json()) as { error?: ErrorEnvelope };
      envelope = body.error ?? {};
    } catch {
      envelope = { message: `server returned ${response.status}` };
    }
    return new ApiError(response.status, envelope);
  }

  private async rawFetch(
    method: string,
    path: string,
    body: string | Uint8Array | undefined,
    contentType: string | undefined,
    withAuth: boolean,
  ): Promise<Response> {
    const headers: Record<string, string> = {};
    if (contentType) {
      headers["Content-Type"] = contentType;
    }
    if (withAuth && this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= this.retry.retries; attempt++) {
      if (attempt > 0) {
        await sleep(this.retry.backoffMs * 2 ** (attempt - 1));
      }
      try {
        const response = await fetch(this.baseUrl + path, { method, headers, body });
        if (response.status >= 500 && attempt < this.retry.retries) {
          lastError = new ApiError(response.status, {
            message: `server returned ${response.status}`,
          });
          continue;
        }
        return response;
      } catch (error) {
        lastError = error;
      }
    }
    throw lastError;
  }

  private async request(
    method: string,
    path: string,
    body?: string | Uint8Array,
    contentType?: string,
  ): Promise<Response> {
    await this.ensureFreshToken();
    let response = await this.rawFetch(method, path, body, contentType, true);
    if (response.status === 401 && this.credentials) {
      // stale or revoked token: refresh once and retry
      const { username, password } = this.credentials;
      await this.authenticate(username, password);
      response = await this.rawFetch(method, path, body, contentType, true);
    }
    if (!response.ok) {
      throw await this.toApiError(response);
    }
    return response;
  }
}

// aliases matching the published client surface
export interface Connection {
  upload_forecast: Connection["uploadForecast"];
  upload_truth: Connection["uploadTruth"];
  forecast_query: Connection["forecastQuery"];
}

Connection.prototype.upload_forecast = Connection.prototype.uploadForecast;
Connection.prototype.upload_truth = Connection.prototype.uploadTruth;
Connection.prototype.forecast_query = Connection.prototype.forecastQuery;
