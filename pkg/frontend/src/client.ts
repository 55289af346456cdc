import type {
  AlertInfo,
  AnnotationInfo,
  ApiErrorBody,
  FleetSnapshot,
  MetricsPayload,
  PipelineInfo,
  StatusPayload,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, body: ApiErrorBody | null) {
    const code = body?.error ?? `HTTP ${status}`;
    super(body?.detail ? `${code}: ${JSON.stringify(body.detail)}` : code);
    this.status = status;
    this.code = code;
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (res.ok) {
    return (await res.json()) as T;
  }
  let body: ApiErrorBody | null = null;
  try {
    const parsed = await res.json();
    // FastAPI wraps handler-raised details under "detail"
    body = parsed.error ? parsed : parsed.detail ?? parsed;
  } catch {
    body = null;
  }
  throw new ApiError(res.status, body);
}

export class FleetClient {
  constructor(readonly base: string) {}

  private url(path: string, params?: Record<string, string | number | boolean>): string {
    const u = new URL(path, this.base);
    for (const [k, v] of Object.entries(params ?? {})) {
      u.searchParams.set(k, String(v));
    }
    return u.toString();
  }

  status(): Promise<StatusPayload> {
    return fetch(this.url("/status")).then((r) => asJson<StatusPayload>(r));
  }

  fleet(): Promise<FleetSnapshot> {
    return fetch(this.url("/fleet")).then((r) => asJson<FleetSnapshot>(r));
  }

  metrics(
    sid: string,
    series: string,
    opts: { from?: number; to?: number; res?: number } = {},
  ): Promise<MetricsPayload> {
    const params: Record<string, string | number> = { series };
    if (opts.from !== undefined) params.from = opts.from;
    if (opts.to !== undefined) params.to = opts.to;
    if (opts.res !== undefined) params.res = opts.res;
    return fetch(this.url(`/systems/${sid}/metrics`, params)).then((r) =>
      asJson<MetricsPayload>(r),
    );
  }

  alerts(activeOnly = false): Promise<AlertInfo[]> {
    return fetch(this.url("/alerts", { active: activeOnly }))
      .then((r) => asJson<{ alerts: AlertInfo[] }>(r))
      .then((p) => p.alerts);
  }

  annotations(span?: { from?: number; to?: number }): Promise<AnnotationInfo[]> {
    const params: Record<string, number> = {};
    if (span?.from !== undefined) params.from = span.from;
    if (span?.to !== undefined) params.to = span.to;
    return fetch(this.url("/annotations", params))
      .then((r) => asJson<{ annotations: AnnotationInfo[] }>(r))
      .then((p) => p.annotations);
  }

  pipelines(): Promise<PipelineInfo[]> {
    return fetch(this.url("/pipelines"))
      .then((r) => asJson<{ pipelines: PipelineInfo[] }>(r))
      .then((p) => p.pipelines);
  }

  drain(sid: string): Promise<{ system: string; op_state: string; drain_pending: boolean; applied_t: number }> {
    return fetch(this.url(`/systems/${sid}/drain`), { method: "POST" }).then((r) => asJson(r));
  }

  undrain(sid: string): Promise<{ system: string; op_state: string; applied_t: number }> {
    return fetch(this.url(`/systems/${sid}/undrain`), { method: "POST" }).then((r) => asJson(r));
  }

  healthCheck(sid: string): Promise<{ system: string; ok: boolean; flags: Record<string, boolean>; applied_t: number }> {
    return fetch(this.url(`/systems/${sid}/health_check`), { method: "POST" }).then((r) =>
      asJson(r),
    );
  }

  annotate(body: {
    category: string;
    text: string;
    t_start?: number;
    t_end?: number;
    systems?: string[];
  }): Promise<AnnotationInfo & { applied_t: number }> {
    return fetch(this.url("/annotations"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => asJson(r));
  }

  allocate(body: {
    user: string;
    node: string;
    selector: string;
    walltime_s: number;
  }): Promise<{ id: string; state: string; system: string | null; applied_t: number }> {
    return fetch(this.url("/allocations"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => asJson(r));
  }

  cancelAllocation(id: string): Promise<{ id: string; state: string; applied_t: number }> {
    return fetch(this.url(`/allocations/${id}`), { method: "DELETE" }).then((r) => asJson(r));
  }

  approve(pid: string): Promise<{ id: string; state: string; approved: boolean; applied_t: number }> {
    return fetch(this.url(`/pipelines/${pid}/approve`), { method: "POST" }).then((r) =>
      asJson(r),
    );
  }
}
