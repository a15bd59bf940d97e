// Typed fetch client for the /v1 API. The bearer token lives in memory only.

import type {
  LogDetail,
  LogTable,
  ProjectDetail,
  ProjectInfo,
  SummaryReport,
  TokenRow,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export interface WindowQuery {
  from?: number;
  to?: number;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private token: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(init.body ? { "Content-Type": "application/json" } : {}),
        ...(init.headers ?? {}),
      },
    });
    if (!response.ok) {
      let message = `${response.status}`;
      try {
        const body = await response.json();
        message = body?.error?.message ?? message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, message);
    }
    return response;
  }

  private async json<T>(path: string, init: RequestInit = {}): Promise<T> {
    return (await this.request(path, init)).json() as Promise<T>;
  }

  me(): Promise<{ user_id: string; display_name: string }> {
    return this.json("/v1/me");
  }

  listProjects(): Promise<{ projects: ProjectInfo[] }> {
    return this.json("/v1/projects");
  }

  getProject(projectId: string): Promise<ProjectDetail> {
    return this.json(`/v1/projects/${projectId}`);
  }

  createProject(name: string, quantile?: number): Promise<ProjectInfo> {
    return this.json("/v1/projects", {
      method: "POST",
      body: JSON.stringify(quantile === undefined ? { name } : { name, quantile }),
    });
  }

  deleteProject(projectId: string): Promise<void> {
    return this.request(`/v1/projects/${projectId}`, { method: "DELETE" }).then(() => undefined);
  }

  summary(projectId: string, metrics: string[], window: WindowQuery = {}): Promise<SummaryReport> {
    const params = new URLSearchParams();
    if (metrics.length) params.set("metrics", metrics.join(","));
    if (window.from !== undefined) params.set("from", String(window.from));
    if (window.to !== undefined) params.set("to", String(window.to));
    const qs = params.toString();
    return this.json(`/v1/projects/${projectId}/summary${qs ? "?" + qs : ""}`);
  }

  logTable(
    projectId: string,
    opts: WindowQuery & { outlierOnly?: boolean; limit?: number; offset?: number } = {},
  ): Promise<LogTable> {
    const params = new URLSearchParams();
    if (opts.from !== undefined) params.set("from", String(opts.from));
    if (opts.to !== undefined) params.set("to", String(opts.to));
    if (opts.outlierOnly) params.set("outlier_only", "true");
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    if (opts.offset !== undefined) params.set("offset", String(opts.offset));
    const qs = params.toString();
    return this.json(`/v1/projects/${projectId}/logs${qs ? "?" + qs : ""}`);
  }

  logDetail(logId: string): Promise<LogDetail> {
    return this.json(`/v1/logs/${logId}`);
  }

  deleteLog(logId: string): Promise<void> {
    return this.request(`/v1/logs/${logId}`, { method: "DELETE" }).then(() => undefined);
  }

  /** Raw OBZT bytes of a stored attribution heatmap (bit-exact download). */
  async heatmapBytes(logId: string, method: string): Promise<Uint8Array> {
    const response = await this.request(`/v1/logs/${logId}/heatmap/${method}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async exportCsv(projectId: string, window: WindowQuery = {}): Promise<string> {
    const params = new URLSearchParams();
    if (window.from !== undefined) params.set("from", String(window.from));
    if (window.to !== undefined) params.set("to", String(window.to));
    const qs = params.toString();
    const response = await this.request(`/v1/projects/${projectId}/export.csv${qs ? "?" + qs : ""}`);
    return response.text();
  }

  listTokens(): Promise<{ tokens: TokenRow[] }> {
    return this.json("/v1/tokens");
  }

  revokeToken(tokenHash: string): Promise<{ token_hash: string; revoked: boolean }> {
    return this.json(`/v1/tokens/${tokenHash}/revoke`, { method: "POST" });
  }
}

/**
 * Guards a polling loop against out-of-order responses: results are accepted
 * only if no newer request finished first.
 */
export class LatestOnly {
  private issued = 0;
  private accepted = 0;

  nextSeq(): number {
    return ++this.issued;
  }

  accept(seq: number): boolean {
    if (seq <= this.accepted) return false;
    this.accepted = seq;
    return true;
  }
}

/** Count data rows (header excluded) in an RFC-4180 CSV document. */
export function csvRowCount(text: string): number {
  const lines = text.split("\r\n").filter((line) => line.length > 0);
  return Math.max(lines.length - 1, 0);
}
