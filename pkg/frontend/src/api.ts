/** Typed client for the recommendation service. All requests go to the one
 * configured origin; anything else is a programming error. */

import type {
  DdiCheckResponse,
  HealthResponse,
  RecommendRequest,
  RecommendResponse,
} from "./types.js";

export class ServiceUnreachableError extends Error {}

export class RequestRejectedError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  private readonly base: string;

  constructor(
    serviceUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {
    this.base = serviceUrl.replace(/\/+$/, "");
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.base}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ServiceUnreachableError(String(err));
    }
    if (!res.ok) {
      let detail = `${res.status}`;
      try {
        const payload = (await res.json()) as { error?: string };
        if (payload.error) detail = payload.error;
      } catch {
        /* non-JSON error body */
      }
      throw new RequestRejectedError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  recommend(req: RecommendRequest): Promise<RecommendResponse> {
    return this.post<RecommendResponse>("/api/v1/recommend", req);
  }

  ddiCheck(medications: string[]): Promise<DdiCheckResponse> {
    return this.post<DdiCheckResponse>("/api/v1/ddi-check", { medications });
  }

  async healthz(): Promise<HealthResponse> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.base}/healthz`);
    } catch (err) {
      throw new ServiceUnreachableError(String(err));
    }
    return (await res.json()) as HealthResponse;
  }
}
