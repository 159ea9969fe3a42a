/** Thin read-only client for the inference service. The fetch function is
 * injectable so tests can run against a deterministic fake server. */

import type { GenerateRequest, GenerateResponse, VocabResponse } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async parseError(res: Response): Promise<never> {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-json error body */
    }
    throw new ApiError(res.status, detail);
  }

  async vocab(): Promise<VocabResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/vocab`);
    if (!res.ok) return this.parseError(res);
    return (await res.json()) as VocabResponse;
  }

  async generate(request: GenerateRequest): Promise<GenerateResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/generate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!res.ok) return this.parseError(res);
    return (await res.json()) as GenerateResponse;
  }

  cropImageUrl(cropId: string): string {
    return `${this.baseUrl}/crop/${encodeURIComponent(cropId)}.png`;
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.fetchFn(`${this.baseUrl}/healthz`);
      return res.ok;
    } catch {
      return false;
    }
  }
}
