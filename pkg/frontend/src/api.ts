// Thin typed client over the trial service. Every non-2xx response
// becomes an ApiError carrying the server's own detail string, so the
// console can surface it verbatim.

import type {
  OutcomeItem,
  PosteriorView,
  RecommendationResponse,
  SubmitResponse,
  TrialSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(public baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, init);
    if (!res.ok) await parseError(res);
    return res.json() as Promise<T>;
  }

  createTrial(config: Record<string, unknown>, trialId?: string): Promise<TrialSummary> {
    const body: Record<string, unknown> = { config };
    if (trialId) body.trial_id = trialId;
    return this.request("/trials", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getTrial(trialId: string): Promise<TrialSummary> {
    return this.request(`/trials/${encodeURIComponent(trialId)}`);
  }

  submitOutcomes(trialId: string, cohortId: string, items: OutcomeItem[]): Promise<SubmitResponse> {
    return this.request(`/trials/${encodeURIComponent(trialId)}/outcomes`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ cohort_id: cohortId, items }),
    });
  }

  getPosterior(trialId: string, stratum: string): Promise<PosteriorView> {
    const q = new URLSearchParams({ stratum });
    return this.request(`/trials/${encodeURIComponent(trialId)}/posterior?${q}`);
  }

  getRecommendation(trialId: string): Promise<RecommendationResponse> {
    return this.request(`/trials/${encodeURIComponent(trialId)}/recommendation`);
  }
}
