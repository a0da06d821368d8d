// Shapes of the trial service JSON payloads (schema_version 1).

export interface PendingSlot {
  dose: number[];
  stratum: string;
  needed: number;
  received: number;
}

export interface StratumStatus {
  n: number;
  stopped: boolean;
  counter: number;
  d_hat: number[] | null;
  f_star: number | null;
  max_aei: number | null;
}

export interface TrialSummary {
  schema_version: string;
  trial_id: string;
  config: Record<string, unknown>;
  status: "enrolling" | "stopped-early" | "budget-complete";
  n: number;
  iteration: number;
  unique_doses: number;
  pending: PendingSlot[];
  strata: Record<string, StratumStatus>;
}

export interface PosteriorView {
  schema_version: string;
  trial_id: string;
  stratum: string;
  grid: number[][];
  mean: number[];
  sigma2: number[];
  aei: number[];
  f_star: number;
  d_hat: number[];
  dopt_mass: number[];
  stopped: boolean;
  counter: number;
  n_stratum: number;
}

export interface StratumRecommendation {
  d_hat: number[];
  mean: number;
  sigma2: number;
  f_draws_mean: number;
  dopt_mass: number[];
  grid: number[][];
}

export interface RecommendationResponse {
  schema_version: string;
  trial_id: string;
  status: string;
  strata: Record<string, StratumRecommendation>;
}

export interface OutcomeItem {
  dose: number[];
  stratum: string;
  y: number;
}

export interface SubmitResponse {
  schema_version: string;
  trial_id: string;
  duplicate: boolean;
  accepted: number;
  cohort_complete: boolean;
  status: string;
  n: number;
  pending: PendingSlot[];
  records: unknown[];
}
