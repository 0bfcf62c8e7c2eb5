// Wire types for the session API (all payloads carry schema_version: 1).

export interface NamedValue {
  name: string;
  unit: string;
  value: number;
}

export interface Candidate {
  values: number[];
  named: NamedValue[];
}

export interface PairPayload {
  schema_version: number;
  session_id: string;
  pair_id: number;
  episode: number;
  hf_episode: number;
  phase: string;
  a: Candidate;
  b: Candidate;
  preview: unknown | null;
}

export interface HistoryEntry {
  pair_id: number;
  a: number[];
  b: number[];
  winner: "a" | "b";
  recommendation: number[] | null;
  refit_seconds: number | null;
}

export interface BoxSpec {
  lower: number[];
  upper: number[];
  names: string[] | null;
  units: string[] | null;
}

export interface StatusPayload {
  schema_version: number;
  session_id: string;
  surrogate_kind: string;
  box: BoxSpec;
  schedule: { lf_explore: number; lf_exploit: number; hf: number };
  episode: number;
  hf_episode: number;
  hf_total: number;
  comparisons: number;
  lf_observations: number;
  complete: boolean;
  outstanding_pair: boolean;
  recommendation: Candidate | null;
  last_refit_seconds: number | null;
  history: HistoryEntry[];
}

export interface CreateSessionRequest {
  schema_version?: number;
  box: BoxSpec;
  schedule: { lf_explore: number; lf_exploit: number; hf: number };
  surrogate_kind: string;
  lf_oracle: { kind: string; seed?: number; target_correlation?: number } | null;
  seed?: number;
  mcmc?: { chains: number; warmup: number; draws: number; leapfrog_steps?: number };
  acq_budget?: number;
  rec_budget?: number;
}
