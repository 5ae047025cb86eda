/** Wire types for the recommendation service (JSON over HTTP). */

export interface VisitPayload {
  dx: string[];
  px: string[];
  rx: string[];
}

export interface RecommendRequest {
  diagnoses: string[];
  procedures: string[];
  history: VisitPayload[];
  current_medications: string[];
  red_flags: string[];
}

export interface Recommendation {
  atc3: string;
  score: number;
  rank: number;
}

export interface DdiWarning {
  drug_a: string;
  drug_b: string;
  interaction_type: string;
  severity: number;
}

export type Triage = "self_care" | "consult_pharmacist" | "refer_to_doctor";

export interface RecommendResponse {
  recommendations: Recommendation[];
  ddi_warnings: DdiWarning[];
  triage: Triage;
  disclaimer: string;
  red_flags_triggered: string[];
  unknown_codes: string[];
  notes: string[];
  model_version: string;
}

export interface DdiCheckResponse {
  warnings: DdiWarning[];
  unknown: string[];
}

export interface HealthResponse {
  status: string;
  model_version: string | null;
}
