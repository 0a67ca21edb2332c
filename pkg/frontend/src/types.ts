/** Wire shapes of the triage HTTP API, mirrored field for field. */

export type CaseState = "auto_resolved" | "escalated" | "analyst_resolved";

export type DecisionAction = "approve_refund" | "reject" | "reassign";

export interface TextPrediction {
  class: string;
  confidence: number;
  probabilities: number[];
}

export interface ImageVerdict {
  verdict: string;
  confidence: number;
}

/** Raw interleaved RGB rows; no image codec needed on either side. */
export interface Pixmap {
  width: number;
  height: number;
  rgb_base64: string;
}

export interface CaseSummary {
  id: string;
  created_at: number;
  state: CaseState;
  text_class: string | null;
  text_confidence: number | null;
  reason: string | null;
}

export interface QueuePageDto {
  items: CaseSummary[];
  page: number;
  page_size: number;
  total_cases: number;
  total_pages: number;
}

export interface FeedbackRecordDto {
  id: string;
  comment: string;
  label?: string;
  image_path?: string;
  image_label?: string;
}

export interface CaseDetail {
  id: string;
  created_at: number;
  state: CaseState;
  record: FeedbackRecordDto;
  text_class: string | null;
  text_confidence: number | null;
  text_probabilities: number[] | null;
  image_relevance: ImageVerdict | null;
  image_damage: ImageVerdict | null;
  heatmap_path: string | null;
  reason: string | null;
  decision: string | null;
  reassign_label: string | null;
  decided_by: string | null;
  resolved_at: number | null;
  warnings: string[];
  text_prediction: TextPrediction | null;
  image_verdicts: { relevance: ImageVerdict | null; damage: ImageVerdict | null };
  heatmap: Pixmap | null;
  image: Pixmap | null;
}

export interface TaxonomyDto {
  classes: string[];
  merged_aliases: Record<string, string>;
  verifiable_classes: string[];
}

export interface StatsDto {
  total_cases: number;
  by_state: Record<CaseState, number>;
  by_text_class: Record<string, number>;
}

export interface DecisionRequest {
  action: DecisionAction;
  analyst_id: string;
  label?: string;
}
