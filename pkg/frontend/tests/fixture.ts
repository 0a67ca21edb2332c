/** In-memory stand-in for the triage service, matching its wire behaviour:
 * escalated-only queue pages, 409 on double decisions, 400 on bad labels.
 */

import { ApiError } from "../src/api";
import type { ApiSurface } from "../src/controller";
import type {
  CaseDetail,
  CaseSummary,
  DecisionRequest,
  Pixmap,
  StatsDto,
  TaxonomyDto,
} from "../src/types";

export const CLASSES = [
  "Dropped Outside (No notification)",
  "Incorrect item",
  "Late Delivery",
  "Not Received",
  "Partial/Split Delivery",
  "Poor Packaging/Handling/Damaged",
  "Shipping Charges",
  "Wrong Address",
];

export function pixmapOf(width: number, height: number, bytes: number[]): Pixmap {
  if (bytes.length !== width * height * 3) throw new Error("byte count mismatch");
  return { width, height, rgb_base64: btoa(String.fromCharCode(...bytes)) };
}

export function makeDetail(
  partial: Partial<CaseDetail> & Pick<CaseDetail, "id" | "created_at">,
): CaseDetail {
  return {
    state: "escalated",
    record: { id: partial.id, comment: "box arrived crushed at the corner" },
    text_class: "Poor Packaging/Handling/Damaged",
    text_confidence: 0.41,
    text_probabilities: null,
    image_relevance: null,
    image_damage: null,
    heatmap_path: null,
    reason: "low text confidence",
    decision: null,
    reassign_label: null,
    decided_by: null,
    resolved_at: null,
    warnings: [],
    text_prediction: {
      class: "Poor Packaging/Handling/Damaged",
      confidence: 0.41,
      probabilities: [],
    },
    image_verdicts: { relevance: null, damage: null },
    heatmap: null,
    image: null,
    ...partial,
  };
}

function summarize(detail: CaseDetail): CaseSummary {
  return {
    id: detail.id,
    created_at: detail.created_at,
    state: detail.state,
    text_class: detail.text_class,
    text_confidence: detail.text_confidence,
    reason: detail.reason,
  };
}

export class FakeApi implements ApiSurface {
  /** Every decision body that reached the "server". */
  readonly decisions: Array<DecisionRequest & { case_id: string }> = [];
  /** When set, the next submitDecision dies before reaching the server. */
  dropNextDecision = false;
  /** When true, every call fails as if the service were down. */
  unreachable = false;

  constructor(readonly details: CaseDetail[]) {}

  private guard(): void {
    if (this.unreachable) throw new ApiError(0, "API unreachable: connection refused");
  }

  private find(caseId: string): CaseDetail {
    const detail = this.details.find((d) => d.id === caseId);
    if (detail === undefined) throw new ApiError(404, `no case ${caseId}`);
    return detail;
  }

  /** Another analyst resolves the case behind this client's back. */
  resolveElsewhere(caseId: string): void {
    const detail = this.find(caseId);
    detail.state = "analyst_resolved";
    detail.decision = "approve_refund";
    detail.decided_by = "someone-else";
  }

  async allEscalated(): Promise<CaseSummary[]> {
    this.guard();
    // deliberately newest first: ordering is the client's job
    return this.details
      .filter((d) => d.state === "escalated")
      .map(summarize)
      .sort((a, b) => b.created_at - a.created_at);
  }

  async caseDetail(caseId: string): Promise<CaseDetail> {
    this.guard();
    return { ...this.find(caseId) };
  }

  async submitDecision(caseId: string, body: DecisionRequest): Promise<CaseDetail> {
    this.guard();
    if (this.dropNextDecision) {
      this.dropNextDecision = false;
      throw new ApiError(0, "API unreachable: socket hang up");
    }
    const detail = this.find(caseId);
    if (detail.state !== "escalated") {
      throw new ApiError(409, `case ${caseId} is not escalated`);
    }
    if (body.action === "reassign") {
      if (!body.label) throw new ApiError(400, "reassign requires a label");
      if (!CLASSES.includes(body.label)) {
        throw new ApiError(400, `unknown reassign label ${body.label}`);
      }
    }
    this.decisions.push({ ...body, case_id: caseId });
    detail.state = "analyst_resolved";
    detail.decision = body.action;
    detail.decided_by = body.analyst_id;
    detail.reassign_label = body.action === "reassign" ? body.label ?? null : null;
    detail.resolved_at = 999;
    return { ...detail };
  }

  async taxonomy(): Promise<TaxonomyDto> {
    this.guard();
    return { classes: [...CLASSES], merged_aliases: {}, verifiable_classes: [CLASSES[5]] };
  }

  async stats(): Promise<StatsDto> {
    this.guard();
    const by_state = { auto_resolved: 0, escalated: 0, analyst_resolved: 0 };
    for (const d of this.details) by_state[d.state] += 1;
    return { total_cases: this.details.length, by_state, by_text_class: {} };
  }
}

/** Three escalated cases handed back newest first by the fake service. */
export function threeCaseFixture(): FakeApi {
  return new FakeApi([
    makeDetail({ id: "case-b", created_at: 20 }),
    makeDetail({ id: "case-c", created_at: 30 }),
    makeDetail({ id: "case-a", created_at: 10 }),
  ]);
}

export function flush(rounds = 4): Promise<void> {
  let chain: Promise<void> = Promise.resolve();
  for (let i = 0; i < rounds; i += 1) {
    chain = chain.then(() => new Promise<void>((resolve) => setTimeout(resolve, 0)));
  }
  return chain;
}
