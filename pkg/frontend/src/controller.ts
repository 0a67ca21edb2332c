/** Queue state machine: load, select, decide, reconcile conflicts.
 *
 * The controller never mutates server state except through the decision
 * endpoint, and after every action it re-reads the queue and the stats so the
 * displayed escalated count always equals the server's.
 */

import { ApiError, TriageApi } from "./api";
import type { CaseDetail, CaseSummary, DecisionAction } from "./types";

export type ApiSurface = Pick<
  TriageApi,
  "allEscalated" | "caseDetail" | "submitDecision" | "taxonomy" | "stats"
>;

export interface QueueState {
  phase: "loading" | "ready" | "error";
  /** Fatal banner with a retry affordance (API unreachable etc). */
  error: string | null;
  /** Transient message: conflicts, validation, confirmations. */
  notice: string | null;
  cases: CaseSummary[];
  escalatedTotal: number;
  taxonomy: string[];
  selectedId: string | null;
  detail: CaseDetail | null;
  detailLoading: boolean;
  submitting: boolean;
}

const INITIAL: QueueState = {
  phase: "loading",
  error: null,
  notice: null,
  cases: [],
  escalatedTotal: 0,
  taxonomy: [],
  selectedId: null,
  detail: null,
  detailLoading: false,
  submitting: false,
};

function oldestFirst(cases: CaseSummary[]): CaseSummary[] {
  return [...cases].sort(
    (a, b) => a.created_at - b.created_at || a.id.localeCompare(b.id),
  );
}

export class ReviewQueueController {
  private listeners = new Set<(state: QueueState) => void>();

  state: QueueState = INITIAL;

  constructor(private readonly api: ApiSurface) {}

  subscribe(listener: (state: QueueState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private setState(patch: Partial<QueueState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async refresh(): Promise<void> {
    this.setState({ phase: "loading", error: null });
    try {
      const [cases, stats, taxonomy] = await Promise.all([
        this.api.allEscalated(),
        this.api.stats(),
        this.state.taxonomy.length
          ? Promise.resolve(null)
          : this.api.taxonomy(),
      ]);
      const sorted = oldestFirst(cases);
      const stillQueued = sorted.some((c) => c.id === this.state.selectedId);
      this.setState({
        phase: "ready",
        cases: sorted,
        escalatedTotal: stats.by_state.escalated,
        taxonomy: taxonomy ? taxonomy.classes : this.state.taxonomy,
        selectedId: stillQueued ? this.state.selectedId : null,
        detail: stillQueued ? this.state.detail : null,
      });
    } catch (error) {
      this.setState({ phase: "error", error: describe(error) });
    }
  }

  async select(caseId: string): Promise<void> {
    this.setState({ selectedId: caseId, detail: null, detailLoading: true, notice: null });
    try {
      const detail = await this.api.caseDetail(caseId);
      if (this.state.selectedId !== caseId) return; // selection moved on
      this.setState({ detail, detailLoading: false });
    } catch (error) {
      this.setState({ detailLoading: false, notice: describe(error) });
      if (error instanceof ApiError && error.status === 404) await this.refresh();
    }
  }

  /** Returns true when the decision was accepted by the server. */
  async decide(action: DecisionAction, analystId: string, label?: string): Promise<boolean> {
    const caseId = this.state.selectedId;
    if (caseId === null || this.state.submitting) return false;
    if (!analystId.trim()) {
      this.setState({ notice: "enter an analyst id before deciding" });
      return false;
    }
    if (action === "reassign" && !label) {
      this.setState({ notice: "pick a label to reassign to" });
      return false;
    }

    // optimistic removal, rolled back if the request never reaches the server
    const before = this.state.cases;
    this.setState({
      submitting: true,
      notice: null,
      cases: before.filter((c) => c.id !== caseId),
    });
    try {
      await this.api.submitDecision(caseId, {
        action,
        analyst_id: analystId,
        ...(label === undefined ? {} : { label }),
      });
      this.setState({
        submitting: false,
        selectedId: null,
        detail: null,
        notice: `${caseId}: ${action} recorded`,
      });
      await this.refresh();
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.setState({
          submitting: false,
          notice: `${caseId} already resolved elsewhere; queue refreshed`,
        });
        await this.refresh();
        return false;
      }
      // not sent (network) or rejected (bad request): restore and offer retry
      this.setState({
        submitting: false,
        cases: before,
        notice: `decision not sent: ${describe(error)}; retry when ready`,
      });
      return false;
    }
  }
}

function describe(error: unknown): string {
  return error instanceof Error ? error.message : String(error);
}
