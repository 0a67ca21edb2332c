/** Thin typed fetch wrapper over the triage service endpoints. */

import type {
  CaseDetail,
  CaseSummary,
  DecisionRequest,
  QueuePageDto,
  StatsDto,
  TaxonomyDto,
} from "./types";

export class ApiError extends Error {
  /** status 0 means the request never reached the service. */
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class TriageApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (error) {
      const reason = error instanceof Error ? error.message : String(error);
      throw new ApiError(0, `API unreachable: ${reason}`);
    }
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  escalatedPage(page: number, pageSize = 50): Promise<QueuePageDto> {
    return this.request<QueuePageDto>(
      `/api/cases?state=escalated&page=${page}&page_size=${pageSize}`,
    );
  }

  /** Every escalated case, walking the queue pages in order. */
  async allEscalated(): Promise<CaseSummary[]> {
    const cases: CaseSummary[] = [];
    let page = 1;
    for (;;) {
      const dto = await this.escalatedPage(page);
      cases.push(...dto.items);
      if (page >= dto.total_pages || dto.items.length === 0) return cases;
      page += 1;
    }
  }

  caseDetail(caseId: string): Promise<CaseDetail> {
    return this.request<CaseDetail>(`/api/cases/${encodeURIComponent(caseId)}`);
  }

  submitDecision(caseId: string, body: DecisionRequest): Promise<CaseDetail> {
    return this.request<CaseDetail>(`/api/cases/${encodeURIComponent(caseId)}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  taxonomy(): Promise<TaxonomyDto> {
    return this.request<TaxonomyDto>("/api/taxonomy");
  }

  stats(): Promise<StatsDto> {
    return this.request<StatsDto>("/api/stats");
  }
}
