/** DOM rendering for the review queue. No framework: the whole view is
 * re-rendered from QueueState on every change, which keeps it honest about
 * deriving everything from state.
 *
 * Elements carry data-role attributes so tests can target them without
 * coupling to styling.
 */

import { blendOverlay, decodePixmap, toRgba } from "./heatmap";
import type { QueueState, ReviewQueueController } from "./controller";
import type { CaseDetail } from "./types";

export class ReviewQueueView {
  /** Survives re-renders so slider drags don't reset the analyst id. */
  private analystId = "";
  private overlayOn = true;
  private opacity = 0.4;

  constructor(
    private readonly root: HTMLElement,
    private readonly controller: ReviewQueueController,
  ) {
    controller.subscribe((state) => this.render(state));
  }

  render(state: QueueState): void {
    this.root.textContent = "";
    if (state.error !== null) this.root.append(this.banner(state.error));
    if (state.notice !== null) this.root.append(this.notice(state.notice));

    const layout = el("div", { class: "layout" });
    layout.append(this.queuePanel(state), this.casePanel(state));
    this.root.append(layout);
  }

  private banner(message: string): HTMLElement {
    const banner = el("div", { class: "error-banner", "data-role": "error-banner" });
    banner.append(el("span", {}, message));
    const retry = el("button", { "data-role": "retry" }, "Retry") as HTMLButtonElement;
    retry.addEventListener("click", () => void this.controller.refresh());
    banner.append(retry);
    return banner;
  }

  private notice(message: string): HTMLElement {
    return el("div", { class: "notice", "data-role": "notice" }, message);
  }

  private queuePanel(state: QueueState): HTMLElement {
    const panel = el("section", { class: "queue" });
    panel.append(
      el(
        "h2",
        { "data-role": "queue-header" },
        state.phase === "loading" ? "Escalated (loading)" : `Escalated (${state.escalatedTotal})`,
      ),
    );
    const list = el("ul", { "data-role": "queue-list" });
    for (const item of state.cases) {
      const row = el("li", {
        "data-role": "queue-item",
        "data-case-id": item.id,
        class: item.id === state.selectedId ? "selected" : "",
      });
      const open = el("button", { "data-role": "open-case" }) as HTMLButtonElement;
      open.append(
        el("span", { class: "case-id" }, item.id),
        el("span", { class: "case-class" }, item.text_class ?? "(no text signal)"),
        el("span", { class: "case-reason" }, item.reason ?? ""),
      );
      open.addEventListener("click", () => void this.controller.select(item.id));
      row.append(open);
      list.append(row);
    }
    panel.append(list);
    return panel;
  }

  private casePanel(state: QueueState): HTMLElement {
    const panel = el("section", { class: "case", "data-role": "case-panel" });
    if (state.selectedId === null) {
      panel.append(el("p", {}, "Select a case to review."));
      return panel;
    }
    if (state.detailLoading || state.detail === null) {
      panel.append(el("p", {}, `Loading ${state.selectedId}...`));
      return panel;
    }
    const detail = state.detail;
    panel.append(el("h2", {}, detail.id));
    panel.append(el("p", { "data-role": "case-state" }, `state: ${detail.state}`));
    panel.append(
      el("blockquote", { "data-role": "comment" }, detail.record.comment),
    );
    panel.append(this.predictionBlock(detail));
    if (detail.reason !== null) {
      panel.append(el("p", { "data-role": "reason" }, `reason: ${detail.reason}`));
    }
    panel.append(this.imagePanel(detail));
    panel.append(this.decisionControls(state, detail));
    return panel;
  }

  private predictionBlock(detail: CaseDetail): HTMLElement {
    const block = el("div", { class: "prediction" });
    if (detail.text_prediction === null) {
      block.append(el("p", {}, "no text prediction"));
      return block;
    }
    const { class: label, confidence } = detail.text_prediction;
    block.append(
      el(
        "p",
        { "data-role": "text-prediction" },
        `${label} (${(confidence * 100).toFixed(1)}%)`,
      ),
    );
    const bar = el("div", { class: "confidence-track" });
    bar.append(
      el("div", {
        class: "confidence-fill",
        "data-role": "confidence-bar",
        style: `width: ${(confidence * 100).toFixed(1)}%`,
      }),
    );
    block.append(bar);
    for (const [kind, verdict] of Object.entries(detail.image_verdicts)) {
      if (verdict === null) continue;
      block.append(
        el(
          "p",
          { "data-role": `verdict-${kind}` },
          `${kind}: ${verdict.verdict} (${(verdict.confidence * 100).toFixed(1)}%)`,
        ),
      );
    }
    return block;
  }

  private imagePanel(detail: CaseDetail): HTMLElement {
    const panel = el("div", { class: "image-panel", "data-role": "image-panel" });
    if (detail.image === null) {
      panel.append(el("p", {}, "no photo attached"));
      return panel;
    }
    const canvas = el("canvas", { "data-role": "photo" }) as HTMLCanvasElement;
    panel.append(canvas);

    if (detail.heatmap !== null) {
      const toggle = el("label", { "data-role": "overlay-toggle" });
      const box = el("input", { type: "checkbox" }) as HTMLInputElement;
      box.checked = this.overlayOn;
      box.addEventListener("change", () => {
        this.overlayOn = box.checked;
        this.paint(canvas, detail);
      });
      toggle.append(box, el("span", {}, "damage heatmap"));
      panel.append(toggle);

      const slider = el("input", {
        type: "range",
        min: "0",
        max: "100",
        "data-role": "overlay-opacity",
      }) as HTMLInputElement;
      slider.value = String(Math.round(this.opacity * 100));
      slider.addEventListener("input", () => {
        this.opacity = Number(slider.value) / 100;
        this.paint(canvas, detail);
      });
      panel.append(slider);
    }
    this.paint(canvas, detail);
    return panel;
  }

  private paint(canvas: HTMLCanvasElement, detail: CaseDetail): void {
    if (detail.image === null) return;
    const base = decodePixmap(detail.image);
    const shown =
      detail.heatmap !== null && this.overlayOn
        ? blendOverlay(base, decodePixmap(detail.heatmap), this.opacity)
        : base;
    canvas.width = shown.width;
    canvas.height = shown.height;
    // jsdom has no canvas backend; skip painting there so tests can run
    const ctx = canvas.getContext("2d");
    if (ctx !== null) {
      const frame = ctx.createImageData(shown.width, shown.height);
      frame.data.set(toRgba(shown));
      ctx.putImageData(frame, 0, 0);
    }
  }

  private decisionControls(state: QueueState, detail: CaseDetail): HTMLElement {
    const controls = el("form", { class: "decisions", "data-role": "decision-controls" });
    controls.addEventListener("submit", (event) => event.preventDefault());
    const actionable = detail.state === "escalated" && !state.submitting;

    const analyst = el("input", {
      type: "text",
      placeholder: "analyst id",
      "data-role": "analyst-id",
    }) as HTMLInputElement;
    analyst.value = this.analystId;
    analyst.addEventListener("input", () => {
      this.analystId = analyst.value;
    });
    controls.append(analyst);

    const reassignTo = el("select", { "data-role": "reassign-label" }) as HTMLSelectElement;
    reassignTo.append(el("option", { value: "" }, "reassign to..."));
    for (const label of state.taxonomy) {
      reassignTo.append(el("option", { value: label }, label));
    }

    const button = (action: "approve_refund" | "reject" | "reassign", text: string) => {
      const b = el("button", { type: "button", "data-role": action }, text) as HTMLButtonElement;
      b.disabled = !actionable;
      b.addEventListener("click", () => {
        const label = action === "reassign" ? reassignTo.value || undefined : undefined;
        void this.controller.decide(action, this.analystId, label);
      });
      return b;
    };
    controls.append(
      button("approve_refund", "Approve refund"),
      button("reject", "Reject"),
      reassignTo,
      button("reassign", "Reassign"),
    );
    reassignTo.disabled = !actionable;
    if (!actionable) {
      controls.append(
        el("p", { "data-role": "controls-note" }, "decisions are open only for escalated cases"),
      );
    }
    return controls;
  }
}

function el(
  tag: string,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class" && value === "") continue;
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}
