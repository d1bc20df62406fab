import { ApiClient, ApiError } from "./api.js";
import type { QueueItem, RoundReport, StatusSnapshot } from "./types.js";

export interface ConsoleOptions {
  annotator?: string;
  pollMs?: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** A number cell annotated with the service response field it came from. */
function metric(label: string, field: string, value: string): HTMLElement {
  const wrap = el("span", "metric");
  wrap.append(el("span", "metric-label", label));
  const num = el("span", "metric-value", value);
  num.dataset.field = field;
  wrap.append(num);
  return wrap;
}

function fmt(value: number | null): string {
  return value === null ? "—" : value.toFixed(4);
}

/** Single-run labeling console: polls run status, surfaces the labeling queue
 * while the loop is suspended, and posts one label per judgment. */
export class LabelingConsole {
  private queue: QueueItem[] = [];
  private reports: RoundReport[] = [];
  private status: StatusSnapshot | null = null;
  private notice = "";
  private timer: ReturnType<typeof setInterval> | null = null;
  /** Last in-flight judgment; tests await this to settle the DOM. */
  lastAction: Promise<void> = Promise.resolve();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly runId: string,
    private readonly options: ConsoleOptions = {},
  ) {}

  start(): void {
    this.stop();
    const pollMs = this.options.pollMs ?? 1500;
    this.timer = setInterval(() => void this.refresh(), pollMs);
    void this.refresh();
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async refresh(): Promise<void> {
    try {
      this.status = await this.api.getStatus(this.runId);
      this.reports = await this.api.getReports(this.runId);
      if (this.status.status === "awaiting_labels") {
        this.queue = await this.api.getQueue(this.runId);
      } else {
        this.queue = [];
      }
      this.notice = "";
    } catch (err) {
      this.notice = err instanceof ApiError ? err.message : String(err);
    }
    this.render();
  }

  private judge(pairId: string, y: 0 | 1): void {
    this.lastAction = (async () => {
      try {
        const outcome = await this.api.submitLabel(
          this.runId,
          pairId,
          y,
          this.options.annotator ?? "console",
        );
        const result = outcome.results[0];
        if (result && result.accepted) {
          this.queue = this.queue.filter((item) => item.pair_id !== pairId);
        } else {
          this.notice = result?.reason ?? "label rejected";
        }
        if (this.status) this.status.pending_count = outcome.remaining;
        if (outcome.remaining === 0) {
          await this.refresh();
          return;
        }
      } catch (err) {
        this.notice = err instanceof ApiError ? err.message : String(err);
      }
      this.render();
    })();
  }

  private render(): void {
    this.root.textContent = "";
    if (this.notice) {
      this.root.append(el("p", "notice", this.notice));
    }
    if (!this.status) {
      this.root.append(el("p", "empty", "Waiting for run status…"));
      return;
    }
    this.root.append(this.renderStatusBar(this.status));
    if (this.status.status === "awaiting_labels") {
      this.root.append(this.renderQueue());
    } else {
      const phase = el(
        "p",
        `phase phase-${this.status.status}`,
        this.status.status === "done"
          ? "Run complete."
          : `Model is ${this.status.status.replace("_", " ")}; queue is empty.`,
      );
      phase.dataset.field = "status.status";
      this.root.append(phase);
    }
    if (this.status.error) {
      this.root.append(el("p", "notice", this.status.error));
    }
    if (this.reports.length > 0) {
      this.root.append(this.renderReports());
    }
  }

  private renderStatusBar(status: StatusSnapshot): HTMLElement {
    const bar = el("header", "status-bar");
    const state = el("span", `state state-${status.status}`, status.status);
    state.dataset.field = "status.status";
    bar.append(state);
    bar.append(
      metric(
        "round",
        "status.round_index",
        `${status.round_index}/${status.rounds_total}`,
      ),
    );
    bar.append(
      metric("labeled", "status.labeled_count", String(status.labeled_count)),
    );
    bar.append(
      metric("pending", "status.pending_count", String(status.pending_count)),
    );
    return bar;
  }

  private renderQueue(): HTMLElement {
    const section = el("section", "queue");
    section.append(el("h2", undefined, "Labeling queue"));
    const list = el("ol", "queue-list");
    for (const item of this.queue) {
      list.append(this.renderCard(item));
    }
    section.append(list);
    return section;
  }

  private renderCard(item: QueueItem): HTMLElement {
    const card = el("li", "pair-card");
    card.dataset.pairId = item.pair_id;

    const head = el("div", "pair-head");
    const pairId = el("span", "pair-id", item.pair_id);
    pairId.dataset.field = "queue.pair_id";
    head.append(pairId);
    const p = el("span", "pair-p", item.p.toFixed(3));
    p.dataset.field = "queue.p";
    head.append(el("span", "pair-p-label", "model p(dup)"), p);
    card.append(head);

    card.append(this.renderRecords(item));

    const actions = el("div", "pair-actions");
    const dup = el("button", "button-dup", "Duplicate");
    dup.addEventListener("click", () => this.judge(item.pair_id, 1));
    const distinct = el("button", "button-distinct", "Distinct");
    distinct.addEventListener("click", () => this.judge(item.pair_id, 0));
    actions.append(dup, distinct);
    card.append(actions);
    return card;
  }

  private renderRecords(item: QueueItem): HTMLElement {
    const table = el("table", "pair-fields");
    const head = el("tr");
    const leftHead = el("th", undefined, item.left_id);
    leftHead.dataset.field = "queue.left_id";
    const rightHead = el("th", undefined, item.right_id);
    rightHead.dataset.field = "queue.right_id";
    head.append(el("th", undefined, "field"), leftHead, rightHead);
    table.append(head);
    const attrs = new Set([...Object.keys(item.left), ...Object.keys(item.right)]);
    for (const attr of attrs) {
      const row = el("tr");
      const left = item.left[attr] ?? "";
      const right = item.right[attr] ?? "";
      if (left !== right) row.className = "differs";
      row.append(
        el("td", "attr", attr),
        el("td", undefined, left),
        el("td", undefined, right),
      );
      table.append(row);
    }
    return table;
  }

  private renderReports(): HTMLElement {
    const section = el("section", "reports");
    section.append(el("h2", undefined, "Round reports"));
    const table = el("table", "report-table");
    const head = el("tr");
    for (const col of ["round", "strategy", "precision", "recall", "F1", "labeled"]) {
      head.append(el("th", undefined, col));
    }
    table.append(head);
    for (const report of this.reports) {
      const row = el("tr");
      const cells: [string, string][] = [
        ["reports.round_index", String(report.round_index)],
        ["reports.strategy", report.strategy],
        ["reports.precision", fmt(report.precision)],
        ["reports.recall", fmt(report.recall)],
        ["reports.f1", fmt(report.f1)],
        ["reports.labeled_count", String(report.labeled_count)],
      ];
      for (const [field, text] of cells) {
        const cell = el("td", undefined, text);
        cell.dataset.field = field;
        row.append(cell);
      }
      table.append(row);
    }
    section.append(table);
    return section;
  }
}
