import { GatewayClient, GatewayError, makeToken } from "./api.js";
import { clear, el, button } from "./dom.js";
import { renderDetail } from "./detail.js";
import type { DetailState } from "./detail.js";
import { renderFilterBar, renderQueue } from "./queue.js";
import type {
  DecisionAction,
  DecisionBody,
  LabelPayload,
  TaskDetail,
  TaskKind,
  TaskSummary,
  TrimPayload,
} from "./types.js";

export interface AppOptions {
  root: HTMLElement;
  client: GatewayClient;
}

interface Banner {
  kind: "offline" | "error";
  message: string;
}

export class ReviewApp {
  private readonly root: HTMLElement;
  private readonly client: GatewayClient;

  private tasks: TaskSummary[] = [];
  private filter: TaskKind | null = null;
  private current: DetailState | null = null;
  private banner: Banner | null = null;
  private loadedOnce = false;

  // One idempotency token per task, kept across failed attempts so a retry
  // of the same intent deduplicates server-side. Dropped once a terminal
  // state is acknowledged.
  private readonly tokens = new Map<string, string>();

  private bannerSlot!: HTMLElement;
  private filterSlot!: HTMLElement;
  private queueSlot!: HTMLElement;
  private detailSlot!: HTMLElement;

  private busy = 0;
  private waiters: Array<() => void> = [];

  constructor(options: AppOptions) {
    this.root = options.root;
    this.client = options.client;
  }

  async start(): Promise<void> {
    clear(this.root);
    const header = el("header", "app-header");
    header.appendChild(el("h1", "app-title", "Review queue"));
    this.bannerSlot = el("div", "banner-slot");
    header.appendChild(this.bannerSlot);
    this.root.appendChild(header);

    const layout = el("main", "layout");
    const aside = el("aside", "queue-pane");
    this.filterSlot = el("div", "filter-slot");
    this.queueSlot = el("div", "queue-slot");
    aside.appendChild(this.filterSlot);
    aside.appendChild(this.queueSlot);
    layout.appendChild(aside);
    this.detailSlot = el("section", "detail-pane");
    layout.appendChild(this.detailSlot);
    this.root.appendChild(layout);

    this.root.ownerDocument.addEventListener("keydown", (event) => {
      this.onKeydown(event as KeyboardEvent);
    });

    await this.runTracked(() => this.refreshQueue());
  }

  whenIdle(): Promise<void> {
    if (this.busy === 0) return Promise.resolve();
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  private async runTracked(work: () => Promise<void>): Promise<void> {
    this.busy += 1;
    try {
      await work();
    } finally {
      this.busy -= 1;
      this.render();
      if (this.busy === 0) {
        for (const wake of this.waiters.splice(0)) wake();
      }
    }
  }

  private onKeydown(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null;
    if (target) {
      const tag = target.tagName;
      if (tag === "INPUT" || tag === "SELECT" || tag === "TEXTAREA") return;
    }
    if (event.key === "a") {
      void this.decide("approve");
    } else if (event.key === "r") {
      void this.decide("reject");
    } else if (event.key === "n") {
      void this.next();
    }
  }

  private async refreshQueue(): Promise<void> {
    try {
      this.tasks = await this.client.queue({ status: "pending" });
      this.banner = null;
      this.loadedOnce = true;
    } catch (error) {
      this.banner = this.bannerFor(error);
    }
  }

  private bannerFor(error: unknown): Banner {
    if (error instanceof GatewayError) {
      return { kind: "error", message: `Gateway error: ${error.message}` };
    }
    return {
      kind: "offline",
      message: "Cannot reach the gateway. Check the server and retry.",
    };
  }

  private visibleTasks(): TaskSummary[] {
    if (this.filter === null) return this.tasks;
    const active = this.filter;
    return this.tasks.filter((task) => task.kind === active);
  }

  private openTask(taskId: string): Promise<void> {
    return this.runTracked(async () => {
      try {
        const task = await this.client.task(taskId);
        this.current = this.freshDetailState(task);
        this.banner = null;
      } catch (error) {
        if (error instanceof GatewayError && error.status === 404) {
          this.current = null;
          await this.refreshQueue();
        } else {
          this.banner = this.bannerFor(error);
        }
      }
    });
  }

  private freshDetailState(task: TaskDetail): DetailState {
    const state: DetailState = {
      task,
      trimDraft: null,
      labelDraft: null,
      note: "",
      submitting: null,
      inlineError: null,
      conflictNotice: null,
      lastDecision: null,
    };
    if (task.kind === "trim_verify") {
      const payload = task.payload as TrimPayload;
      state.trimDraft = { start: payload.start, end: payload.end };
    } else if (task.kind === "label_qc") {
      const payload = task.payload as LabelPayload;
      state.labelDraft = {
        procedures: [...payload.procedures],
        surgery_type: payload.surgery_type,
      };
    }
    return state;
  }

  private next(): Promise<void> {
    const visible = this.visibleTasks();
    if (visible.length === 0) return Promise.resolve();
    const currentId = this.current?.task.task_id;
    const at = visible.findIndex((task) => task.task_id === currentId);
    const target = visible[(at + 1) % visible.length];
    if (target.task_id === currentId) return Promise.resolve();
    return this.openTask(target.task_id);
  }

  private submitCorrection(): Promise<void> {
    const current = this.current;
    if (!current) return Promise.resolve();
    if (current.task.kind === "trim_verify" && current.trimDraft) {
      return this.decide("correct", { ...current.trimDraft });
    }
    if (current.task.kind === "label_qc" && current.labelDraft) {
      return this.decide("correct", {
        procedures: [...current.labelDraft.procedures],
        surgery_type: current.labelDraft.surgery_type,
      });
    }
    return Promise.resolve();
  }

  private decide(
    action: DecisionAction,
    labels?: Record<string, unknown>,
  ): Promise<void> {
    const current = this.current;
    if (!current) return Promise.resolve();
    if (current.task.status !== "pending") return Promise.resolve();
    if (current.submitting !== null) return Promise.resolve();

    const taskId = current.task.task_id;
    const token = this.tokens.get(taskId) ?? makeToken();
    this.tokens.set(taskId, token);

    current.submitting = action;
    current.inlineError = null;
    this.render();

    return this.runTracked(async () => {
      const body: DecisionBody = { action, token, actor: "reviewer" };
      if (labels) body.labels = labels;
      if (current.note.trim()) body.note = current.note.trim();
      try {
        const updated = await this.client.decide(taskId, body);
        // Only the acknowledged response moves the task out of pending.
        this.tokens.delete(taskId);
        this.applyDecided(current, updated, action, labels);
        this.banner = null;
        await this.refreshQueue();
      } catch (error) {
        current.submitting = null;
        await this.handleDecideError(current, taskId, error);
      }
    });
  }

  private async handleDecideError(
    current: DetailState,
    taskId: string,
    error: unknown,
  ): Promise<void> {
    if (error instanceof GatewayError) {
      if (error.status === 409) {
        // Someone else got there first: show the recorded outcome as-is.
        this.tokens.delete(taskId);
        try {
          current.task = await this.client.task(taskId);
          current.conflictNotice =
            "This task was already decided elsewhere; showing the recorded decision.";
          await this.refreshQueue();
        } catch (refreshError) {
          this.banner = this.bannerFor(refreshError);
        }
        return;
      }
      if (error.status === 400) {
        current.inlineError = error.message;
        return;
      }
      if (error.status === 404) {
        current.inlineError = "This task no longer exists.";
        await this.refreshQueue();
        return;
      }
      this.banner = this.bannerFor(error);
      return;
    }
    // Network failure: the decision may or may not have landed. Keep the
    // token so a retry is deduplicated instead of double-recorded.
    this.banner = {
      kind: "offline",
      message: "Cannot reach the gateway. The decision was not confirmed; retry.",
    };
  }

  private applyDecided(
    current: DetailState,
    updated: TaskDetail,
    action: DecisionAction,
    labels?: Record<string, unknown>,
  ): void {
    const before = current.task;
    current.task = updated;
    current.submitting = null;
    current.inlineError = null;
    current.conflictNotice = null;
    if (action === "correct" && labels) {
      current.lastDecision = {
        action,
        oldText: this.describeProposal(before),
        newText: this.describeLabels(before, labels),
      };
    } else {
      current.lastDecision = { action, oldText: "", newText: "" };
    }
  }

  private describeProposal(task: TaskDetail): string {
    if (task.kind === "trim_verify") {
      const payload = task.payload as TrimPayload;
      return `[${payload.start}, ${payload.end}]`;
    }
    if (task.kind === "label_qc") {
      const payload = task.payload as LabelPayload;
      const names = payload.procedures.length ? payload.procedures.join(", ") : "(none)";
      return `${names} / ${payload.surgery_type}`;
    }
    return "";
  }

  private describeLabels(task: TaskDetail, labels: Record<string, unknown>): string {
    if (task.kind === "trim_verify") {
      return `[${labels.start}, ${labels.end}]`;
    }
    if (task.kind === "label_qc") {
      const procedures = labels.procedures as string[];
      const names = procedures.length ? procedures.join(", ") : "(none)";
      return `${names} / ${labels.surgery_type}`;
    }
    return "";
  }

  private render(): void {
    this.renderBanner();
    const queueHandlers = {
      onOpen: (taskId: string) => void this.openTask(taskId),
      onFilter: (kind: string | null) => {
        this.filter = kind as TaskKind | null;
        this.render();
      },
    };
    renderFilterBar(this.filterSlot, this.tasks, this.filter, queueHandlers);
    const visible = this.visibleTasks();
    if (this.banner !== null && !this.loadedOnce) {
      // Never show "no tasks" while the queue is actually unreachable.
      clear(this.queueSlot);
    } else {
      renderQueue(
        this.queueSlot,
        visible,
        this.filter,
        this.current?.task.task_id ?? null,
        queueHandlers,
      );
    }
    renderDetail(this.detailSlot, this.current, {
      onDecide: (action) => void this.decide(action),
      onSubmitCorrection: () => void this.submitCorrection(),
      onTrimDraft: (draft) => {
        if (this.current) {
          this.current.trimDraft = draft;
          this.render();
        }
      },
      onLabelDraftAdd: (procedure) => {
        const draft = this.current?.labelDraft;
        if (draft && !draft.procedures.includes(procedure)) {
          draft.procedures.push(procedure);
          this.render();
        }
      },
      onLabelDraftRemove: (procedure) => {
        const draft = this.current?.labelDraft;
        if (draft) {
          draft.procedures = draft.procedures.filter((name) => name !== procedure);
          this.render();
        }
      },
      onSurgeryType: (surgeryType) => {
        const draft = this.current?.labelDraft;
        if (draft) {
          draft.surgery_type = surgeryType;
          this.render();
        }
      },
      onNoteChange: (note) => {
        if (this.current) this.current.note = note;
      },
      frameUrl: (videoId, index) => this.client.frameUrl(videoId, index),
    });
  }

  private renderBanner(): void {
    clear(this.bannerSlot);
    if (this.banner === null) return;
    const box = el("div", `banner banner-${this.banner.kind}`);
    box.appendChild(el("span", "banner-message", this.banner.message));
    box.appendChild(
      button("banner-retry", "Retry", () => {
        void this.runTracked(async () => {
          await this.refreshQueue();
          const current = this.current;
          if (current && this.banner === null) {
            try {
              current.task = await this.client.task(current.task.task_id);
            } catch {
              // Queue refresh succeeded; leave the stale detail in place.
            }
          }
        });
      }),
    );
    this.bannerSlot.appendChild(box);
  }
}

export function createApp(options: AppOptions): ReviewApp {
  return new ReviewApp(options);
}
