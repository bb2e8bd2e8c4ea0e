import { button, clear, el, formatAge } from "./dom.js";
import { KIND_LABELS, KINDS } from "./vocabulary.js";
import type { TaskSummary } from "./types.js";

export interface QueueHandlers {
  onOpen(taskId: string): void;
  onFilter(kind: string | null): void;
}

export function countsByKind(tasks: TaskSummary[]): Map<string, number> {
  const counts = new Map<string, number>();
  for (const task of tasks) {
    counts.set(task.kind, (counts.get(task.kind) ?? 0) + 1);
  }
  return counts;
}

// Filter buttons with a per-kind pending count badge. Counts always reflect
// the full pending queue, not the active filter.
export function renderFilterBar(
  container: HTMLElement,
  allPending: TaskSummary[],
  activeKind: string | null,
  handlers: QueueHandlers,
): void {
  clear(container);
  const counts = countsByKind(allPending);
  const allButton = button(
    activeKind === null ? "filter active" : "filter",
    "All",
    () => handlers.onFilter(null),
  );
  const allBadge = el("span", "badge", String(allPending.length));
  allButton.appendChild(allBadge);
  container.appendChild(allButton);
  for (const kind of KINDS) {
    const b = button(
      activeKind === kind ? "filter active" : "filter",
      KIND_LABELS[kind],
      () => handlers.onFilter(kind),
    );
    b.dataset.kind = kind;
    const badge = el("span", "badge", String(counts.get(kind) ?? 0));
    b.appendChild(badge);
    container.appendChild(b);
  }
}

// Rows render in exactly the order the API returned them; the server owns
// the oldest-first contract.
export function renderQueue(
  container: HTMLElement,
  tasks: TaskSummary[],
  activeKind: string | null,
  currentTaskId: string | null,
  handlers: QueueHandlers,
): void {
  clear(container);
  if (tasks.length === 0) {
    const kindName = activeKind ? KIND_LABELS[activeKind] ?? activeKind : null;
    const message = kindName
      ? `No pending ${kindName} tasks.`
      : "No pending tasks. All reviews are done.";
    container.appendChild(el("p", "empty-state", message));
    return;
  }
  const list = el("ul", "task-list");
  for (const task of tasks) {
    const item = el("li");
    const row = button("task-row", "", () => handlers.onOpen(task.task_id));
    if (task.task_id === currentTaskId) row.classList.add("selected");
    row.dataset.taskId = task.task_id;
    row.appendChild(el("span", `kind kind-${task.kind}`, KIND_LABELS[task.kind] ?? task.kind));
    row.appendChild(el("span", "video-id", task.video_id));
    row.appendChild(el("span", "age", formatAge(task.created_at)));
    if (task.status !== "pending") {
      row.appendChild(el("span", `status status-${task.status}`, task.status));
    }
    item.appendChild(row);
    list.appendChild(item);
  }
  container.appendChild(list);
}
