import { button, clear, el, formatPercent } from "./dom.js";
import { KIND_LABELS, PROCEDURES, STORYBOARD_GUIDANCE, SURGERY_TYPES } from "./vocabulary.js";
import type {
  DecisionAction,
  LabelDraft,
  LabelPayload,
  StoryboardPayload,
  TaskDetail,
  TrimDraft,
  TrimPayload,
} from "./types.js";

export interface DetailHandlers {
  onDecide(action: DecisionAction): void;
  onSubmitCorrection(): void;
  onTrimDraft(draft: TrimDraft): void;
  onLabelDraftAdd(procedure: string): void;
  onLabelDraftRemove(procedure: string): void;
  onSurgeryType(surgeryType: string): void;
  onNoteChange(note: string): void;
  frameUrl(videoId: string, index: number): string;
}

export interface DetailState {
  task: TaskDetail;
  trimDraft: TrimDraft | null;
  labelDraft: LabelDraft | null;
  note: string;
  submitting: DecisionAction | null;
  inlineError: string | null;
  conflictNotice: string | null;
  // What was just decided, for the old -> new line on corrections.
  lastDecision: { action: DecisionAction; oldText: string; newText: string } | null;
}

function provenanceBadge(provenance: Record<string, string>, field: string): HTMLElement {
  const source = provenance[field] ?? "unknown";
  return el("span", `provenance provenance-${source}`, source);
}

function actionBar(state: DetailState, handlers: DetailHandlers): HTMLElement {
  const bar = el("div", "actions");
  const busy = state.submitting !== null;
  const approve = button("action approve", "Approve (a)", () => handlers.onDecide("approve"));
  const reject = button("action reject", "Reject (r)", () => handlers.onDecide("reject"));
  approve.disabled = busy;
  reject.disabled = busy;
  bar.appendChild(approve);
  bar.appendChild(reject);

  const note = el("input", "note") as HTMLInputElement;
  note.type = "text";
  note.placeholder = "note (kept with the decision)";
  note.value = state.note;
  note.addEventListener("input", () => handlers.onNoteChange(note.value));
  bar.appendChild(note);

  if (busy) {
    bar.appendChild(el("span", "submitting", `submitting ${state.submitting}...`));
  }
  return bar;
}

function decidedPanel(state: DetailState): HTMLElement {
  const task = state.task;
  const panel = el("div", "decided");
  const who = task.decided_by ? ` by ${task.decided_by}` : "";
  panel.appendChild(el("p", `status status-${task.status}`, `${task.status}${who}`));
  if (task.note) panel.appendChild(el("p", "decision-note", `note: ${task.note}`));
  const last = state.lastDecision;
  if (last && last.action === "correct") {
    panel.appendChild(el("p", "old-new", `${last.oldText} → ${last.newText}`));
  }
  return panel;
}

function storyboardView(
  state: DetailState,
  payload: StoryboardPayload,
  handlers: DetailHandlers,
): HTMLElement {
  const view = el("section", "detail-storyboard");
  view.appendChild(el("h2", "video-title", payload.title));
  view.appendChild(el("p", "guidance", STORYBOARD_GUIDANCE));
  const img = el("img", "storyboard") as HTMLImageElement;
  img.src = payload.storyboard_url;
  img.alt = `storyboard of ${state.task.video_id}`;
  img.addEventListener("error", () => {
    img.replaceWith(el("div", "placeholder storyboard", "storyboard unavailable"));
  });
  view.appendChild(img);
  view.appendChild(
    el("p", "meta", `${payload.keyframe_indices.length} key frames, 1 fps`),
  );
  if (state.task.status === "pending") {
    view.appendChild(actionBar(state, handlers));
  }
  return view;
}

function stripTile(
  state: DetailState,
  frame: { index: number; p_surgical: number },
  draft: TrimDraft,
  handlers: DetailHandlers,
): HTMLElement {
  const tile = el("figure", "tile");
  tile.dataset.index = String(frame.index);
  if (frame.index === draft.start) tile.classList.add("marker-start");
  if (frame.index === draft.end) tile.classList.add("marker-end");
  if (frame.index >= draft.start && frame.index <= draft.end) {
    tile.classList.add("inside");
  } else {
    tile.classList.add("outside");
  }
  const img = el("img", "frame") as HTMLImageElement;
  img.src = handlers.frameUrl(state.task.video_id, frame.index);
  img.alt = `frame ${frame.index}`;
  // A missing frame must not block the decision: swap in a placeholder.
  img.addEventListener("error", () => {
    tile.classList.add("placeholder");
    img.replaceWith(el("div", "placeholder-box", "missing"));
  });
  tile.appendChild(img);
  const caption = el("figcaption");
  caption.appendChild(el("span", "frame-index", String(frame.index)));
  caption.appendChild(el("span", "p-surgical", frame.p_surgical.toFixed(2)));
  tile.appendChild(caption);
  return tile;
}

function nudgeControls(
  payload: TrimPayload,
  draft: TrimDraft,
  busy: boolean,
  handlers: DetailHandlers,
): HTMLElement {
  const controls = el("div", "nudge");
  const last = payload.frame_count - 1;
  const clamp = (v: number) => Math.max(0, Math.min(last, v));
  const make = (label: string, cls: string, next: () => TrimDraft) => {
    const b = button(`nudge-button ${cls}`, label, () => handlers.onTrimDraft(next()));
    b.disabled = busy;
    return b;
  };
  controls.appendChild(el("span", "nudge-label", "start"));
  controls.appendChild(
    make("−", "start-minus", () => ({ ...draft, start: clamp(draft.start - 1) })),
  );
  controls.appendChild(el("span", "draft-start", String(draft.start)));
  controls.appendChild(
    make("+", "start-plus", () => ({
      ...draft,
      start: Math.min(clamp(draft.start + 1), draft.end),
    })),
  );
  controls.appendChild(el("span", "nudge-label", "end"));
  controls.appendChild(
    make("−", "end-minus", () => ({
      ...draft,
      end: Math.max(clamp(draft.end - 1), draft.start),
    })),
  );
  controls.appendChild(el("span", "draft-end", String(draft.end)));
  controls.appendChild(
    make("+", "end-plus", () => ({ ...draft, end: clamp(draft.end + 1) })),
  );
  return controls;
}

function trimView(
  state: DetailState,
  payload: TrimPayload,
  handlers: DetailHandlers,
): HTMLElement {
  const view = el("section", "detail-trim");
  const draft = state.trimDraft ?? { start: payload.start, end: payload.end };
  view.appendChild(el("h2", "video-title", state.task.video?.title ?? state.task.video_id));
  view.appendChild(
    el(
      "p",
      "meta",
      `proposed window [${payload.start}, ${payload.end}] of ${payload.frame_count} frames, ` +
        `${formatPercent(payload.fraction)} non-surgical inside`,
    ),
  );

  const strip = el("div", "strip");
  for (const frame of payload.strip) {
    strip.appendChild(stripTile(state, frame, draft, handlers));
  }
  view.appendChild(strip);

  if (state.task.status === "pending") {
    view.appendChild(nudgeControls(payload, draft, state.submitting !== null, handlers));
    const changed = draft.start !== payload.start || draft.end !== payload.end;
    if (changed) {
      const submit = button(
        "action submit-correction",
        `Submit corrected window [${draft.start}, ${draft.end}]`,
        () => handlers.onSubmitCorrection(),
      );
      submit.disabled = state.submitting !== null;
      view.appendChild(submit);
      view.appendChild(
        button("action reset", "Reset", () =>
          handlers.onTrimDraft({ start: payload.start, end: payload.end }),
        ),
      );
    }
    view.appendChild(actionBar(state, handlers));
  }
  return view;
}

function labelView(
  state: DetailState,
  payload: LabelPayload,
  handlers: DetailHandlers,
): HTMLElement {
  const view = el("section", "detail-label");
  const draft = state.labelDraft ?? {
    procedures: [...payload.procedures],
    surgery_type: payload.surgery_type,
  };
  view.appendChild(el("h2", "video-title", payload.title));

  const proposal = el("div", "proposal");
  proposal.appendChild(el("span", "meta", "proposed:"));
  proposal.appendChild(provenanceBadge(payload.provenance, "procedures"));
  for (const procedure of payload.procedures) {
    proposal.appendChild(el("span", "chip proposed", procedure));
  }
  if (payload.procedures.length === 0) {
    proposal.appendChild(el("span", "meta", "(none)"));
  }
  view.appendChild(proposal);

  if (payload.llm) {
    view.appendChild(
      el(
        "p",
        "llm-note",
        `LLM fallback: ${payload.llm.status}${payload.llm.reason ? ` (${payload.llm.reason})` : ""}`,
      ),
    );
  }

  const pending = state.task.status === "pending";
  const editor = el("div", "label-editor");
  const chips = el("div", "chips");
  for (const procedure of draft.procedures) {
    const chip = el("span", "chip", procedure);
    if (pending) {
      const remove = button("chip-remove", "×", () =>
        handlers.onLabelDraftRemove(procedure),
      );
      chip.appendChild(remove);
    }
    chips.appendChild(chip);
  }
  editor.appendChild(chips);

  if (pending) {
    const picker = el("select", "vocab") as HTMLSelectElement;
    const head = el("option", "", "add a procedure...") as HTMLOptionElement;
    head.value = "";
    picker.appendChild(head);
    for (const name of PROCEDURES) {
      const option = el("option", "", name) as HTMLOptionElement;
      option.value = name;
      picker.appendChild(option);
    }
    picker.addEventListener("change", () => {
      if (picker.value) handlers.onLabelDraftAdd(picker.value);
      picker.value = "";
    });
    editor.appendChild(picker);

    const typeRow = el("div", "surgery-type");
    typeRow.appendChild(provenanceBadge(payload.provenance, "surgery_type"));
    for (const surgeryType of SURGERY_TYPES) {
      const b = button(
        draft.surgery_type === surgeryType ? "type-option active" : "type-option",
        surgeryType,
        () => handlers.onSurgeryType(surgeryType),
      );
      b.disabled = state.submitting !== null;
      typeRow.appendChild(b);
    }
    editor.appendChild(typeRow);
  } else {
    const typeRow = el("div", "surgery-type");
    typeRow.appendChild(el("span", "meta", draft.surgery_type));
    editor.appendChild(typeRow);
  }
  view.appendChild(editor);

  if (pending) {
    const changed =
      draft.surgery_type !== payload.surgery_type ||
      draft.procedures.length !== payload.procedures.length ||
      draft.procedures.some((p, i) => p !== payload.procedures[i]);
    if (changed) {
      const submit = button("action submit-correction", "Submit corrected labels", () =>
        handlers.onSubmitCorrection(),
      );
      submit.disabled = state.submitting !== null;
      view.appendChild(submit);
    }
    view.appendChild(actionBar(state, handlers));
  }
  return view;
}

export function renderDetail(
  container: HTMLElement,
  state: DetailState | null,
  handlers: DetailHandlers,
): void {
  clear(container);
  if (state === null) {
    container.appendChild(
      el("p", "empty-state", "Select a task from the queue to review it."),
    );
    return;
  }
  const task = state.task;
  const header = el("div", "detail-header");
  header.appendChild(el("span", `kind kind-${task.kind}`, KIND_LABELS[task.kind] ?? task.kind));
  header.appendChild(el("span", "task-id", task.task_id));
  header.appendChild(el("span", "video-id", task.video_id));
  container.appendChild(header);

  if (state.conflictNotice) {
    container.appendChild(el("p", "notice conflict", state.conflictNotice));
  }
  if (state.inlineError) {
    container.appendChild(el("p", "inline-error", state.inlineError));
  }
  if (task.status !== "pending") {
    container.appendChild(decidedPanel(state));
  }

  switch (task.kind) {
    case "storyboard_verify":
      container.appendChild(
        storyboardView(state, task.payload as StoryboardPayload, handlers),
      );
      break;
    case "trim_verify":
      container.appendChild(trimView(state, task.payload as TrimPayload, handlers));
      break;
    case "label_qc":
      container.appendChild(labelView(state, task.payload as LabelPayload, handlers));
      break;
  }
}
