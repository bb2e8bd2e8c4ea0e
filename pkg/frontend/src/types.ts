// Shapes of everything the gateway API sends and receives. Field names
// mirror the wire format exactly; nothing here is invented client-side.

export type TaskKind = "storyboard_verify" | "trim_verify" | "label_qc";

export type TaskStatus = "pending" | "approved" | "rejected" | "corrected";

export type DecisionAction = "approve" | "reject" | "correct";

export interface TaskSummary {
  task_id: string;
  video_id: string;
  kind: TaskKind;
  status: TaskStatus;
  created_at: number;
}

export interface QueueResponse {
  tasks: TaskSummary[];
}

export interface StoryboardPayload {
  title: string;
  keyframe_indices: number[];
  storyboard_url: string;
}

export interface StripFrame {
  index: number;
  p_surgical: number;
}

export interface TrimPayload {
  start: number;
  end: number;
  fraction: number;
  frame_count: number;
  strip: StripFrame[];
}

export interface LlmOutcome {
  status: string;
  reason: string | null;
}

export interface LabelPayload {
  title: string;
  procedures: string[];
  surgery_type: string;
  provenance: Record<string, string>;
  llm?: LlmOutcome;
}

export type TaskPayload = StoryboardPayload | TrimPayload | LabelPayload;

// A stage value is "pending", "passed", or {rejected: reason}.
export type StageState = string | { rejected: string };

export interface VideoContext {
  video_id: string;
  title: string;
  duration_s: number;
  stage_status: Record<string, StageState>;
}

export interface TaskDetail {
  task_id: string;
  video_id: string;
  kind: TaskKind;
  payload: TaskPayload;
  seq: number;
  created_at: number;
  status: TaskStatus;
  decided_by: string | null;
  decided_at: number | null;
  note: string | null;
  decided_token: string | null;
  video: VideoContext | null;
}

export interface DecisionBody {
  action: DecisionAction;
  labels?: Record<string, unknown>;
  note?: string;
  token?: string;
  actor?: string;
}

// Drafts of a pending correction, kept client-side until submitted.
export interface TrimDraft {
  start: number;
  end: number;
}

export interface LabelDraft {
  procedures: string[];
  surgery_type: string;
}
