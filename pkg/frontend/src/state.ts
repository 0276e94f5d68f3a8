/** Review-session state and the pure transition/validation rules.
 *
 * The server is the single source of truth: this state only mirrors what
 * the API returned plus in-flight edits for the frame under review.
 */

import { FrameView, WindowDetail, WindowSummary } from "./api.js";

export type Overlay = "none" | "binary" | "instance";

export interface FrameEdit {
  keep: boolean;
  label: "Yes" | "No";
  explanation: string;
}

export interface SessionState {
  windows: WindowSummary[];
  windowIndex: number;
  detail: WindowDetail | null;
  frameIndex: number;
  overlay: Overlay;
  edits: Map<string, FrameEdit>;
}

export const SUGGESTION_CHIPS = [
  "faded laneline",
  "occlusion",
  "low contrast",
  "sharp curve",
] as const;

export function initialState(): SessionState {
  return {
    windows: [],
    windowIndex: 0,
    detail: null,
    frameIndex: 0,
    overlay: "none",
    edits: new Map(),
  };
}

export function currentFrame(state: SessionState): FrameView | null {
  if (!state.detail) return null;
  return state.detail.frames[state.frameIndex] ?? null;
}

export function editFor(state: SessionState, frame: FrameView): FrameEdit {
  const existing = state.edits.get(frame.sample_id);
  if (existing) return existing;
  return {
    keep: frame.keep,
    label: frame.label === "Yes" ? "Yes" : "No",
    explanation: frame.explanation,
  };
}

export function stepFrame(state: SessionState, delta: number): number {
  if (!state.detail) return 0;
  const count = state.detail.frames.length;
  return Math.min(Math.max(state.frameIndex + delta, 0), count - 1);
}

export function stepWindow(state: SessionState, delta: number): number {
  const count = state.windows.length;
  if (count === 0) return 0;
  return Math.min(Math.max(state.windowIndex + delta, 0), count - 1);
}

export function toggleOverlay(current: Overlay, requested: Overlay): Overlay {
  return current === requested ? "none" : requested;
}

/** Mirror of the server-side rule so bad posts never leave the browser. */
export function validateEdit(edit: FrameEdit): string | null {
  if (edit.keep && edit.label === "Yes" && edit.explanation.trim() === "") {
    return "A Yes label needs an explanation before it can be saved.";
  }
  return null;
}

export function appendChip(explanation: string, chip: string): string {
  const trimmed = explanation.trim();
  if (trimmed === "") return chip;
  if (trimmed.includes(chip)) return trimmed;
  return `${trimmed}, ${chip}`;
}
