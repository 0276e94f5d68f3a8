/** DOM application: window list, frame cards with mask overlays, keyboard review. */

import { ApiClient, ApiError, FrameView } from "./api.js";
import { colorizeBuffer } from "./mask.js";
import { AnnotationQueue } from "./queue.js";
import {
  SUGGESTION_CHIPS,
  SessionState,
  appendChip,
  currentFrame,
  editFor,
  initialState,
  stepFrame,
  stepWindow,
  toggleOverlay,
  validateEdit,
} from "./state.js";

const RETRY_DELAY_MS = 2500;

export class AnnotatorApp {
  private state: SessionState = initialState();
  private queue: AnnotationQueue;
  private banner = "";
  private validationError = "";

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly annotator: string = "reviewer",
  ) {
    this.queue = new AnnotationQueue((body) => this.api.postAnnotation(body), {
      onAccepted: () => {
        this.banner = "";
        void this.refreshProgress();
      },
      onRejected: (_decision, error) => {
        this.banner = `Rejected by server: ${error.detail}`;
        this.render();
      },
      onNetworkTrouble: () => {
        this.banner = "Network trouble; decisions queued and retrying…";
        this.render();
        setTimeout(() => void this.queue.flush(), RETRY_DELAY_MS);
      },
    });
  }

  async start(): Promise<void> {
    this.state.windows = await this.api.listWindows();
    await this.openWindow(0);
    document.addEventListener("keydown", (event) => this.onKey(event));
    await this.refreshProgress();
  }

  private async openWindow(index: number): Promise<void> {
    this.state.windowIndex = index;
    const summary = this.state.windows[index];
    if (!summary) {
      this.state.detail = null;
      this.render();
      return;
    }
    this.state.detail = await this.api.windowDetail(summary.id);
    this.state.frameIndex = Math.min(
      this.state.detail.event_frame_index - 1,
      this.state.detail.frames.length - 1,
    );
    this.state.edits.clear();
    this.render();
  }

  private async refreshProgress(): Promise<void> {
    try {
      const progress = await this.api.progress();
      const bar = this.root.querySelector<HTMLElement>("#progress-fill");
      const text = this.root.querySelector<HTMLElement>("#progress-text");
      if (bar && text) {
        const pct = progress.total ? (100 * progress.annotated) / progress.total : 0;
        bar.style.width = `${pct.toFixed(1)}%`;
        text.textContent =
          `${progress.annotated}/${progress.total} annotated · ` +
          `${progress.kept} kept · ${progress.discarded} discarded`;
      }
    } catch {
      /* progress is cosmetic; never block review on it */
    }
  }

  private onKey(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) {
      if (event.key === "Enter" && !event.shiftKey) {
        event.preventDefault();
        this.submitCurrent();
      }
      return;
    }
    const actions: Record<string, () => void> = {
      ArrowRight: () => this.moveFrame(1),
      ArrowLeft: () => this.moveFrame(-1),
      ArrowDown: () => void this.moveWindow(1),
      ArrowUp: () => void this.moveWindow(-1),
      " ": () => this.toggleKeep(),
      y: () => this.setLabel("Yes"),
      n: () => this.setLabel("No"),
      b: () => this.setOverlay("binary"),
      i: () => this.setOverlay("instance"),
      e: () => this.focusExplanation(),
      Enter: () => this.submitCurrent(),
    };
    const action = actions[event.key];
    if (action) {
      event.preventDefault();
      action();
    }
  }

  private moveFrame(delta: number): void {
    this.state.frameIndex = stepFrame(this.state, delta);
    this.render();
  }

  private async moveWindow(delta: number): Promise<void> {
    const next = stepWindow(this.state, delta);
    if (next !== this.state.windowIndex) await this.openWindow(next);
  }

  private setOverlay(which: "binary" | "instance"): void {
    this.state.overlay = toggleOverlay(this.state.overlay, which);
    this.render();
  }

  private mutateEdit(mutate: (edit: ReturnType<typeof editFor>) => void): void {
    const frame = currentFrame(this.state);
    if (!frame) return;
    const edit = { ...editFor(this.state, frame) };
    mutate(edit);
    this.state.edits.set(frame.sample_id, edit);
    this.validationError = "";
    this.render();
  }

  private toggleKeep(): void {
    this.mutateEdit((edit) => {
      edit.keep = !edit.keep;
    });
    this.submitCurrent();
  }

  private setLabel(label: "Yes" | "No"): void {
    this.mutateEdit((edit) => {
      edit.label = label;
    });
  }

  private focusExplanation(): void {
    this.root.querySelector<HTMLTextAreaElement>("#explanation")?.focus();
  }

  /** Validate and POST the decision for the frame under review. */
  submitCurrent(): void {
    const frame = currentFrame(this.state);
    if (!frame) return;
    const edit = editFor(this.state, frame);
    const problem = validateEdit(edit);
    if (problem) {
      this.validationError = problem;
      this.render();
      return;
    }
    this.validationError = "";
    this.queue.enqueue({
      sample_id: frame.sample_id,
      keep: edit.keep,
      label: edit.label,
      explanation: edit.label === "Yes" ? edit.explanation : "",
      annotator: this.annotator,
    });
    void this.queue.flush();
    this.render();
  }

  // -- rendering ----------------------------------------------------------

  private render(): void {
    const detail = this.state.detail;
    const list = this.state.windows
      .map((w, i) => {
        const active = i === this.state.windowIndex ? " active" : "";
        const done = w.annotated_count >= w.frame_count ? " done" : "";
        return (
          `<li class="window-item${active}${done}" data-index="${i}">` +
          `<span>${w.id}</span><small>${w.kind} · ${w.annotated_count}/${w.frame_count}</small></li>`
        );
      })
      .join("");

    const frame = currentFrame(this.state);
    let card = "<p class='empty'>No windows to review.</p>";
    if (detail && frame) {
      const edit = editFor(this.state, frame);
      const isEvent = this.state.frameIndex === detail.event_frame_index - 1;
      const chips = SUGGESTION_CHIPS.map(
        (chip) => `<button class="chip" data-chip="${chip}">${chip}</button>`,
      ).join("");
      card = `
        <div class="frame-card${edit.keep ? "" : " discarded"}${isEvent ? " event-frame" : ""}">
          <header>
            <strong>${frame.sample_id}</strong>
            <span>frame ${this.state.frameIndex + 1}/${detail.frames.length}
              ${isEvent ? "· event frame" : ""} · t=${frame.frame_time.toFixed(1)}s</span>
          </header>
          <div class="viewport">
            <img id="frame-image" src="${frame.image_url}" alt="frame">
            <canvas id="overlay-canvas"></canvas>
          </div>
          <p class="can-text"><code>${frame.can_text}</code></p>
          <div class="controls">
            <label><input type="checkbox" id="keep-box" ${edit.keep ? "checked" : ""}> keep</label>
            <label><input type="radio" name="label" value="Yes" ${edit.label === "Yes" ? "checked" : ""}> Yes</label>
            <label><input type="radio" name="label" value="No" ${edit.label === "No" ? "checked" : ""}> No</label>
            <span class="overlay-state">overlay: ${this.state.overlay}</span>
          </div>
          <div class="chips">${chips}</div>
          <textarea id="explanation" placeholder="why does this frame need an alert?"
            ${edit.label === "No" ? "disabled" : ""}>${edit.explanation}</textarea>
          ${this.validationError ? `<p class="error">${this.validationError}</p>` : ""}
          <button id="submit">save decision (Enter)</button>
        </div>`;
    }

    this.root.querySelector<HTMLElement>("#windows")!.innerHTML = `<ul>${list}</ul>`;
    this.root.querySelector<HTMLElement>("#frame")!.innerHTML = card;
    this.root.querySelector<HTMLElement>("#banner")!.textContent =
      this.banner + (this.queue.pending() ? ` (${this.queue.pending()} unsent)` : "");
    this.bindCardEvents();
    this.drawOverlay();
  }

  private bindCardEvents(): void {
    this.root.querySelectorAll<HTMLElement>(".window-item").forEach((item) => {
      item.addEventListener("click", () => {
        void this.openWindow(Number(item.dataset.index));
      });
    });
    this.root.querySelector<HTMLInputElement>("#keep-box")?.addEventListener("change", () => {
      this.toggleKeep();
    });
    this.root.querySelectorAll<HTMLInputElement>("input[name=label]").forEach((radio) => {
      radio.addEventListener("change", () => this.setLabel(radio.value as "Yes" | "No"));
    });
    this.root.querySelectorAll<HTMLButtonElement>(".chip").forEach((button) => {
      button.addEventListener("click", () => {
        this.mutateEdit((edit) => {
          edit.explanation = appendChip(edit.explanation, button.dataset.chip ?? "");
        });
      });
    });
    const textarea = this.root.querySelector<HTMLTextAreaElement>("#explanation");
    textarea?.addEventListener("input", () => {
      const frame = currentFrame(this.state);
      if (!frame) return;
      const edit = { ...editFor(this.state, frame), explanation: textarea.value };
      this.state.edits.set(frame.sample_id, edit);
    });
    this.root.querySelector<HTMLButtonElement>("#submit")?.addEventListener("click", () => {
      this.submitCurrent();
    });
  }

  /** Alpha-blend the selected mask over the frame via an offscreen decode. */
  private drawOverlay(): void {
    const frame = currentFrame(this.state);
    const canvas = this.root.querySelector<HTMLCanvasElement>("#overlay-canvas");
    const image = this.root.querySelector<HTMLImageElement>("#frame-image");
    if (!frame || !canvas || !image) return;
    const context = canvas.getContext("2d");
    if (!context) return;
    if (this.state.overlay === "none") {
      context.clearRect(0, 0, canvas.width, canvas.height);
      return;
    }
    const mode = this.state.overlay;
    const url = mode === "binary" ? frame.binary_mask_url : frame.instance_mask_url;
    const mask = new Image();
    mask.onload = () => {
      canvas.width = mask.width;
      canvas.height = mask.height;
      const scratch = document.createElement("canvas");
      scratch.width = mask.width;
      scratch.height = mask.height;
      const sctx = scratch.getContext("2d");
      if (!sctx) return;
      sctx.drawImage(mask, 0, 0);
      const pixels = sctx.getImageData(0, 0, mask.width, mask.height);
      const gray = new Uint8Array(mask.width * mask.height);
      for (let i = 0; i < gray.length; i++) gray[i] = pixels.data[i * 4]!;
      const overlay = context.createImageData(mask.width, mask.height);
      overlay.data.set(colorizeBuffer(gray, mode));
      context.putImageData(overlay, 0, 0);
    };
    mask.src = url;
  }
}
