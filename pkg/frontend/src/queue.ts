/** Outbound decision queue: immediate POST, retry on network failure.
 *
 * Every decision carries a client nonce fixed at enqueue time, so a retry
 * after an ambiguous failure can never record the decision twice; the
 * server acknowledges duplicates without appending. Validation failures
 * (HTTP 4xx) are surfaced and dropped rather than retried forever.
 */

import { AnnotationBody, ApiError } from "./api.js";

export interface QueuedDecision extends AnnotationBody {}

export type PostFn = (body: AnnotationBody) => Promise<unknown>;

export interface QueueEvents {
  onPendingChange?: (pending: number) => void;
  onAccepted?: (decision: QueuedDecision) => void;
  onRejected?: (decision: QueuedDecision, error: ApiError) => void;
  onNetworkTrouble?: (error: Error) => void;
}

export function makeNonce(): string {
  return `${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

export class AnnotationQueue {
  private queue: QueuedDecision[] = [];
  private flushing = false;

  constructor(
    private readonly post: PostFn,
    private readonly events: QueueEvents = {},
  ) {}

  pending(): number {
    return this.queue.length;
  }

  /** Queue a decision; a newer decision for the same sample replaces it. */
  enqueue(decision: Omit<AnnotationBody, "nonce">): QueuedDecision {
    const queued: QueuedDecision = { ...decision, nonce: makeNonce() };
    this.queue = this.queue.filter((d) => d.sample_id !== decision.sample_id);
    this.queue.push(queued);
    this.events.onPendingChange?.(this.queue.length);
    return queued;
  }

  /** Try to send everything queued; returns true when the queue drained. */
  async flush(): Promise<boolean> {
    if (this.flushing) return this.queue.length === 0;
    this.flushing = true;
    try {
      while (this.queue.length > 0) {
        const decision = this.queue[0]!;
        try {
          await this.post(decision);
        } catch (error) {
          if (error instanceof ApiError && error.status >= 400 && error.status < 500) {
            this.queue.shift();
            this.events.onPendingChange?.(this.queue.length);
            this.events.onRejected?.(decision, error);
            continue;
          }
          this.events.onNetworkTrouble?.(error as Error);
          return false; // keep queued (same nonce) for a later retry
        }
        this.queue.shift();
        this.events.onPendingChange?.(this.queue.length);
        this.events.onAccepted?.(decision);
      }
      return true;
    } finally {
      this.flushing = false;
    }
  }
}
