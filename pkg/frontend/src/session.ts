// View-model for one annotator's labeling session. Framework-free so the
// behavior is testable against a fake transport; the server stays the source
// of truth for which sample is current.

import {
  ApiError,
  Assignment,
  BEHAVIORAL_OPTIONS,
  EMOTIONAL_OPTIONS,
  Transport,
} from "./api.js";

export type Phase = "idle" | "loading" | "annotating" | "done";

export interface SessionState {
  phase: Phase;
  current: Assignment | null;
  behavioral: string | null;
  emotional: string | null;
  labeled: number;
  total: number;
  error: string | null;
}

export class AnnotationSession {
  private phase: Phase = "idle";
  private current: Assignment | null = null;
  private behavioral: string | null = null;
  private emotional: string | null = null;
  private labeled = 0;
  private total = 0;
  private error: string | null = null;
  private busy = false;
  private listeners: Array<(state: SessionState) => void> = [];

  constructor(
    private readonly transport: Transport,
    readonly annotator: string,
  ) {}

  get state(): SessionState {
    return {
      phase: this.phase,
      current: this.current,
      behavioral: this.behavioral,
      emotional: this.emotional,
      labeled: this.labeled,
      total: this.total,
      error: this.error,
    };
  }

  subscribe(listener: (state: SessionState) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  async start(): Promise<void> {
    this.phase = "loading";
    this.notify();
    await this.fetchNext();
  }

  selectBehavioral(value: string): void {
    if (this.phase !== "annotating") return;
    if (!BEHAVIORAL_OPTIONS.some((option) => option.value === value)) return;
    this.behavioral = value;
    this.notify();
  }

  selectEmotional(value: string): void {
    if (this.phase !== "annotating") return;
    if (!EMOTIONAL_OPTIONS.some((option) => option.value === value)) return;
    this.emotional = value;
    this.notify();
  }

  /** Keyboard shortcut: 1-3 pick the behavioral answer, then 1-4 the emotional one. */
  applyDigit(digit: number): void {
    if (this.phase !== "annotating") return;
    if (this.behavioral === null) {
      const option = BEHAVIORAL_OPTIONS[digit - 1];
      if (option) this.selectBehavioral(option.value);
    } else {
      const option = EMOTIONAL_OPTIONS[digit - 1];
      if (option) this.selectEmotional(option.value);
    }
  }

  /** Both dimensions answered and no request in flight. */
  canSubmit(): boolean {
    return (
      this.phase === "annotating" &&
      this.behavioral !== null &&
      this.emotional !== null &&
      !this.busy
    );
  }

  async submitAndAdvance(): Promise<void> {
    if (!this.canSubmit() || this.current === null) return;
    this.busy = true;
    this.error = null;
    this.notify();
    try {
      await this.transport.submit({
        sample_id: this.current.sample_id,
        annotator: this.annotator,
        behavioral: this.behavioral!,
        emotional: this.emotional!,
      });
    } catch (failure) {
      this.busy = false;
      if (failure instanceof ApiError && failure.status === 409) {
        // Someone else resolved this assignment; skip forward, the server
        // already holds every acknowledged record.
        this.behavioral = null;
        this.emotional = null;
        await this.fetchNext();
        return;
      }
      // Network or server trouble: keep the selections so nothing is retyped.
      this.error = failure instanceof Error ? failure.message : String(failure);
      this.notify();
      return;
    }
    this.busy = false;
    this.behavioral = null;
    this.emotional = null;
    await this.fetchNext();
  }

  /** Re-run whatever failed: the pending submit if one is ready, else the fetch. */
  async retry(): Promise<void> {
    if (this.canSubmit()) {
      await this.submitAndAdvance();
    } else {
      await this.fetchNext();
    }
  }

  private async fetchNext(): Promise<void> {
    this.busy = true;
    try {
      const next = await this.transport.next(this.annotator);
      this.error = null;
      this.labeled = next.labeled;
      if (next.done) {
        this.phase = "done";
        this.current = null;
      } else {
        this.phase = "annotating";
        this.current = next;
        this.total = next.total;
      }
    } catch (failure) {
      this.error = failure instanceof Error ? failure.message : String(failure);
      if (this.phase === "loading") this.phase = "idle";
    } finally {
      this.busy = false;
      this.notify();
    }
  }
}
