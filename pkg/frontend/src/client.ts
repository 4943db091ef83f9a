// The annotation flow as a state machine, independent of the DOM.
//
// Propose mode is strictly mouse-free: the only input is handleKey(). A
// pointer action (pickAt) is legal in human-pick sessions only. Exactly
// one label per proposal reaches the server: submissions are keyed by
// proposal index, and a retry that hits a stale-index conflict means the
// label already landed, so the client just advances.

import {
  ApiError,
  type DoneNext,
  type NextResponse,
  type PickModeNext,
  type ProposalNext,
  type Transport,
} from "./api.js";
import { bindingFor, type KeyBinding } from "./keymap.js";

export interface View {
  showProposal(p: ProposalNext): void;
  showPickMode(p: PickModeNext): void;
  showDone(summary: { total: number; meanMs: number | null }): void;
  showHint(message: string): void;
  showError(message: string): void;
}

export type ClientState = "idle" | "awaiting-key" | "submitting" | "awaiting-pick-class" | "done";

export type KeyOutcome = "submitted" | "ignored" | "retry" | "done" | "picked";

export class AnnotationClient {
  private state: ClientState = "idle";
  private current: ProposalNext | null = null;
  private pickInfo: PickModeNext | null = null;
  private pendingPick: { image: string; row: number; col: number } | null = null;
  private shownAt = 0;

  constructor(
    private readonly sessionId: string,
    private readonly transport: Transport,
    private readonly view: View,
    private readonly now: () => number = () => Date.now(),
  ) {}

  getState(): ClientState {
    return this.state;
  }

  currentKeymap(): KeyBinding[] {
    if (this.current) return this.current.keymap;
    if (this.pickInfo) return this.pickInfo.keymap;
    return [];
  }

  async start(): Promise<void> {
    await this.advance();
  }

  private async advance(): Promise<void> {
    let next: NextResponse;
    try {
      next = await this.transport.next(this.sessionId);
    } catch (err) {
      this.view.showError(`cannot reach the session: ${String(err)}`);
      return;
    }
    if (next.done) {
      await this.finish(next);
      return;
    }
    if (next.mode === "human-pick") {
      this.pickInfo = next;
      this.state = "awaiting-pick-class";
      this.view.showPickMode(next);
      return;
    }
    this.current = next;
    this.state = "awaiting-key";
    this.shownAt = this.now();
    this.view.showProposal(next);
  }

  private async finish(next: DoneNext): Promise<void> {
    this.state = "done";
    this.current = null;
    let meanMs: number | null = null;
    let total = next.total;
    try {
      const prog = await this.transport.progress(this.sessionId);
      meanMs = prog.mean_ms;
      total = prog.total;
    } catch {
      // summary is best-effort; completion is not
    }
    this.view.showDone({ total, meanMs });
  }

  /** A pointer selection; only meaningful in human-pick sessions. */
  pickAt(image: string, row: number, col: number): void {
    if (this.pickInfo === null) {
      throw new Error("pointer input is not part of propose mode");
    }
    this.pendingPick = { image, row, col };
    this.view.showHint(`pixel (${row}, ${col}) of ${image}: press a class key`);
  }

  async handleKey(key: string): Promise<KeyOutcome> {
    if (this.state === "done") return "done";
    if (this.state === "awaiting-pick-class") return this.handlePickKey(key);
    if (this.state !== "awaiting-key" || this.current === null) return "ignored";

    const binding = bindingFor(this.current.keymap, key);
    if (binding === undefined) {
      this.view.showHint(`key "${key}" is not mapped to a class`);
      return "ignored";
    }
    const elapsed = Math.max(0, this.now() - this.shownAt);
    const index = this.current.index;
    this.state = "submitting";
    try {
      await this.transport.submit(this.sessionId, {
        index,
        class_id: binding.class_id,
        elapsed_ms: elapsed,
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // The label for this index already landed (lost response, replay):
        // never re-submit, just move on.
        await this.advance();
        return this.getState() === "done" ? "done" : "submitted";
      }
      // Network failure: nothing landed, re-show the same proposal.
      this.state = "awaiting-key";
      this.view.showError(`submission failed, try again: ${String(err)}`);
      this.view.showProposal(this.current);
      return "retry";
    }
    await this.advance();
    return this.getState() === "done" ? "done" : "submitted";
  }

  private async handlePickKey(key: string): Promise<KeyOutcome> {
    if (this.pickInfo === null) return "ignored";
    const binding = bindingFor(this.pickInfo.keymap, key);
    if (binding === undefined || this.pendingPick === null) {
      this.view.showHint(
        this.pendingPick === null ? "click a pixel first" : `key "${key}" is not mapped`,
      );
      return "ignored";
    }
    const pick = this.pendingPick;
    try {
      await this.transport.pick(this.sessionId, { ...pick, class_id: binding.class_id });
    } catch (err) {
      this.view.showError(String(err));
      return "retry";
    }
    this.pendingPick = null;
    this.view.showHint(`labelled (${pick.row}, ${pick.col}) as ${binding.name}`);
    return "picked";
  }
}
