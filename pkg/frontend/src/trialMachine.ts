/**
 * Trial state machine: awaiting_response -> feedback -> (iti ->) done.
 *
 * Input is consumed only during awaiting_response (the key source is not
 * even subscribed outside it), decisions have unlimited time, and the
 * feedback/ITI phases last exactly the server-prescribed durations measured
 * on the monotonic clock. The machine is DOM-free; rendering happens through
 * the injected view.
 */

import { Feedback, SessionApi, TrialPayload } from "./api.js";
import { Clock, monotonicClock, sleepUntil } from "./timing.js";

export type Phase = "awaiting_response" | "feedback" | "iti";

export interface TrialView {
  showCategoryTrial(payload: TrialPayload): void;
  showCategoryFeedback(correct: boolean, durationMs: number): void;
  showRewardTrial(payload: TrialPayload): void;
  showRewardFeedback(rewards: number[], chosen: number, durationMs: number): void;
  showBlank(): void;
  updatePayment(amount: number): void;
}

/** Resolves with one of the allowed keys; keys pressed while nothing is
 * awaited must be discarded by implementations. */
export interface KeySource {
  next(allowed: string[]): Promise<string>;
}

export interface KeyBindings {
  left: string;
  right: string;
}

export const DEFAULT_KEYS: KeyBindings = { left: "f", right: "j" };

export class TrialRunner {
  phase: Phase = "awaiting_response";

  constructor(
    private api: SessionApi,
    private view: TrialView,
    private keys: KeySource,
    private clock: Clock = monotonicClock,
    private bindings: KeyBindings = DEFAULT_KEYS,
  ) {}

  async runTrial(sessionId: string, payload: TrialPayload): Promise<Feedback> {
    this.phase = "awaiting_response";
    if (payload.kind === "category") {
      this.view.showCategoryTrial(payload);
    } else {
      this.view.showRewardTrial(payload);
    }
    const shownAt = this.clock.now();
    // unlimited decision time: no timer races against the key source
    const key = await this.keys.next([this.bindings.left, this.bindings.right]);
    const responseTime = this.clock.now() - shownAt;
    const chosen: 0 | 1 = key === this.bindings.left ? 0 : 1;

    this.phase = "feedback";
    const feedback = await this.api.submitChoice(sessionId, {
      trial: payload.trial,
      chosen_option: chosen,
      response_key: key,
      response_time_ms: responseTime,
    });
    const feedbackStart = this.clock.now();
    if (payload.kind === "category") {
      this.view.showCategoryFeedback(feedback.correct === true, feedback.feedback_ms);
    } else {
      this.view.showRewardFeedback(
        feedback.rewards ?? [],
        feedback.chosen_option ?? chosen,
        feedback.feedback_ms,
      );
    }
    this.view.updatePayment(feedback.estimated_payment);
    await sleepUntil(feedbackStart + feedback.feedback_ms, this.clock);

    if (payload.kind === "reward") {
      this.phase = "iti";
      const itiStart = this.clock.now();
      this.view.showBlank();
      await sleepUntil(itiStart + (feedback.iti_ms ?? 0), this.clock);
    }
    this.phase = "awaiting_response";
    return feedback;
  }
}
