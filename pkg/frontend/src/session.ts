/**
 * Whole-session flow: instructions -> comprehension gate -> trial loop ->
 * data-use consent -> completion. The client is thin: sequencing state,
 * ground truth, and timing constants all come from the server; network
 * failures pause the session and resume where the server says.
 */

import { ApiError, SessionApi } from "./api.js";
import { TrialRunner } from "./trialMachine.js";

export interface SessionScreens {
  showInstructions(kind: "category" | "reward"): Promise<void>;
  askComprehension(
    questions: { id: string; text: string }[],
  ): Promise<Record<string, string>>;
  comprehensionFailed(): Promise<void>;
  showPaused(message: string): void;
  clearPaused(): void;
  askConsent(): Promise<boolean>;
  showCompletion(payment: number): void;
}

export interface SessionOptions {
  /** Pause-and-retry budget for persistent failures; null retries forever. */
  maxResumeAttempts?: number | null;
  resumeDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

async function withRecovery<T>(
  job: () => Promise<T>,
  screens: SessionScreens,
  options: SessionOptions,
): Promise<T> {
  const max = options.maxResumeAttempts === undefined ? null : options.maxResumeAttempts;
  const delay = options.resumeDelayMs ?? 2000;
  const sleep = options.sleep ?? ((ms) => new Promise((r) => setTimeout(r, ms)));
  for (let attempt = 0; ; attempt++) {
    try {
      const result = await job();
      screens.clearPaused();
      return result;
    } catch (err) {
      if (err instanceof ApiError && err.status < 500) {
        throw err; // protocol errors are not recoverable by waiting
      }
      if (max !== null && attempt >= max) {
        throw err;
      }
      screens.showPaused(err instanceof Error ? err.message : String(err));
      await sleep(delay);
    }
  }
}

export async function runSession(
  api: SessionApi,
  sessionId: string,
  runner: TrialRunner,
  screens: SessionScreens,
  options: SessionOptions = {},
): Promise<void> {
  let view = await withRecovery(() => api.getSession(sessionId), screens, options);
  await screens.showInstructions(view.task_kind);

  if (view.comprehension_required && !view.comprehension_passed) {
    // the gate is server-validated; failing re-shows the instructions
    let questions: { id: string; text: string }[] = [];
    for (;;) {
      const answers = await screens.askComprehension(questions);
      const result = await withRecovery(
        () => api.submitComprehension(sessionId, answers),
        screens,
        options,
      );
      questions = result.questions;
      if (result.passed) break;
      await screens.comprehensionFailed();
      await screens.showInstructions(view.task_kind);
    }
  }

  for (;;) {
    view = await withRecovery(() => api.getSession(sessionId), screens, options);
    if (view.status !== "active") break;
    const trial = view.current_trial;
    const payload = await withRecovery(
      () => api.getTrial(sessionId, trial),
      screens,
      options,
    );
    await withRecovery(
      () => runner.runTrial(sessionId, payload),
      screens,
      options,
    );
    if (trial + 1 >= view.n_trials) break;
  }

  const useData = await screens.askConsent();
  await withRecovery(() => api.submitConsent(sessionId, useData), screens, options);
  view = await withRecovery(() => api.getSession(sessionId), screens, options);
  screens.showCompletion(view.estimated_payment);
}
