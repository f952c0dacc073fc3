import { TrialPayload } from "../src/api.js";
import { KeySource, TrialView } from "../src/trialMachine.js";

/** Scripted key presses with optional delay before each. */
export class ScriptedKeys implements KeySource {
  private script: { key: string; delayMs: number }[];
  awaitedCount = 0;

  constructor(script: (string | { key: string; delayMs: number })[]) {
    this.script = script.map((s) =>
      typeof s === "string" ? { key: s, delayMs: 0 } : s,
    );
  }

  async next(allowed: string[]): Promise<string> {
    this.awaitedCount += 1;
    const entry = this.script.shift();
    if (!entry) throw new Error("scripted keys exhausted");
    if (entry.delayMs > 0) {
      await new Promise((r) => setTimeout(r, entry.delayMs));
    }
    if (!allowed.includes(entry.key)) {
      throw new Error(`scripted key ${entry.key} not in ${allowed}`);
    }
    return entry.key;
  }
}

export interface ViewEvent {
  name: string;
  at: number;
  detail?: unknown;
}

/** Records every view call with a monotonic timestamp. */
export class RecordingView implements TrialView {
  events: ViewEvent[] = [];

  private log(name: string, detail?: unknown): void {
    this.events.push({ name, at: performance.now(), detail });
  }

  showCategoryTrial(payload: TrialPayload): void {
    this.log("categoryTrial", payload.trial);
  }
  showCategoryFeedback(correct: boolean, durationMs: number): void {
    this.log("categoryFeedback", { correct, durationMs });
  }
  showRewardTrial(payload: TrialPayload): void {
    this.log("rewardTrial", payload.trial);
  }
  showRewardFeedback(rewards: number[], chosen: number, durationMs: number): void {
    this.log("rewardFeedback", { rewards, chosen, durationMs });
  }
  showBlank(): void {
    this.log("blank");
  }
  updatePayment(amount: number): void {
    this.log("payment", amount);
  }

  times(name: string): number[] {
    return this.events.filter((e) => e.name === name).map((e) => e.at);
  }
}
