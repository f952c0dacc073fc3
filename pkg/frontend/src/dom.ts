/**
 * Browser bindings: rendering, keyboard capture, and the full-screen guard.
 * Everything protocol-relevant lives in the DOM-free modules; this file only
 * paints and forwards input.
 */

import { TrialPayload } from "./api.js";
import { SessionScreens } from "./session.js";
import { KeyBindings, KeySource, TrialView } from "./trialMachine.js";

export class DomKeySource implements KeySource {
  private paused = false;

  setPaused(paused: boolean): void {
    this.paused = paused;
  }

  /** Listens only while awaited: keys pressed outside a pending next() are
   * never buffered, so late presses cannot leak into the next trial. */
  next(allowed: string[]): Promise<string> {
    return new Promise((resolve) => {
      const handler = (event: KeyboardEvent) => {
        if (this.paused) return;
        const key = event.key.toLowerCase();
        if (allowed.includes(key)) {
          window.removeEventListener("keydown", handler);
          resolve(key);
        }
      };
      window.addEventListener("keydown", handler);
    });
  }
}

function el(tag: string, className: string, text = ""): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class DomView implements TrialView, SessionScreens {
  private stage: HTMLElement;
  private paymentBar: HTMLElement;
  private pauseOverlay: HTMLElement;

  constructor(
    root: HTMLElement,
    private bindings: KeyBindings,
    private keySource: DomKeySource,
  ) {
    this.paymentBar = el("div", "payment-bar", "estimated payment: –");
    this.stage = el("div", "stage");
    this.pauseOverlay = el("div", "pause-overlay hidden");
    root.append(this.paymentBar, this.stage, this.pauseOverlay);
    document.addEventListener("fullscreenchange", () => {
      const engaged = Boolean(document.fullscreenElement);
      this.keySource.setPaused(!engaged);
      if (!engaged) {
        this.showOverlay("The task runs in full screen. Click to continue.");
        this.pauseOverlay.onclick = () => {
          void document.documentElement.requestFullscreen().then(() => {
            this.hideOverlay();
          });
        };
      } else {
        this.hideOverlay();
      }
    });
  }

  private showOverlay(message: string): void {
    this.pauseOverlay.textContent = message;
    this.pauseOverlay.classList.remove("hidden");
  }

  private hideOverlay(): void {
    this.pauseOverlay.classList.add("hidden");
    this.pauseOverlay.onclick = null;
  }

  private clearStage(): HTMLElement {
    this.stage.replaceChildren();
    return this.stage;
  }

  // -- TrialView ------------------------------------------------------------

  showCategoryTrial(payload: TrialPayload): void {
    const stage = this.clearStage();
    const [labelLeft, labelRight] = payload.options ?? ["Option A", "Option B"];
    stage.append(el("div", "target left", `${labelLeft} (${this.bindings.left.toUpperCase()})`));
    const img = document.createElement("img");
    img.className = "stimulus";
    img.src = payload.stimuli[0].image_url;
    stage.append(img);
    stage.append(el("div", "target right", `${labelRight} (${this.bindings.right.toUpperCase()})`));
  }

  showCategoryFeedback(correct: boolean, _durationMs: number): void {
    const stage = this.clearStage();
    stage.append(
      el("div", correct ? "feedback correct" : "feedback wrong",
         correct ? "Correct!" : "Wrong"),
    );
  }

  showRewardTrial(payload: TrialPayload): void {
    const stage = this.clearStage();
    for (const stim of payload.stimuli) {
      const img = document.createElement("img");
      img.className = `stimulus option-${stim.position}`;
      img.src = stim.image_url;
      stage.append(img);
    }
  }

  showRewardFeedback(rewards: number[], chosen: number, _durationMs: number): void {
    const stage = this.clearStage();
    rewards.forEach((reward, position) => {
      const cls = position === chosen ? "reward chosen" : "reward";
      stage.append(el("div", cls, String(Math.round(reward))));
    });
  }

  showBlank(): void {
    this.clearStage();
  }

  updatePayment(amount: number): void {
    this.paymentBar.textContent = `estimated payment: ${amount.toFixed(2)}`;
  }

  // -- SessionScreens ---------------------------------------------------------

  showInstructions(kind: "category" | "reward"): Promise<void> {
    const stage = this.clearStage();
    const text =
      kind === "category"
        ? "Each trial shows one image. Deliver it to the correct recipient " +
          `with ${this.bindings.left.toUpperCase()} (left) or ${this.bindings.right.toUpperCase()} (right). ` +
          "You get feedback after every choice. Take as long as you need."
        : "Each trial shows two images. Pick the more rewarding one with " +
          `${this.bindings.left.toUpperCase()} (left) or ${this.bindings.right.toUpperCase()} (right). ` +
          "Both rewards are revealed after every choice. Take as long as you need.";
    stage.append(el("p", "instructions", text));
    const button = el("button", "continue", "Start") as HTMLButtonElement;
    stage.append(button);
    return new Promise((resolve) => {
      button.onclick = () => {
        void document.documentElement.requestFullscreen().catch(() => undefined);
        resolve();
      };
    });
  }

  askComprehension(
    questions: { id: string; text: string }[],
  ): Promise<Record<string, string>> {
    const stage = this.clearStage();
    stage.append(el("p", "instructions", "Quick check before you start:"));
    const inputs = new Map<string, HTMLInputElement>();
    const list = questions.length
      ? questions
      : [{ id: "q1", text: "Please confirm you read the instructions (yes)." }];
    for (const q of list) {
      const row = el("div", "question");
      row.append(el("label", "question-text", q.text));
      const input = document.createElement("input");
      input.name = q.id;
      row.append(input);
      inputs.set(q.id, input);
      stage.append(row);
    }
    const button = el("button", "continue", "Submit") as HTMLButtonElement;
    stage.append(button);
    return new Promise((resolve) => {
      button.onclick = () => {
        const answers: Record<string, string> = {};
        for (const [id, input] of inputs) answers[id] = input.value;
        resolve(answers);
      };
    });
  }

  comprehensionFailed(): Promise<void> {
    const stage = this.clearStage();
    stage.append(el("p", "instructions", "Not quite. Please reread the instructions."));
    const button = el("button", "continue", "Reread") as HTMLButtonElement;
    stage.append(button);
    return new Promise((resolve) => {
      button.onclick = () => resolve();
    });
  }

  showPaused(message: string): void {
    this.showOverlay(`Connection trouble (${message}). Retrying…`);
  }

  clearPaused(): void {
    // keep the overlay when it is the full-screen guard, not a network pause
    if (!document.fullscreenElement) return;
    this.hideOverlay();
  }

  askConsent(): Promise<boolean> {
    const stage = this.clearStage();
    stage.append(
      el("p", "instructions", "Do you think your data should be used for analysis?"),
    );
    const yes = el("button", "continue", "Yes") as HTMLButtonElement;
    const no = el("button", "continue", "No") as HTMLButtonElement;
    stage.append(yes, no);
    return new Promise((resolve) => {
      yes.onclick = () => resolve(true);
      no.onclick = () => resolve(false);
    });
  }

  showCompletion(payment: number): void {
    const stage = this.clearStage();
    stage.append(el("p", "instructions", "Done! Thank you for participating."));
    stage.append(el("p", "instructions", `Estimated payment: ${payment.toFixed(2)}`));
  }
}
