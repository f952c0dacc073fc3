import { afterEach, describe, expect, it, vi } from "vitest";

import { SessionApi } from "../src/api.js";
import { TrialRunner } from "../src/trialMachine.js";
import { RecordingView, ScriptedKeys } from "./helpers.js";
import { MockServer, categoryTrials, rewardTrials } from "./mockServer.js";

function makeRunner(server: MockServer, keys: ScriptedKeys) {
  const api = new SessionApi("http://mock", server.fetch, {
    attempts: 5,
    backoffMs: 5,
  });
  const view = new RecordingView();
  const runner = new TrialRunner(api, view, keys);
  return { api, view, runner };
}

async function playTrials(server: MockServer, runner: TrialRunner, api: SessionApi, n: number) {
  for (let t = 0; t < n; t++) {
    const payload = await api.getTrial("test", t);
    await runner.runTrial("test", payload);
  }
}

afterEach(() => {
  vi.useRealTimers();
});

describe("category trial timing", () => {
  it("holds feedback for 2000 ms within +-50 ms (measured on the monotonic clock)", async () => {
    const server = new MockServer(categoryTrials(2), { feedbackMs: 2000 });
    const keys = new ScriptedKeys(["f", "j"]);
    const { api, view, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 2);
    const feedbackShown = view.times("categoryFeedback");
    const nextTrialShown = view.times("categoryTrial");
    // feedback of trial 0 ends when trial 1 paints
    const shown = nextTrialShown[1] - feedbackShown[0];
    expect(shown).toBeGreaterThanOrEqual(1950);
    expect(shown).toBeLessThanOrEqual(2050);
  }, 15_000);
});

describe("reward trial timing", () => {
  it("holds reward display 1500 ms and ITI 1000 ms within +-50 ms", async () => {
    const server = new MockServer(rewardTrials(2), {
      feedbackMs: 1500,
      itiMs: 1000,
    });
    const keys = new ScriptedKeys(["j", "f"]);
    const { api, view, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 2);
    const fb = view.times("rewardFeedback");
    const blank = view.times("blank");
    const next = view.times("rewardTrial");
    const feedbackShown = blank[0] - fb[0];
    const itiShown = next[1] - blank[0];
    expect(feedbackShown).toBeGreaterThanOrEqual(1450);
    expect(feedbackShown).toBeLessThanOrEqual(1550);
    expect(itiShown).toBeGreaterThanOrEqual(950);
    expect(itiShown).toBeLessThanOrEqual(1050);
  }, 15_000);

  it("reveals both rewards and highlights the chosen option", async () => {
    const server = new MockServer(rewardTrials(1), { feedbackMs: 20, itiMs: 10 });
    const keys = new ScriptedKeys(["j"]);
    const { api, view, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 1);
    const event = view.events.find((e) => e.name === "rewardFeedback");
    expect(event?.detail).toEqual({
      rewards: [10, 90],
      chosen: 1,
      durationMs: 20,
    });
  });
});

describe("phase gating and submissions", () => {
  it("accepts no input outside awaiting_response and posts exactly once per trial", async () => {
    const server = new MockServer(categoryTrials(3), { feedbackMs: 40 });
    // the key source is only awaited during awaiting_response, so one key
    // per trial is consumed no matter how flooded the script is
    const keys = new ScriptedKeys(["f", "j", "f", "j", "f", "j"]);
    const { api, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 3);
    expect(keys.awaitedCount).toBe(3);
    expect(server.appliedChoices).toBe(3);
    expect(server.records.map((r) => r.trial)).toEqual([0, 1, 2]);
  });

  it("never submits on its own: a 60 s idle decision phase times nothing out", async () => {
    vi.useFakeTimers();
    const server = new MockServer(categoryTrials(1), { feedbackMs: 30 });
    const silence = { next: () => new Promise<string>(() => {}) };
    const api = new SessionApi("http://mock", server.fetch, {
      attempts: 5,
      backoffMs: 5,
    });
    const runner = new TrialRunner(api, new RecordingView(), silence);
    const payloadPromise = api.getTrial("test", 0);
    await vi.advanceTimersByTimeAsync(10);
    const payload = await payloadPromise;
    let finished = false;
    runner
      .runTrial("test", payload)
      .then(() => {
        finished = true;
      })
      .catch(() => {
        finished = true;
      });
    await vi.advanceTimersByTimeAsync(60_000);
    expect(server.postAttempts).toBe(0);
    expect(finished).toBe(false);
    expect(runner.phase).toBe("awaiting_response");
  });

  it("records response keys and times in the submission", async () => {
    const server = new MockServer(categoryTrials(1), { feedbackMs: 25 });
    const keys = new ScriptedKeys([{ key: "j", delayMs: 120 }]);
    const { api, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 1);
    const record = server.records[0];
    expect(record.response_key).toBe("j");
    expect(record.chosen_option).toBe(1);
    expect(record.response_time_ms).toBeGreaterThanOrEqual(100);
  });
});

describe("network retries", () => {
  it("retries failed submissions idempotently: one applied choice per trial", async () => {
    const server = new MockServer(categoryTrials(2), { feedbackMs: 30 });
    // two injected connection faults ahead of the first submission
    server.injectFailures([false, true, true]); // getTrial ok, then 2 failures
    const keys = new ScriptedKeys(["f", "f"]);
    const { api, runner } = makeRunner(server, keys);
    await playTrials(server, runner, api, 2);
    expect(server.appliedChoices).toBe(2);
    expect(server.postAttempts).toBeGreaterThanOrEqual(2);
    expect(server.records.map((r) => r.trial)).toEqual([0, 1]);
  });

  it("keeps submission order under retries (in-flight queue of depth 1)", async () => {
    const server = new MockServer(categoryTrials(3), { feedbackMs: 10 });
    const api = new SessionApi("http://mock", server.fetch, {
      attempts: 5,
      backoffMs: 20,
    });
    // fire three submissions without awaiting in between; the first hits
    // two injected faults, yet arrival order must stay 0, 1, 2
    server.injectFailures([true, true]);
    const p0 = api.submitChoice("test", {
      trial: 0, chosen_option: 0, response_key: "f", response_time_ms: 1,
    });
    const p1 = api.submitChoice("test", {
      trial: 1, chosen_option: 1, response_key: "j", response_time_ms: 1,
    });
    const p2 = api.submitChoice("test", {
      trial: 2, chosen_option: 0, response_key: "f", response_time_ms: 1,
    });
    await Promise.all([p0, p1, p2]);
    expect(server.records.map((r) => r.trial)).toEqual([0, 1, 2]);
  });
});
