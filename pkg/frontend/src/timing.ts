/** Monotonic-clock helpers; all protocol timing goes through these. */

export interface Clock {
  now(): number;
}

export const monotonicClock: Clock = {
  now: () => performance.now(),
};

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, Math.max(0, ms)));
}

/**
 * Wait until `deadline` on the given clock, re-checking after each timer
 * fire so timer jitter cannot end a phase early.
 */
export async function sleepUntil(deadline: number, clock: Clock): Promise<void> {
  for (;;) {
    const remaining = deadline - clock.now();
    if (remaining <= 0) return;
    await sleep(remaining);
  }
}
