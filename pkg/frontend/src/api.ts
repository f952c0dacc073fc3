/**
 * Thin typed client for the repscope session server.
 *
 * Network failures and 5xx responses are retried with backoff; the server
 * replays duplicate choice submissions idempotently, so retrying a choice is
 * always safe. All mutating requests flow through a single in-flight queue
 * (depth 1) so retries can never reorder submissions.
 */

export interface SessionView {
  session_id: string;
  participant_id: string;
  task_kind: "category" | "reward";
  n_trials: number;
  current_trial: number;
  status: "active" | "completed" | "abandoned";
  comprehension_required: boolean;
  comprehension_passed: boolean;
  consent: boolean | null;
  estimated_payment: number;
}

export interface TrialStimulus {
  stimulus_id: string;
  position: number;
  image_url: string;
}

export interface TrialPayload {
  session_id: string;
  trial: number;
  n_trials: number;
  kind: "category" | "reward";
  stimuli: TrialStimulus[];
  options?: string[];
}

export interface Feedback {
  trial: number;
  feedback_ms: number;
  estimated_payment: number;
  session_status: string;
  correct?: boolean;
  rewards?: number[];
  chosen_option?: number;
  iti_ms?: number;
}

export interface ChoiceSubmission {
  trial: number;
  chosen_option: 0 | 1;
  response_key: string;
  response_time_ms: number;
}

export interface ComprehensionResult {
  passed: boolean;
  questions: { id: string; text: string }[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface RetryPolicy {
  attempts: number;
  backoffMs: number;
}

const DEFAULT_RETRY: RetryPolicy = { attempts: 4, backoffMs: 250 };

export class SessionApi {
  private queue: Promise<unknown> = Promise.resolve();

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
    private retry: RetryPolicy = DEFAULT_RETRY,
    private sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt < this.retry.attempts; attempt++) {
      if (attempt > 0) {
        await this.sleep(this.retry.backoffMs * attempt);
      }
      let response: Response;
      try {
        response = await this.fetchFn(this.baseUrl + path, {
          headers: { "content-type": "application/json" },
          ...init,
        });
      } catch (err) {
        lastError = err; // network failure: retry
        continue;
      }
      if (response.status >= 500) {
        lastError = new ApiError(response.status, "server_error", "server error");
        continue;
      }
      if (!response.ok) {
        const body = await response.json().catch(() => ({}));
        throw new ApiError(
          response.status,
          (body as { code?: string }).code ?? "error",
          (body as { message?: string }).message ?? `HTTP ${response.status}`,
        );
      }
      return (await response.json()) as T;
    }
    throw lastError instanceof Error
      ? lastError
      : new Error("network failure after retries");
  }

  /** Serialize mutating calls: one in flight at a time, FIFO. */
  private enqueue<T>(job: () => Promise<T>): Promise<T> {
    const next = this.queue.then(job, job);
    this.queue = next.catch(() => undefined);
    return next;
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/sessions/${sessionId}`);
  }

  getTrial(sessionId: string, trial: number): Promise<TrialPayload> {
    return this.request(`/sessions/${sessionId}/trials/${trial}`);
  }

  submitChoice(sessionId: string, body: ChoiceSubmission): Promise<Feedback> {
    return this.enqueue(() =>
      this.request(`/sessions/${sessionId}/choices`, {
        method: "POST",
        body: JSON.stringify(body),
      }),
    );
  }

  submitComprehension(
    sessionId: string,
    answers: Record<string, string>,
  ): Promise<ComprehensionResult> {
    return this.enqueue(() =>
      this.request(`/sessions/${sessionId}/comprehension`, {
        method: "POST",
        body: JSON.stringify({ answers }),
      }),
    );
  }

  submitConsent(sessionId: string, useData: boolean): Promise<unknown> {
    return this.enqueue(() =>
      this.request(`/sessions/${sessionId}/consent`, {
        method: "POST",
        body: JSON.stringify({ use_data: useData }),
      }),
    );
  }

  exportLog(sessionId: string): Promise<unknown> {
    return this.request(`/sessions/${sessionId}/export`);
  }
}
