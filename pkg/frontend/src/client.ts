/** Typed client for the session service, with stale-response discarding.
 *
 * Every state-bearing response carries a sequence number; applying a
 * response with a smaller sequence than one already applied is a no-op
 * (out-of-order arrivals after an undo or a rapid record are dropped).
 */
import {
  ProposeResponse,
  ServiceErrorBody,
  StateResponse,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (e) {
    throw new ServiceError("unreachable", `service unreachable: ${e}`, 0);
  }
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    const err = body as ServiceErrorBody | null;
    throw new ServiceError(
      err?.error?.code ?? "unknown_error",
      err?.error?.message ?? `HTTP ${resp.status}`,
      resp.status,
    );
  }
  return body as T;
}

export class SequenceGate {
  private applied = -1;

  /** True when the response is fresh; records its sequence number. */
  accept(seq: number): boolean {
    if (seq < this.applied) return false;
    this.applied = seq;
    return true;
  }

  reset(): void {
    this.applied = -1;
  }
}

export class ServiceClient {
  constructor(readonly base: string) {}

  createSession(config: unknown): Promise<StateResponse> {
    return request(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ config }),
    });
  }

  getState(id: string): Promise<StateResponse> {
    return request(`${this.base}/sessions/${id}`);
  }

  propose(id: string): Promise<ProposeResponse> {
    return request(`${this.base}/sessions/${id}/propose`);
  }

  recordOutcome(
    id: string,
    placement: string,
    outcome: string,
  ): Promise<StateResponse> {
    return request(`${this.base}/sessions/${id}/outcomes`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ placement, outcome }),
    });
  }

  undo(id: string): Promise<StateResponse> {
    return request(`${this.base}/sessions/${id}/undo`, { method: "POST" });
  }

  exportSession(id: string): Promise<unknown> {
    return request(`${this.base}/sessions/${id}/export`);
  }
}
