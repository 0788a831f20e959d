/** Wire types for the session service (see docs/api.md in the repo root). */

export type AtomKeyDoc = string | { point: string };

export interface PosteriorAtom {
  key: AtomKeyDoc;
  weight: number;
}

export interface PosteriorCell {
  cell: [string, string];
  value: number;
}

export interface HistoryRow {
  trial: number;
  placement: string;
  outcome: string;
  expected_gain_nats: number;
  posterior_entropy_nats: number;
}

export interface SessionState {
  posterior: { atoms: PosteriorAtom[]; cells: PosteriorCell[] };
  entropy_nats: number;
  history: HistoryRow[];
  terminated: boolean;
  reason: string;
  seq: number;
}

export interface StateResponse {
  session_id: string;
  state: SessionState;
}

export interface ProposeResponse {
  session_id: string;
  recommended: string | null;
  terminate: boolean;
  reason: string;
  gains_nats: Record<string, number>;
  seq: number;
}

export interface ServiceErrorBody {
  error: { code: string; message: string };
}

/** The experiment-config document, used only to populate input controls. */
export interface ExperimentConfigDoc {
  version: number;
  kind: string;
  placements: Array<{ label: string; outcomes: string[] }>;
  [key: string]: unknown;
}

export function atomKeyLabel(key: AtomKeyDoc): string {
  return typeof key === "string" ? key : key.point;
}
