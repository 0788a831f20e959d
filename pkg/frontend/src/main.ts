/** Session wiring: one active session, serialized requests, no inference. */
import { SequenceGate, ServiceClient, ServiceError } from "./client.js";
import { render, renderError } from "./render.js";
import { buildViewModel } from "./view.js";
import {
  ExperimentConfigDoc,
  ProposeResponse,
  SessionState,
} from "./types.js";

interface ConsoleState {
  client: ServiceClient;
  sessionId: string | null;
  lastState: SessionState | null;
  lastPropose: ProposeResponse | null;
  bits: boolean;
  busy: boolean;
  retry: (() => Promise<void>) | null;
}

const gate = new SequenceGate();

const state: ConsoleState = {
  client: new ServiceClient("http://127.0.0.1:8763"),
  sessionId: null,
  lastState: null,
  lastPropose: null,
  bits: false,
  busy: false,
  retry: null,
};

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function redraw(): void {
  if (!state.lastState) return;
  render(buildViewModel(state.lastState, state.lastPropose,
                        { bits: state.bits }));
}

function applyState(s: SessionState): void {
  if (!gate.accept(s.seq)) return; // stale response: discard
  state.lastState = s;
}

async function refresh(): Promise<void> {
  if (!state.sessionId) return;
  const [st, prop] = await Promise.all([
    state.client.getState(state.sessionId),
    state.client.propose(state.sessionId),
  ]);
  applyState(st.state);
  state.lastPropose = prop;
  redraw();
}

async function withBusy(action: () => Promise<void>): Promise<void> {
  if (state.busy) return; // requests are serialized
  state.busy = true;
  renderError(null);
  try {
    await action();
    state.retry = null;
  } catch (e) {
    state.retry = action;
    if (e instanceof ServiceError) {
      renderError(`${e.code}: ${e.message}`); // surfaced verbatim
    } else {
      renderError(String(e));
    }
  } finally {
    state.busy = false;
  }
}

function populateControls(config: ExperimentConfigDoc): void {
  const placementSelect = $("placement-select") as HTMLSelectElement;
  placementSelect.replaceChildren(
    ...config.placements.map((p) => new Option(p.label, p.label)));
  const updateOutcomes = () => {
    const chosen = config.placements.find(
      (p) => p.label === placementSelect.value);
    const outcomeSelect = $("outcome-select") as HTMLSelectElement;
    outcomeSelect.replaceChildren(
      ...(chosen?.outcomes ?? []).map((o) => new Option(o, o)));
  };
  placementSelect.onchange = updateOutcomes;
  updateOutcomes();
}

function wire(): void {
  $("create-button").onclick = () => withBusy(async () => {
    const raw = ($("config-input") as HTMLTextAreaElement).value;
    const config = JSON.parse(raw) as ExperimentConfigDoc;
    const base = ($("service-url") as HTMLInputElement).value.trim();
    state.client = new ServiceClient(base.replace(/\/$/, ""));
    gate.reset();
    const created = await state.client.createSession(config);
    state.sessionId = created.session_id;
    $("session-id").textContent = `session ${created.session_id}`;
    populateControls(config);
    applyState(created.state);
    await refresh();
  });

  $("record-button").onclick = () => withBusy(async () => {
    if (!state.sessionId) return;
    const placement = ($("placement-select") as HTMLSelectElement).value;
    const outcome = ($("outcome-select") as HTMLSelectElement).value;
    const resp = await state.client.recordOutcome(
      state.sessionId, placement, outcome);
    applyState(resp.state);
    state.lastPropose = await state.client.propose(state.sessionId);
    redraw();
  });

  $("undo-button").onclick = () => withBusy(async () => {
    if (!state.sessionId) return;
    // undo appends to the record, so the sequence number still advances
    const resp = await state.client.undo(state.sessionId);
    applyState(resp.state);
    state.lastPropose = await state.client.propose(state.sessionId);
    redraw();
  });

  $("export-button").onclick = () => withBusy(async () => {
    if (!state.sessionId) return;
    const data = await state.client.exportSession(state.sessionId);
    const blob = new Blob([JSON.stringify(data, null, 2)],
                          { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `session-${state.sessionId}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
  });

  ($("bits-toggle") as HTMLInputElement).onchange = (ev) => {
    state.bits = (ev.target as HTMLInputElement).checked;
    redraw(); // display-only: no refetch, no recompute
  };

  $("retry-button").onclick = () => {
    const again = state.retry;
    if (again) void withBusy(again);
  };
}

wire();
