/** DOM writes for a ViewModel; all data comes pre-formatted from view.ts. */
import { ViewModel } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function render(vm: ViewModel): void {
  const barsBox = el("posterior-bars");
  barsBox.replaceChildren(
    ...vm.bars.map((bar) => {
      const row = document.createElement("div");
      row.className = "bar-row";
      const label = document.createElement("span");
      label.className = "bar-label";
      label.textContent = bar.label;
      const track = document.createElement("div");
      track.className = "bar-track";
      const fill = document.createElement("div");
      fill.className = "bar-fill";
      fill.style.width = `${bar.percent}%`;
      track.append(fill);
      const value = document.createElement("span");
      value.className = "bar-value";
      value.textContent = bar.weight.toPrecision(4);
      row.append(label, track, value);
      return row;
    }),
  );

  const cellsBox = el("posterior-cells");
  cellsBox.replaceChildren(
    ...vm.cells.map((cell) => {
      const block = document.createElement("div");
      block.className = "cell-block";
      block.style.width = `${cell.widthPercent}%`;
      block.style.height = `${Math.max(2, cell.heightPercent)}%`;
      block.title = `${cell.label}: density ${cell.value.toPrecision(4)}`;
      return block;
    }),
  );
  cellsBox.style.display = vm.cells.length ? "flex" : "none";

  el("entropy").textContent = `posterior entropy: ${vm.entropy} ${vm.unit}`;

  const proposalBox = el("proposal");
  if (vm.proposal === null) {
    proposalBox.textContent = "";
  } else if (vm.proposal.terminate) {
    proposalBox.textContent = `proposal: stop (${vm.proposal.reason})`;
  } else {
    const lines = vm.proposal.lines.map((line) => {
      const div = document.createElement("div");
      div.className = line.recommended ? "gain-line recommended" : "gain-line";
      div.textContent = `${line.recommended ? "→ " : "  "}${line.label}: ` +
        `${line.gain} ${vm.unit}`;
      return div;
    });
    proposalBox.replaceChildren(...lines);
  }

  const historyBody = el("history-body");
  historyBody.replaceChildren(
    ...vm.history.map((row) => {
      const tr = document.createElement("tr");
      for (const text of [String(row.trial), row.placement, row.outcome,
                          row.gain, row.entropy]) {
        const td = document.createElement("td");
        td.textContent = text;
        tr.append(td);
      }
      return tr;
    }),
  );

  const banner = el("banner");
  banner.textContent = vm.banner ?? "";
  banner.style.display = vm.banner ? "block" : "none";

  for (const id of ["record-button", "placement-select", "outcome-select",
                    "undo-button"]) {
    (el(id) as HTMLButtonElement | HTMLSelectElement).disabled =
      id === "undo-button" ? false : !vm.inputsEnabled;
  }
}

export function renderError(message: string | null): void {
  const box = el("error-box");
  box.textContent = message ?? "";
  box.style.display = message ? "block" : "none";
  (el("retry-button") as HTMLButtonElement).style.display =
    message ? "inline-block" : "none";
}
