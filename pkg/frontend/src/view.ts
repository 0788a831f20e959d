/** Pure rendering state: a function of the latest service responses only.
 *
 * Nothing here computes posteriors, gains, or termination; the client never
 * infers. The unit toggle (nats/bits) is display formatting.
 */
import {
  ProposeResponse,
  SessionState,
  atomKeyLabel,
} from "./types.js";

export interface Bar {
  label: string;
  weight: number;
  /** Width of the bar as a percentage of the panel. */
  percent: number;
}

export interface CellBlock {
  label: string;
  value: number;
  /** Horizontal extent proportional to the cell length. */
  widthPercent: number;
  /** Height proportional to the density value (relative to the max). */
  heightPercent: number;
}

export interface ProposalLine {
  label: string;
  gain: string;
  recommended: boolean;
}

export interface HistoryLine {
  trial: number;
  placement: string;
  outcome: string;
  gain: string;
  entropy: string;
}

export interface ViewModel {
  bars: Bar[];
  cells: CellBlock[];
  entropy: string;
  unit: "nats" | "bits";
  proposal: {
    recommended: string | null;
    terminate: boolean;
    reason: string;
    lines: ProposalLine[];
  } | null;
  history: HistoryLine[];
  banner: string | null;
  inputsEnabled: boolean;
}

export function formatValue(nats: number, bits: boolean): string {
  const v = bits ? nats / Math.LN2 : nats;
  return v.toPrecision(4);
}

function fractionToNumber(text: string): number {
  const slash = text.indexOf("/");
  if (slash < 0) return Number(text);
  return Number(text.slice(0, slash)) / Number(text.slice(slash + 1));
}

export function buildViewModel(
  state: SessionState,
  propose: ProposeResponse | null,
  opts: { bits: boolean },
): ViewModel {
  const bars: Bar[] = state.posterior.atoms.map((a) => ({
    label: atomKeyLabel(a.key),
    weight: a.weight,
    percent: a.weight * 100,
  }));

  const cellsIn = state.posterior.cells;
  const maxValue = Math.max(1e-12, ...cellsIn.map((c) => c.value));
  const totalLength = cellsIn.reduce(
    (acc, c) => acc + (fractionToNumber(c.cell[1]) - fractionToNumber(c.cell[0])),
    0,
  );
  const cells: CellBlock[] = cellsIn.map((c) => {
    const length = fractionToNumber(c.cell[1]) - fractionToNumber(c.cell[0]);
    return {
      label: `[${c.cell[0]}, ${c.cell[1]})`,
      value: c.value,
      widthPercent: totalLength > 0 ? (length / totalLength) * 100 : 0,
      heightPercent: (c.value / maxValue) * 100,
    };
  });

  const proposal = propose
    ? {
        recommended: propose.recommended,
        terminate: propose.terminate,
        reason: propose.reason,
        lines: Object.entries(propose.gains_nats)
          .sort(([a], [b]) => a.localeCompare(b))
          .map(([label, gain]) => ({
            label,
            gain: formatValue(gain, opts.bits),
            recommended: label === propose.recommended,
          })),
      }
    : null;

  return {
    bars,
    cells,
    entropy: formatValue(state.entropy_nats, opts.bits),
    unit: opts.bits ? "bits" : "nats",
    proposal,
    history: state.history.map((r) => ({
      trial: r.trial,
      placement: r.placement,
      outcome: r.outcome,
      gain: formatValue(r.expected_gain_nats, opts.bits),
      entropy: formatValue(r.posterior_entropy_nats, opts.bits),
    })),
    banner: state.terminated ? `Experiment terminated: ${state.reason}` : null,
    inputsEnabled: !state.terminated,
  };
}
