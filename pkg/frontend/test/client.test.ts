/** Sequence-gate behaviour: stale responses are dropped, fresh ones applied. */
import { describe, expect, it } from "vitest";

import { SequenceGate } from "../src/client.js";

describe("SequenceGate", () => {
  it("accepts monotonically increasing sequence numbers", () => {
    const gate = new SequenceGate();
    expect(gate.accept(1)).toBe(true);
    expect(gate.accept(2)).toBe(true);
    expect(gate.accept(5)).toBe(true);
  });

  it("drops a response that arrives out of order", () => {
    const gate = new SequenceGate();
    expect(gate.accept(3)).toBe(true);
    expect(gate.accept(2)).toBe(false);
    expect(gate.accept(3)).toBe(true); // a re-read of the same state is fine
  });

  it("reset starts a new session's numbering", () => {
    const gate = new SequenceGate();
    gate.accept(9);
    gate.reset();
    expect(gate.accept(1)).toBe(true);
  });
});
