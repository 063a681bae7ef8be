import { describe, expect, it } from "vitest";

import { blockIds, layoutChain, layoutHash, NODE_WIDTH } from "../src/graph.js";
import type { BlockDoc, NodeDoc } from "../src/types.js";

function block(id: string, kind = "model"): BlockDoc {
  return { kind: "block", id, display_name: id, block_kind: kind, methods: [] };
}

const ensembleDoc: NodeDoc = {
  kind: "chain",
  children: [
    block("dataset", "dataset"),
    { kind: "parallel", branches: [block("nn1"), block("nn2")] },
    block("agg", "aggregator"),
  ],
};

describe("layoutChain", () => {
  it("lays a chain out left to right", () => {
    const doc: NodeDoc = { kind: "chain", children: [block("a"), block("b"), block("c")] };
    const layout = layoutChain(doc);
    const xs = layout.nodes.map((n) => n.x);
    expect(xs[0]).toBeLessThan(xs[1]);
    expect(xs[1]).toBeLessThan(xs[2]);
    expect(layout.edges).toEqual([
      { from: "a", to: "b" },
      { from: "b", to: "c" },
    ]);
  });

  it("stacks parallel branches vertically between their neighbours", () => {
    const layout = layoutChain(ensembleDoc);
    const byId = new Map(layout.nodes.map((n) => [n.id, n]));
    const nn1 = byId.get("nn1")!;
    const nn2 = byId.get("nn2")!;
    expect(nn1.x).toBe(nn2.x);
    expect(nn1.y).not.toBe(nn2.y);
    // fan-out and fan-in edges
    expect(layout.edges).toContainEqual({ from: "dataset", to: "nn1" });
    expect(layout.edges).toContainEqual({ from: "dataset", to: "nn2" });
    expect(layout.edges).toContainEqual({ from: "nn1", to: "agg" });
    expect(layout.edges).toContainEqual({ from: "nn2", to: "agg" });
    const agg = byId.get("agg")!;
    expect(agg.x).toBeGreaterThan(nn1.x + NODE_WIDTH - 1);
  });

  it("single block yields one node and no edges", () => {
    const layout = layoutChain(block("solo"));
    expect(layout.nodes).toHaveLength(1);
    expect(layout.edges).toHaveLength(0);
  });

  it("is a pure function of the document (same doc, same hash)", () => {
    const first = layoutHash(layoutChain(ensembleDoc));
    const second = layoutHash(layoutChain(JSON.parse(JSON.stringify(ensembleDoc))));
    expect(first).toBe(second);
    const different = layoutHash(
      layoutChain({ ...ensembleDoc, children: [...ensembleDoc.children].reverse() } as NodeDoc),
    );
    expect(different).not.toBe(first);
  });

  it("collects block ids depth first", () => {
    expect(blockIds(ensembleDoc)).toEqual(["dataset", "nn1", "nn2", "agg"]);
  });
});
