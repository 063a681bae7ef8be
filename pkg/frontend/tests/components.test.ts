import { describe, expect, it } from "vitest";

import {
  attributionBarChart,
  counterfactualDiffTable,
  decisionView,
  eventList,
  formatNumber,
  prototypeTable,
  rankedExampleList,
} from "../src/components.js";
import { GraphView } from "../src/panels.js";
import type { BlockDoc, NodeDoc } from "../src/types.js";

function block(id: string, kind = "model"): BlockDoc {
  return { kind: "block", id, display_name: id, block_kind: kind, methods: [] };
}

describe("attributionBarChart", () => {
  const attribution = {
    method: "shap",
    base_value: 0.4,
    prediction: 0.9,
    values: { income: 0.45, gender: -0.05, age: 0.1 },
  };

  it("renders one bar per feature, signed classes", () => {
    const chart = attributionBarChart(attribution);
    const bars = chart.querySelectorAll("rect.bar");
    expect(bars.length).toBe(3);
    const income = chart.querySelector('rect[data-feature="income"]')!;
    expect(income.classList.contains("positive")).toBe(true);
    const gender = chart.querySelector('rect[data-feature="gender"]')!;
    expect(gender.classList.contains("negative")).toBe(true);
  });

  it("sorts bars by absolute magnitude", () => {
    const chart = attributionBarChart(attribution);
    const features = Array.from(chart.querySelectorAll("rect.bar")).map((b) =>
      b.getAttribute("data-feature"),
    );
    expect(features).toEqual(["income", "age", "gender"]);
  });
});

describe("counterfactualDiffTable", () => {
  it("highlights only changed cells", () => {
    const table = counterfactualDiffTable({
      counterfactuals: [
        {
          original: { income: 4000, area: "rural" },
          modified: { income: 5200, area: "rural" },
          changed: ["income"],
          predicted_label: "approve",
          distance: 0.7,
        },
      ],
      diagnostic: null,
    });
    expect(table.querySelectorAll("td.changed").length).toBe(1);
    expect(table.querySelector("caption")?.textContent).toContain("approve");
  });

  it("shows the diagnostic when empty", () => {
    const view = counterfactualDiffTable({ counterfactuals: [], diagnostic: "nothing reachable" });
    expect(view.textContent).toContain("nothing reachable");
  });
});

describe("prototypeTable and rankedExampleList", () => {
  it("renders prototype and criticism sections with row indices", () => {
    const rows = [
      { income: 1, label: "a" },
      { income: 2, label: "b" },
      { income: 3, label: "a" },
    ];
    const view = prototypeTable(
      { prototypes: [0, 2], criticisms: [1], kernel_bandwidth: 1.0 },
      rows,
    );
    expect(view.querySelectorAll(".prototypes tbody tr").length).toBe(2);
    expect(view.querySelectorAll(".criticisms tbody tr").length).toBe(1);
    expect(view.querySelector('[data-row-index="2"]')).not.toBeNull();
  });

  it("orders examples and carries similarity + prediction", () => {
    const list = rankedExampleList([
      { row_index: 4, similarity: 1.0, label: "approve", probability: 0.93, values: { income: 4 } },
      { row_index: 9, similarity: 0.5, label: "deny", probability: 0.88, values: { income: 9 } },
    ]);
    const items = list.querySelectorAll("li");
    expect(items.length).toBe(2);
    expect(items[0].textContent).toContain("similarity 1");
    expect(items[1].textContent).toContain("deny");
  });
});

describe("decisionView and eventList", () => {
  it("shows override provenance and skipped branches", () => {
    const view = decisionView({
      label: "approve",
      probabilities: [0.2, 0.8],
      classes: ["deny", "approve"],
      overridden: true,
      original_label: "deny",
      override_rule_index: 0,
      per_branch: [null, { label: "approve", probabilities: [0.2, 0.8] }],
    });
    expect(view.querySelector(".override-note")?.textContent).toContain("deny");
    const branches = view.querySelectorAll(".branch-line");
    expect(branches[0].classList.contains("skipped")).toBe(true);
    expect(branches[1].textContent).toContain("approve");
  });

  it("lists fired events with their details", () => {
    const list = eventList([
      { type: "override", block: "guard", rule_index: 0, label: "approve" },
      { type: "rejected", block: "filter", message: "negative income" },
    ]);
    const items = list.querySelectorAll("li");
    expect(items[0].textContent).toContain("block=guard");
    expect(items[1].textContent).toContain("negative income");
  });
});

describe("GraphView re-render", () => {
  it("replaces the graph when the chain document changes", () => {
    const view = new GraphView(() => {});
    const one: NodeDoc = { kind: "chain", children: [block("a"), block("b")] };
    const two: NodeDoc = { kind: "chain", children: [block("a"), block("b"), block("c")] };
    view.render(one);
    expect(view.element.querySelectorAll(".graph-node").length).toBe(2);
    view.render(two);
    expect(view.element.querySelectorAll(".graph-node").length).toBe(3);
  });
});

describe("formatNumber", () => {
  it("keeps integers intact and trims tiny floats", () => {
    expect(formatNumber(4200)).toBe("4200");
    expect(formatNumber(0.123456)).toBe("0.123");
    expect(formatNumber(0.0001234)).toBe("0.000123");
  });
});
