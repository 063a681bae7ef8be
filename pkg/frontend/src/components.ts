// Reusable view components, one per explanation result variant: attribution
// bar chart, counterfactual diff table, prototype table, ranked example list.
// The chat panel reuses the same bar chart for attribution tool results.

import type {
  AttributionResult,
  ControlEvent,
  CounterfactualValue,
  DecisionRecord,
  PrototypeValue,
  RankedExampleEntry,
} from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function formatNumber(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return Math.abs(value) >= 0.01 ? value.toFixed(3) : value.toPrecision(3);
}

export function attributionBarChart(attribution: AttributionResult): SVGSVGElement {
  const entries = Object.entries(attribution.values).sort(
    (a, b) => Math.abs(b[1]) - Math.abs(a[1]),
  );
  const rowHeight = 24;
  const labelWidth = 150;
  const chartWidth = 260;
  const height = entries.length * rowHeight + 8;
  const maxAbs = Math.max(...entries.map(([, v]) => Math.abs(v)), 1e-9);

  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("class", "attribution-chart");
  svg.setAttribute("viewBox", `0 0 ${labelWidth + chartWidth + 70} ${height}`);
  svg.setAttribute("width", String(labelWidth + chartWidth + 70));
  svg.setAttribute("height", String(height));
  svg.setAttribute("data-method", attribution.method);

  const mid = labelWidth + chartWidth / 2;
  entries.forEach(([name, value], index) => {
    const y = index * rowHeight + 4;
    const barLength = (Math.abs(value) / maxAbs) * (chartWidth / 2 - 4);

    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(labelWidth - 6));
    label.setAttribute("y", String(y + rowHeight / 2 + 4));
    label.setAttribute("text-anchor", "end");
    label.setAttribute("class", "bar-label");
    label.textContent = name;
    svg.appendChild(label);

    const bar = document.createElementNS(SVG_NS, "rect");
    bar.setAttribute("x", String(value >= 0 ? mid : mid - barLength));
    bar.setAttribute("y", String(y + 3));
    bar.setAttribute("width", String(Math.max(barLength, 0.5)));
    bar.setAttribute("height", String(rowHeight - 9));
    bar.setAttribute("class", value >= 0 ? "bar positive" : "bar negative");
    bar.setAttribute("data-feature", name);
    bar.setAttribute("data-value", String(value));
    svg.appendChild(bar);

    const valueText = document.createElementNS(SVG_NS, "text");
    valueText.setAttribute("x", String(labelWidth + chartWidth + 6));
    valueText.setAttribute("y", String(y + rowHeight / 2 + 4));
    valueText.setAttribute("class", "bar-value");
    valueText.textContent = formatNumber(value);
    svg.appendChild(valueText);
  });

  const axis = document.createElementNS(SVG_NS, "line");
  axis.setAttribute("x1", String(mid));
  axis.setAttribute("x2", String(mid));
  axis.setAttribute("y1", "0");
  axis.setAttribute("y2", String(height));
  axis.setAttribute("class", "axis");
  svg.appendChild(axis);
  return svg;
}

export function counterfactualDiffTable(value: CounterfactualValue): HTMLElement {
  const wrap = el("div", "counterfactual-view");
  if (!value.counterfactuals.length) {
    const note = el("p", "diagnostic");
    note.textContent = value.diagnostic ?? "No counterfactual found.";
    wrap.appendChild(note);
    return wrap;
  }
  value.counterfactuals.forEach((cf, index) => {
    const table = el("table", "diff-table");
    table.dataset.index = String(index);
    const head = table.createTHead().insertRow();
    ["feature", "original", "modified"].forEach((h) => {
      const cell = document.createElement("th");
      cell.textContent = h;
      head.appendChild(cell);
    });
    const body = table.createTBody();
    for (const feature of Object.keys(cf.original)) {
      const row = body.insertRow();
      row.insertCell().textContent = feature;
      const original = cf.original[feature];
      const modified = cf.modified[feature];
      row.insertCell().textContent =
        typeof original === "number" ? formatNumber(original) : String(original);
      const modifiedCell = row.insertCell();
      modifiedCell.textContent =
        typeof modified === "number" ? formatNumber(modified) : String(modified);
      if (cf.changed.includes(feature)) {
        modifiedCell.classList.add("changed");
        row.classList.add("changed-row");
      }
    }
    const caption = table.createCaption();
    caption.textContent = `#${index + 1}: ${cf.predicted_label} (distance ${formatNumber(cf.distance)})`;
    wrap.appendChild(table);
  });
  return wrap;
}

export function prototypeTable(
  value: PrototypeValue,
  rows: Record<string, unknown>[],
): HTMLElement {
  const wrap = el("div", "prototype-view");
  const render = (title: string, indices: number[], cls: string) => {
    const section = el("div", cls);
    section.appendChild(el("h4", undefined, title));
    const table = el("table", "prototype-table");
    const columns = rows.length ? Object.keys(rows[0]) : [];
    const head = table.createTHead().insertRow();
    ["#", ...columns].forEach((name) => {
      const cell = document.createElement("th");
      cell.textContent = name;
      head.appendChild(cell);
    });
    const body = table.createTBody();
    for (const index of indices) {
      const tr = body.insertRow();
      tr.dataset.rowIndex = String(index);
      tr.insertCell().textContent = String(index);
      for (const column of columns) {
        const raw = rows[index]?.[column];
        tr.insertCell().textContent =
          typeof raw === "number" ? formatNumber(raw) : String(raw ?? "");
      }
    }
    section.appendChild(table);
    wrap.appendChild(section);
  };
  render("Prototypes", value.prototypes, "prototypes");
  if (value.criticisms.length) {
    render("Criticisms", value.criticisms, "criticisms");
  }
  return wrap;
}

export function rankedExampleList(entries: RankedExampleEntry[]): HTMLElement {
  const list = el("ol", "example-list");
  for (const entry of entries) {
    const item = el("li", "example-entry");
    item.dataset.rowIndex = String(entry.row_index);
    const header = el("div", "example-head");
    header.appendChild(el("span", "similarity", `similarity ${formatNumber(entry.similarity)}`));
    header.appendChild(
      el("span", `label label-${entry.label}`, `${entry.label} (${formatNumber(entry.probability)})`),
    );
    item.appendChild(header);
    const features = el("div", "example-features");
    features.textContent = Object.entries(entry.values)
      .map(([k, v]) => `${k}=${typeof v === "number" ? formatNumber(v) : v}`)
      .join("  ");
    item.appendChild(features);
    list.appendChild(item);
  }
  return list;
}

export function decisionView(decision: DecisionRecord): HTMLElement {
  const wrap = el("div", "decision-view");
  const headline = el("div", `decision-label decision-${decision.label}`);
  headline.textContent = decision.label;
  wrap.appendChild(headline);
  const probs = el("div", "decision-probs");
  decision.classes.forEach((cls, index) => {
    probs.appendChild(el("span", "prob", `${cls}: ${formatNumber(decision.probabilities[index])}`));
  });
  wrap.appendChild(probs);
  if (decision.overridden) {
    wrap.appendChild(
      el("div", "override-note", `overridden from ${decision.original_label} by rule #${decision.override_rule_index}`),
    );
  }
  if (decision.per_branch && decision.per_branch.length) {
    const branches = el("div", "per-branch");
    branches.appendChild(el("h4", undefined, "Per-branch outputs"));
    decision.per_branch.forEach((branch, index) => {
      const line = el("div", "branch-line");
      line.dataset.branch = String(index);
      if (branch === null) {
        line.textContent = `branch ${index}: skipped by splitter`;
        line.classList.add("skipped");
      } else {
        const probsText = (branch.probabilities ?? []).map(formatNumber).join(", ");
        line.textContent = `branch ${index}: ${branch.label ?? "?"} [${probsText}]`;
      }
      branches.appendChild(line);
    });
    wrap.appendChild(branches);
  }
  return wrap;
}

export function eventList(events: ControlEvent[]): HTMLElement {
  const list = el("ul", "event-list");
  for (const event of events) {
    const item = el("li", `event event-${event.type}`);
    const parts = [event.type];
    if (event.block) parts.push(`block=${event.block}`);
    if (event.rule_index !== undefined) parts.push(`rule=${event.rule_index}`);
    if (event.label) parts.push(`label=${event.label}`);
    if (event.message) parts.push(`message=${event.message}`);
    item.textContent = parts.join(" ");
    list.appendChild(item);
  }
  return list;
}
