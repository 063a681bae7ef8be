// Interactive panels: chain graph, block inspector with rule editor, what-if
// exploration, chat with tool-call audit, and the shutdown control.

import { ApiClient, ApiError } from "./api.js";
import {
  attributionBarChart,
  counterfactualDiffTable,
  decisionView,
  eventList,
  formatNumber,
  prototypeTable,
  rankedExampleList,
} from "./components.js";
import { GraphLayout, layoutChain } from "./graph.js";
import { ACTIONS_BY_BLOCK_KIND, RuleDraft, buildRuleText, isRuleCapable, splitAtOffset } from "./rules.js";
import type {
  BlockDoc,
  ChatTurnPayload,
  ColumnSchema,
  DatasetSchema,
  NodeDoc,
  RuleListing,
  WhatIfValue,
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

function button(label: string, onClick: () => void, className = "btn"): HTMLButtonElement {
  const b = el("button", className, label);
  b.type = "button";
  b.addEventListener("click", onClick);
  return b;
}

// --- chain graph -------------------------------------------------------------


export class GraphView {
  readonly element: HTMLElement;
  private selected: string | null = null;

  constructor(private readonly onSelect: (blockId: string) => void) {
    this.element = el("div", "graph-view");
  }

  render(doc: NodeDoc): GraphLayout {
    const layout = layoutChain(doc);
    this.element.replaceChildren();
    const svg = document.createElementNS(SVG_NS, "svg");
    const pad = 16;
    svg.setAttribute("viewBox", `${-pad} ${-pad} ${layout.width + 2 * pad} ${layout.height + 2 * pad}`);
    svg.setAttribute("width", String(layout.width + 2 * pad));
    svg.setAttribute("height", String(layout.height + 2 * pad));
    svg.setAttribute("class", "chain-graph");

    const byId = new Map(layout.nodes.map((n) => [n.id, n]));
    for (const edge of layout.edges) {
      const from = byId.get(edge.from)!;
      const to = byId.get(edge.to)!;
      const path = document.createElementNS(SVG_NS, "path");
      const x1 = from.x + from.width;
      const y1 = from.y + from.height / 2;
      const x2 = to.x;
      const y2 = to.y + to.height / 2;
      const mx = (x1 + x2) / 2;
      path.setAttribute("d", `M ${x1} ${y1} C ${mx} ${y1}, ${mx} ${y2}, ${x2} ${y2}`);
      path.setAttribute("class", "edge");
      svg.appendChild(path);
    }
    for (const node of layout.nodes) {
      const group = document.createElementNS(SVG_NS, "g");
      group.setAttribute("class", `graph-node kind-${node.blockKind}${node.id === this.selected ? " selected" : ""}`);
      group.setAttribute("data-block-id", node.id);
      group.addEventListener("click", () => {
        this.selected = node.id;
        this.onSelect(node.id);
      });
      const rect = document.createElementNS(SVG_NS, "rect");
      rect.setAttribute("x", String(node.x));
      rect.setAttribute("y", String(node.y));
      rect.setAttribute("rx", "8");
      rect.setAttribute("width", String(node.width));
      rect.setAttribute("height", String(node.height));
      group.appendChild(rect);
      const title = document.createElementNS(SVG_NS, "text");
      title.setAttribute("x", String(node.x + node.width / 2));
      title.setAttribute("y", String(node.y + 24));
      title.setAttribute("text-anchor", "middle");
      title.setAttribute("class", "node-title");
      title.textContent = node.label;
      group.appendChild(title);
      const kind = document.createElementNS(SVG_NS, "text");
      kind.setAttribute("x", String(node.x + node.width / 2));
      kind.setAttribute("y", String(node.y + 42));
      kind.setAttribute("text-anchor", "middle");
      kind.setAttribute("class", "node-kind");
      kind.textContent = node.blockKind;
      group.appendChild(kind);
      svg.appendChild(group);
    }
    this.element.appendChild(svg);
    return layout;
  }
}

// --- rule editor ------------------------------------------------------------------


export class RuleEditor {
  readonly element: HTMLElement;
  private listElement: HTMLElement;
  private errorElement: HTMLElement;
  private textarea: HTMLTextAreaElement;

  constructor(
    private readonly client: ApiClient,
    private readonly blockId: string,
    private readonly blockKind: string,
    private readonly columns: ColumnSchema[],
    private readonly onMutated: () => void,
  ) {
    this.element = el("div", "rule-editor");
    this.element.appendChild(el("h3", undefined, "Rules"));
    this.listElement = el("div", "rule-list");
    this.element.appendChild(this.listElement);
    this.errorElement = el("div", "rule-error");
    this.errorElement.hidden = true;

    this.textarea = el("textarea", "rule-text");
    this.textarea.rows = 2;
    this.textarea.placeholder = "WHEN input.field >= value THEN ...";

    this.element.appendChild(this.buildStructuredForm());
    this.element.appendChild(this.textarea);
    this.element.appendChild(this.errorElement);
    this.element.appendChild(button("Save rule", () => void this.save(), "btn primary save-rule"));
  }

  private buildStructuredForm(): HTMLElement {
    const form = el("div", "rule-builder");
    const fieldSelect = el("select", "field-select");
    for (const column of this.columns) {
      const option = el("option", undefined, column.name);
      option.value = column.name;
      fieldSelect.appendChild(option);
    }
    const opSelect = el("select", "op-select");
    for (const op of ["==", "!=", "<", "<=", ">", ">="]) {
      const option = el("option", undefined, op);
      option.value = op;
      opSelect.appendChild(option);
    }
    const valueInput = el("input", "value-input");
    valueInput.placeholder = "value";
    const actionSelect = el("select", "action-select");
    for (const action of ACTIONS_BY_BLOCK_KIND[this.blockKind] ?? []) {
      const option = el("option", undefined, action);
      option.value = action;
      actionSelect.appendChild(option);
    }
    const actionText = el("input", "action-text");
    actionText.placeholder = "label or message";

    const compose = () => {
      const draft: RuleDraft = {
        field: fieldSelect.value,
        op: opSelect.value as RuleDraft["op"],
        value: valueInput.value,
        action: (actionSelect.value || "SHUTDOWN") as RuleDraft["action"],
        actionText: actionText.value,
      };
      this.textarea.value = buildRuleText(draft, this.columns);
    };
    for (const control of [fieldSelect, opSelect, valueInput, actionSelect, actionText]) {
      control.addEventListener("input", compose);
      control.addEventListener("change", compose);
    }
    form.append(fieldSelect, opSelect, valueInput, actionSelect, actionText);
    return form;
  }

  async refresh(): Promise<void> {
    const envelope = await this.client.listRules(this.blockId);
    this.renderList(envelope.value);
  }

  private renderList(rules: RuleListing[]): void {
    this.listElement.replaceChildren();
    if (!rules.length) {
      this.listElement.appendChild(el("p", "empty", "No rules configured."));
      return;
    }
    rules.forEach((rule, index) => {
      const row = el("div", `rule-row${rule.active ? "" : " inactive"}`);
      row.dataset.index = String(index);
      const toggle = el("input", "rule-toggle");
      toggle.type = "checkbox";
      toggle.checked = rule.active;
      toggle.addEventListener("change", () => {
        void this.client
          .setRuleActive(this.blockId, index, toggle.checked)
          .then(() => this.refresh())
          .then(this.onMutated);
      });
      row.appendChild(toggle);
      row.appendChild(el("code", "rule-code", rule.text));
      row.appendChild(
        button("x", () => {
          void this.client.deleteRule(this.blockId, index).then(() => this.refresh()).then(this.onMutated);
        }, "btn danger delete-rule"),
      );
      this.listElement.appendChild(row);
    });
  }

  async save(): Promise<void> {
    const text = this.textarea.value.trim();
    if (!text) return;
    this.errorElement.hidden = true;
    try {
      await this.client.addRule(this.blockId, text);
      this.textarea.value = "";
      await this.refresh();
      this.onMutated();
    } catch (error) {
      if (error instanceof ApiError && error.body) {
        this.showError(text, error);
      } else {
        throw error;
      }
    }
  }

  private showError(text: string, error: ApiError): void {
    this.errorElement.replaceChildren();
    this.errorElement.hidden = false;
    const detail = error.body!.error;
    if (typeof detail.position === "number") {
      const marker = splitAtOffset(text, detail.position);
      const line = el("div", "error-position");
      line.appendChild(el("span", undefined, marker.before));
      line.appendChild(el("span", "error-caret", marker.at));
      line.appendChild(el("span", undefined, marker.after));
      this.errorElement.appendChild(line);
    }
    this.errorElement.appendChild(el("div", "error-message", `${detail.type}: ${detail.message}`));
  }
}

// --- block panel --------------------------------------------------------------------


export class BlockPanel {
  readonly element: HTMLElement;
  ruleEditor: RuleEditor | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly schema: DatasetSchema,
    private readonly onMutated: () => void,
  ) {
    this.element = el("div", "block-panel");
    this.element.appendChild(el("p", "empty", "Select a block in the graph."));
  }

  async show(block: BlockDoc): Promise<void> {
    this.element.replaceChildren();
    this.ruleEditor = null;
    this.element.appendChild(el("h2", undefined, `${block.display_name}`));
    this.element.appendChild(el("div", "block-kind-tag", block.block_kind));

    const methods = el("div", "method-list");
    methods.appendChild(el("h3", undefined, "Methods"));
    for (const role of ["predict", "transform", "create", "read", "update", "delete"]) {
      const group = block.methods.filter((m) => m.role === role);
      if (!group.length) continue;
      const section = el("div", `method-group role-${role}`);
      section.appendChild(el("h4", undefined, role));
      for (const descriptor of group) {
        const line = el("div", "method-line");
        const signature = descriptor.params.map((p) => `${p.name}: ${p.type}`).join(", ");
        line.appendChild(el("code", undefined, `${descriptor.name}(${signature})`));
        if (descriptor.description) {
          line.appendChild(el("span", "method-doc", descriptor.description));
        }
        section.appendChild(line);
      }
      methods.appendChild(section);
    }
    this.element.appendChild(methods);

    if (isRuleCapable(block.block_kind) && block.block_kind !== "splitter") {
      this.ruleEditor = new RuleEditor(
        this.client, block.id, block.block_kind, this.schema.columns, this.onMutated,
      );
      this.element.appendChild(this.ruleEditor.element);
      await this.ruleEditor.refresh();
    }
    if (block.block_kind === "model") {
      const actions = el("div", "model-actions");
      const output = el("div", "model-output");
      actions.appendChild(
        button("Show structure", async () => {
          const envelope = await this.client.invokeBlockMethod("GET", block.id, "describe");
          output.replaceChildren(el("pre", "model-structure", JSON.stringify(envelope.value, null, 2)));
        }),
      );
      actions.appendChild(
        button("Retrain", async () => {
          await this.client.invokeBlockMethod("PUT", block.id, "retrain");
          this.onMutated();
        }),
      );
      this.element.appendChild(actions);
      this.element.appendChild(output);
    }
    if (block.block_kind === "dataset") {
      const envelope = await this.client.getRows(block.id, 5);
      const preview = el("pre", "dataset-preview", JSON.stringify(envelope.value, null, 2));
      this.element.appendChild(el("h3", undefined, "First rows"));
      this.element.appendChild(preview);
    }
    if (block.block_kind === "shutdown") {
      this.element.appendChild(el("p", undefined, "Use the emergency stop control in the header."));
    }
  }
}

// --- what-if panel ----------------------------------------------------------------------


export class WhatIfPanel {
  readonly element: HTMLElement;
  private readonly inputs = new Map<string, HTMLInputElement | HTMLSelectElement>();
  private resultElement: HTMLElement;
  private banner: HTMLElement;
  private eventsElement: HTMLElement;
  private extrasElement: HTMLElement;
  private sequence = 0;
  lastValue: WhatIfValue | null = null;

  constructor(
    private readonly client: ApiClient,
    private readonly schema: DatasetSchema,
    private readonly base: Record<string, unknown>,
  ) {
    this.element = el("div", "whatif-panel");
    this.element.appendChild(el("h2", undefined, "What-if exploration"));
    const form = el("div", "whatif-form");
    for (const column of this.schema.columns) {
      if (column.name === this.schema.target) continue;
      const row = el("label", "whatif-field");
      row.appendChild(el("span", "field-name", column.name));
      if (column.kind === "numeric") {
        const input = el("input", "field-input numeric");
        input.type = "number";
        input.step = "any";
        input.value = String(this.base[column.name] ?? 0);
        input.name = column.name;
        input.addEventListener("input", () => void this.run());
        this.inputs.set(column.name, input);
        row.appendChild(input);
      } else {
        const select = el("select", "field-input categorical");
        select.name = column.name;
        for (const level of column.levels) {
          const option = el("option", undefined, level);
          option.value = level;
          select.appendChild(option);
        }
        select.value = String(this.base[column.name] ?? column.levels[0]);
        select.addEventListener("change", () => void this.run());
        this.inputs.set(column.name, select);
        row.appendChild(select);
      }
      form.appendChild(row);
    }
    this.element.appendChild(form);

    this.banner = el("div", "rejection-banner");
    this.banner.hidden = true;
    this.element.appendChild(this.banner);
    this.resultElement = el("div", "whatif-result");
    this.element.appendChild(this.resultElement);
    this.eventsElement = el("div", "whatif-events");
    this.element.appendChild(this.eventsElement);

    const actions = el("div", "whatif-actions");
    actions.appendChild(button("Why? (attributions)", () => void this.explainWhy(), "btn explain-why"));
    actions.appendChild(
      button("How to change the outcome?", () => void this.findCounterfactuals(), "btn explain-cf"),
    );
    actions.appendChild(button("Typical cases", () => void this.showPrototypes(), "btn explain-proto"));
    actions.appendChild(button("Similar cases", () => void this.showExamples(), "btn explain-examples"));
    this.element.appendChild(actions);
    this.extrasElement = el("div", "whatif-extras");
    this.element.appendChild(this.extrasElement);
  }

  currentRow(): Record<string, unknown> {
    const row: Record<string, unknown> = {};
    for (const [name, input] of this.inputs) {
      const column = this.schema.columns.find((c) => c.name === name)!;
      row[name] = column.kind === "numeric" ? Number(input.value) : input.value;
    }
    return row;
  }

  async run(): Promise<WhatIfValue | null> {
    const ticket = ++this.sequence;
    const row = this.currentRow();
    let envelope;
    try {
      envelope = await this.client.whatIf(this.base, row);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409 && ticket === this.sequence) {
        this.banner.hidden = false;
        this.banner.textContent = "The pipeline is shut down; reset the emergency stop to predict.";
        this.resultElement.replaceChildren();
        return null;
      }
      throw error;
    }
    if (ticket !== this.sequence) {
      return null; // superseded by a newer edit: latest wins
    }
    this.lastValue = envelope.value;
    this.renderResult(envelope.value);
    return envelope.value;
  }

  private renderResult(value: WhatIfValue): void {
    this.banner.hidden = !value.rejected;
    this.resultElement.replaceChildren();
    this.eventsElement.replaceChildren();
    if (value.rejected) {
      this.banner.textContent = `Input rejected: ${value.message}`;
      return;
    }
    if (value.decision) {
      this.resultElement.appendChild(decisionView(value.decision));
    }
    if (value.events.length) {
      this.eventsElement.appendChild(el("h4", undefined, "Fired control events"));
      this.eventsElement.appendChild(eventList(value.events));
    }
  }

  async explainWhy(): Promise<void> {
    const envelope = await this.client.shap(this.currentRow(), {});
    this.extrasElement.replaceChildren(el("h3", undefined, "Feature attributions"));
    this.extrasElement.appendChild(attributionBarChart(envelope.value));
  }

  async findCounterfactuals(): Promise<void> {
    const envelope = await this.client.counterfactuals(this.currentRow(), { k: 2 });
    this.extrasElement.replaceChildren(el("h3", undefined, "Counterfactuals"));
    this.extrasElement.appendChild(counterfactualDiffTable(envelope.value));
  }

  async showPrototypes(): Promise<void> {
    const [prototypes, rows] = await Promise.all([
      this.client.prototypes({ k_prototypes: 5, k_criticisms: 3 }),
      this.client.getRows("dataset", 0),
    ]);
    this.extrasElement.replaceChildren(el("h3", undefined, "Prototypes and criticisms"));
    this.extrasElement.appendChild(prototypeTable(prototypes.value, rows.value));
  }

  async showExamples(): Promise<void> {
    const envelope = await this.client.examples(this.currentRow(), { k: 5 });
    this.extrasElement.replaceChildren(el("h3", undefined, "Similar historical cases"));
    this.extrasElement.appendChild(rankedExampleList(envelope.value));
  }
}

// --- chat panel ---------------------------------------------------------------------------


export class ChatPanel {
  readonly element: HTMLElement;
  private readonly log: HTMLElement;
  private readonly input: HTMLInputElement;
  private readonly notice: HTMLElement;

  constructor(
    private readonly client: ApiClient,
    private readonly session: string,
  ) {
    this.element = el("div", "chat-panel");
    this.element.appendChild(el("h2", undefined, "Chat"));
    this.notice = el("div", "chat-notice");
    this.notice.hidden = true;
    this.element.appendChild(this.notice);
    this.log = el("div", "chat-log");
    this.element.appendChild(this.log);
    const controls = el("div", "chat-controls");
    this.input = el("input", "chat-input");
    this.input.placeholder = "Ask about the pipeline...";
    this.input.addEventListener("keydown", (event) => {
      if (event.key === "Enter") void this.send();
    });
    controls.appendChild(this.input);
    controls.appendChild(button("Send", () => void this.send(), "btn primary chat-send"));
    this.element.appendChild(controls);
  }

  async send(messageOverride?: string): Promise<void> {
    const message = (messageOverride ?? this.input.value).trim();
    if (!message) return;
    this.input.value = "";
    this.notice.hidden = true;
    try {
      const envelope = await this.client.chat(this.session, message);
      this.renderTurns(envelope.value);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.notice.hidden = false;
        this.notice.textContent = "The pipeline is shut down; reset it to resume predictions.";
        return;
      }
      throw error;
    }
  }

  renderTurns(turns: ChatTurnPayload[]): void {
    this.log.replaceChildren();
    for (const turn of turns) {
      if (turn.role === "user") {
        this.log.appendChild(el("div", "turn user", turn.content));
      } else if (turn.role === "agent" && turn.tool_call) {
        const audit = document.createElement("details");
        audit.className = "turn tool-audit";
        const summary = document.createElement("summary");
        summary.textContent = `tool call: ${turn.tool_call.name}`;
        audit.appendChild(summary);
        audit.appendChild(el("pre", "tool-args", JSON.stringify(turn.tool_call.arguments, null, 2)));
        this.log.appendChild(audit);
      } else if (turn.role === "tool") {
        const audit = this.log.lastElementChild;
        const result = turn.tool_result;
        if (audit instanceof HTMLDetailsElement && result) {
          const body = result.body as { data_type?: string; value?: unknown };
          if (body && body.data_type === "attribution") {
            // same bar chart component the explanation panels use
            audit.appendChild(attributionBarChart(body.value as never));
          } else {
            audit.appendChild(el("pre", "tool-result", JSON.stringify(result.body, null, 2)));
          }
          audit.appendChild(el("div", "tool-status", `status ${result.status}`));
        }
      } else {
        this.log.appendChild(el("div", "turn agent", turn.content));
      }
    }
  }

  auditItems(): HTMLElement[] {
    return Array.from(this.log.querySelectorAll(".tool-audit"));
  }
}

// --- shutdown control -------------------------------------------------------------------------


export class ShutdownControl {
  readonly element: HTMLElement;
  private readonly status: HTMLElement;

  constructor(private readonly client: ApiClient, private readonly onChange: () => void) {
    this.element = el("div", "shutdown-control");
    this.status = el("span", "shutdown-status", "running");
    this.element.appendChild(this.status);
    this.element.appendChild(
      button("Emergency stop", () => void this.trip(), "btn danger shutdown-trip"),
    );
    this.element.appendChild(button("Reset", () => void this.reset(), "btn shutdown-reset"));
  }

  private async trip(): Promise<void> {
    const envelope = await this.client.tripShutdown("tripped from UI");
    this.render(envelope.value.active, envelope.value.reason);
    this.onChange();
  }

  private async reset(): Promise<void> {
    const envelope = await this.client.resetShutdown();
    this.render(envelope.value.active, envelope.value.reason);
    this.onChange();
  }

  render(active: boolean, reason: string): void {
    this.status.textContent = active ? `SHUT DOWN (${reason})` : "running";
    this.status.classList.toggle("active", active);
  }
}
