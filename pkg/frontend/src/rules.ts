// Structured rule builder shared by the rule editor panel: turns form
// selections into rule text so users never have to hand-write the grammar,
// and helpers for rendering parse errors at their reported offset.

import type { ColumnSchema } from "./types.js";

export interface RuleDraft {
  field: string;
  op: "==" | "!=" | "<" | "<=" | ">" | ">=";
  value: string;
  action: "OVERRIDE" | "REJECT" | "SHUTDOWN" | "RESET";
  actionText: string;
}

function quote(text: string): string {
  return "'" + text.replace(/\\/g, "\\\\").replace(/'/g, "\\'") + "'";
}

export function buildRuleText(draft: RuleDraft, columns: ColumnSchema[]): string {
  const column = columns.find((c) => c.name === draft.field);
  const isNumeric = column ? column.kind === "numeric" : !isNaN(Number(draft.value));
  const value = isNumeric ? String(Number(draft.value)) : quote(draft.value);
  const condition = `input.${draft.field} ${draft.op} ${value}`;
  switch (draft.action) {
    case "OVERRIDE":
      return `WHEN ${condition} THEN OVERRIDE(${quote(draft.actionText)})`;
    case "REJECT":
      return `WHEN ${condition} THEN REJECT(${quote(draft.actionText)})`;
    default:
      return `WHEN ${condition} THEN ${draft.action}`;
  }
}

export interface ErrorMarker {
  before: string;
  at: string;
  after: string;
}

// Split rule text around a parser-reported byte offset so the editor can
// underline the offending spot.
export function splitAtOffset(text: string, offset: number): ErrorMarker {
  const clamped = Math.max(0, Math.min(offset, text.length));
  return {
    before: text.slice(0, clamped),
    at: text.slice(clamped, clamped + 1) || " ",
    after: text.slice(clamped + 1),
  };
}

export const ACTIONS_BY_BLOCK_KIND: Record<string, RuleDraft["action"][]> = {
  guard: ["OVERRIDE"],
  filter: ["REJECT"],
  bomb: ["SHUTDOWN", "RESET"],
  splitter: [],
};

export function isRuleCapable(blockKind: string): boolean {
  return blockKind in ACTIONS_BY_BLOCK_KIND;
}
