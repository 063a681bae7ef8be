// Wire types mirroring the HTTP API contract.

export interface ControlEvent {
  type: string;
  block?: string | null;
  rule_index?: number;
  label?: string;
  original_label?: string;
  message?: string;
  reason?: string;
  [key: string]: unknown;
}

export interface Envelope<T = unknown> {
  value: T;
  data_type: string;
  updated: boolean;
  events: ControlEvent[];
}

export interface ApiErrorBody {
  error: {
    type: string;
    message: string;
    param?: string;
    position?: number;
    expected?: string[];
    column?: string | null;
    [key: string]: unknown;
  };
}

export interface MethodParamDoc {
  name: string;
  type: string;
  required: boolean;
}

export interface MethodDoc {
  name: string;
  role: "predict" | "transform" | "create" | "read" | "update" | "delete";
  params: MethodParamDoc[];
  returns: string;
  description: string;
}

export interface BlockDoc {
  kind: "block";
  id: string;
  display_name: string;
  block_kind: string;
  methods: MethodDoc[];
}

export interface ChainDoc {
  kind: "chain";
  children: NodeDoc[];
}

export interface ParallelDoc {
  kind: "parallel";
  branches: NodeDoc[];
}

export type NodeDoc = BlockDoc | ChainDoc | ParallelDoc;

export interface ColumnSchema {
  name: string;
  kind: "numeric" | "categorical";
  levels: string[];
  mutable_for_counterfactuals: boolean;
  protected: boolean;
}

export interface DatasetSchema {
  target: string;
  columns: ColumnSchema[];
}

export interface BranchRecord {
  label?: string;
  probabilities?: number[];
}

export interface DecisionRecord {
  label: string;
  probabilities: number[];
  classes: string[];
  input?: Record<string, unknown>;
  per_branch?: (BranchRecord | null)[];
  strategy?: string;
  overridden?: boolean;
  original_label?: string;
  override_rule_index?: number;
}

export interface AttributionResult {
  method: string;
  base_value: number;
  prediction: number;
  values: Record<string, number>;
}

export interface WhatIfValue {
  row: Record<string, unknown>;
  decision: DecisionRecord | null;
  rejected: boolean;
  message: string | null;
  events: ControlEvent[];
}

export interface CounterfactualEntry {
  original: Record<string, unknown>;
  modified: Record<string, unknown>;
  changed: string[];
  predicted_label: string;
  distance: number;
}

export interface CounterfactualValue {
  counterfactuals: CounterfactualEntry[];
  diagnostic: string | null;
}

export interface PrototypeValue {
  prototypes: number[];
  criticisms: number[];
  kernel_bandwidth: number;
}

export interface RankedExampleEntry {
  row_index: number;
  similarity: number;
  label: string;
  probability: number;
  values: Record<string, unknown>;
}

export interface RuleListing {
  text: string;
  active: boolean;
}

export interface ToolSchema {
  name: string;
  description: string;
  parameters: { type: string; properties: Record<string, unknown>; required: string[] };
  verb: string;
  path: string;
}

export interface ToolCallPayload {
  name: string;
  arguments: Record<string, unknown>;
}

export interface ToolResultPayload {
  status: number;
  body: Envelope | ApiErrorBody;
}

export interface ChatTurnPayload {
  role: "user" | "agent" | "tool";
  content: string;
  tool_call: ToolCallPayload | null;
  tool_result: ToolResultPayload | null;
}

export interface ShutdownStatus {
  active: boolean;
  reason: string;
}

export function isBlockDoc(node: NodeDoc): node is BlockDoc {
  return node.kind === "block";
}
