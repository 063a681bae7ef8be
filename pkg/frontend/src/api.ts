// Typed client over the generated REST surface. Every request is recorded in
// requestLog so tests can assert the UI touches only documented routes.

import type {
  ApiErrorBody,
  AttributionResult,
  ChatTurnPayload,
  CounterfactualValue,
  DatasetSchema,
  DecisionRecord,
  Envelope,
  NodeDoc,
  PrototypeValue,
  RankedExampleEntry,
  RuleListing,
  ShutdownStatus,
  ToolSchema,
  WhatIfValue,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface RequestRecord {
  method: string;
  path: string;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody | null,
  ) {
    super(body?.error?.message ?? `request failed with status ${status}`);
  }

  get errorType(): string {
    return this.body?.error?.type ?? "Unknown";
  }
}

export class ApiClient {
  readonly requestLog: RequestRecord[] = [];
  private readonly fetchImpl: FetchLike;

  constructor(
    public readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async call<T>(
    method: string,
    path: string,
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<Envelope<T>> {
    this.requestLog.push({ method, path });
    let url = this.baseUrl + path;
    if (query && Object.keys(query).length) {
      url += "?" + new URLSearchParams(query).toString();
    }
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(url, init);
    const payload = (await response.json()) as Envelope<T> | ApiErrorBody;
    if (response.status === 422) {
      // filter rejection: a result variant, not a failure
      return payload as Envelope<T>;
    }
    if (!response.ok) {
      throw new ApiError(response.status, payload as ApiErrorBody);
    }
    return payload as Envelope<T>;
  }

  // -- chain + data --

  getChain(): Promise<Envelope<NodeDoc>> {
    return this.call("GET", "/chain");
  }

  predict(input: Record<string, unknown>): Promise<Envelope<DecisionRecord>> {
    return this.call("POST", "/chain/predict", { input });
  }

  getSchema(datasetId = "dataset"): Promise<Envelope<DatasetSchema>> {
    return this.call("GET", `/blocks/${datasetId}/get_schema`);
  }

  getRows(datasetId = "dataset", limit = 0): Promise<Envelope<Record<string, unknown>[]>> {
    const query = limit ? { limit: String(limit) } : undefined;
    return this.call("GET", `/blocks/${datasetId}/get_rows`, undefined, query);
  }

  invokeBlockMethod(
    verb: string,
    blockId: string,
    methodName: string,
    args: Record<string, unknown> = {},
  ): Promise<Envelope> {
    if (verb === "GET") {
      const query: Record<string, string> = {};
      for (const [key, value] of Object.entries(args)) {
        query[key] = typeof value === "string" ? value : JSON.stringify(value);
      }
      return this.call("GET", `/blocks/${blockId}/${methodName}`, undefined, query);
    }
    return this.call(verb, `/blocks/${blockId}/${methodName}`, args);
  }

  // -- rules --

  addRule(blockId: string, rule: string): Promise<Envelope> {
    return this.call("POST", `/blocks/${blockId}/add_rule`, { rule });
  }

  listRules(blockId: string): Promise<Envelope<RuleListing[]>> {
    return this.call("GET", `/blocks/${blockId}/rules`);
  }

  setRuleActive(blockId: string, index: number, active: boolean): Promise<Envelope> {
    return this.call("PUT", `/blocks/${blockId}/set_rule_active`, { index, active });
  }

  deleteRule(blockId: string, index: number): Promise<Envelope> {
    return this.call("DELETE", `/blocks/${blockId}/delete_rule`, { index });
  }

  // -- explanations --

  whatIf(
    instance: Record<string, unknown>,
    edits: Record<string, unknown>,
    target = "chain",
  ): Promise<Envelope<WhatIfValue>> {
    return this.call("POST", "/explain/whatif", { target, instance, params: { edits } });
  }

  lime(
    instance: Record<string, unknown>,
    params: Record<string, unknown> = {},
    target = "chain",
  ): Promise<Envelope<AttributionResult>> {
    return this.call("POST", "/explain/lime", { target, instance, params });
  }

  shap(
    instance: Record<string, unknown>,
    params: Record<string, unknown> = {},
    target = "chain",
  ): Promise<Envelope<AttributionResult>> {
    return this.call("POST", "/explain/shap", { target, instance, params });
  }

  counterfactuals(
    instance: Record<string, unknown>,
    params: Record<string, unknown> = {},
    target = "chain",
  ): Promise<Envelope<CounterfactualValue>> {
    return this.call("POST", "/explain/counterfactual", { target, instance, params });
  }

  prototypes(params: Record<string, unknown> = {}, target = "chain"): Promise<Envelope<PrototypeValue>> {
    return this.call("POST", "/explain/prototypes", { target, params });
  }

  examples(
    instance: Record<string, unknown>,
    params: Record<string, unknown> = {},
    target = "chain",
  ): Promise<Envelope<RankedExampleEntry[]>> {
    return this.call("POST", "/explain/examples", { target, instance, params });
  }

  // -- tools, chat, shutdown --

  tools(): Promise<Envelope<ToolSchema[]>> {
    return this.call("GET", "/tools");
  }

  chat(session: string, message: string): Promise<Envelope<ChatTurnPayload[]>> {
    return this.call("POST", "/chat", { session, message });
  }

  tripShutdown(reason: string): Promise<Envelope<ShutdownStatus>> {
    return this.call("POST", "/shutdown", { reason });
  }

  resetShutdown(): Promise<Envelope<ShutdownStatus>> {
    return this.call("DELETE", "/shutdown");
  }
}

// Routes the client is allowed to touch; tests assert requestLog stays inside
// the block-method pattern plus these specials.
export const DOCUMENTED_SPECIAL_PATHS = [
  "/chain",
  "/chain/predict",
  "/explain/lime",
  "/explain/shap",
  "/explain/whatif",
  "/explain/counterfactual",
  "/explain/prototypes",
  "/explain/examples",
  "/tools",
  "/chat",
  "/shutdown",
];

export function isDocumentedPath(path: string): boolean {
  if (DOCUMENTED_SPECIAL_PATHS.includes(path)) {
    return true;
  }
  return /^\/blocks\/[a-z0-9_-]+\/[a-z0-9_]+$/.test(path);
}
