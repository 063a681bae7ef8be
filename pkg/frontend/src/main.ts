// Bootstrap: fetch the chain and dataset schema, then wire the graph, block
// panel, what-if panel, chat, and shutdown control together. All state lives
// on the server; every mutation triggers a refetch.

import { ApiClient } from "./api.js";
import { BlockPanel, ChatPanel, GraphView, ShutdownControl, WhatIfPanel } from "./panels.js";
import type { BlockDoc, NodeDoc } from "./types.js";
import { isBlockDoc } from "./types.js";

function findBlock(doc: NodeDoc, blockId: string): BlockDoc | null {
  if (isBlockDoc(doc)) {
    return doc.id === blockId ? doc : null;
  }
  const parts = doc.kind === "chain" ? doc.children : doc.branches;
  for (const part of parts) {
    const found = findBlock(part, blockId);
    if (found) return found;
  }
  return null;
}

function blockOfKind(doc: NodeDoc, blockKind: string): BlockDoc | null {
  if (isBlockDoc(doc)) {
    return doc.block_kind === blockKind ? doc : null;
  }
  const parts = doc.kind === "chain" ? doc.children : doc.branches;
  for (const part of parts) {
    const found = blockOfKind(part, blockKind);
    if (found) return found;
  }
  return null;
}

export async function boot(root: HTMLElement, apiBase?: string): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = apiBase ?? params.get("api") ?? "http://127.0.0.1:8000";
  const client = new ApiClient(base);

  root.replaceChildren();
  const header = document.createElement("header");
  header.innerHTML = `<h1>chainlens</h1>`;
  root.appendChild(header);

  const layout = document.createElement("div");
  layout.className = "app-layout";
  root.appendChild(layout);

  const left = document.createElement("section");
  left.className = "pane graph-pane";
  const right = document.createElement("section");
  right.className = "pane detail-pane";
  layout.append(left, right);

  let chainDoc = (await client.getChain()).value;
  const schema = (await client.getSchema()).value;
  const sampleRows = (await client.getRows("dataset", 1)).value;
  const baseRow: Record<string, unknown> = {};
  if (sampleRows.length) {
    for (const column of schema.columns) {
      if (column.name !== schema.target) {
        baseRow[column.name] = sampleRows[0][column.name];
      }
    }
  }

  const refresh = async () => {
    chainDoc = (await client.getChain()).value;
    graph.render(chainDoc);
  };

  const blockPanel = new BlockPanel(client, schema, () => void refresh());
  const graph = new GraphView((blockId) => {
    const block = findBlock(chainDoc, blockId);
    if (block) void blockPanel.show(block);
  });
  const whatIf = new WhatIfPanel(client, schema, baseRow);
  const chat = new ChatPanel(client, `ui-${Date.now()}`);
  const shutdown = new ShutdownControl(client, () => void refresh());
  header.appendChild(shutdown.element);

  // reflect the emergency-stop state on load, via the shutdown block's read
  // method when the pipeline has one
  const shutdownBlock = blockOfKind(chainDoc, "shutdown");
  if (shutdownBlock) {
    const status = await client.invokeBlockMethod("GET", shutdownBlock.id, "status");
    const payload = status.value as { active: boolean; reason: string };
    shutdown.render(payload.active, payload.reason);
  }

  left.appendChild(graph.element);
  graph.render(chainDoc);

  const tabs = document.createElement("nav");
  tabs.className = "tabs";
  const panes: Record<string, HTMLElement> = {
    Block: blockPanel.element,
    "What-if": whatIf.element,
    Chat: chat.element,
  };
  for (const [name, pane] of Object.entries(panes)) {
    const tab = document.createElement("button");
    tab.className = "tab";
    tab.textContent = name;
    tab.addEventListener("click", () => {
      for (const p of Object.values(panes)) p.hidden = true;
      pane.hidden = false;
      for (const t of Array.from(tabs.children)) t.classList.remove("active");
      tab.classList.add("active");
    });
    tabs.appendChild(tab);
    right.appendChild(pane);
    pane.hidden = name !== "Block";
  }
  right.insertBefore(tabs, right.firstChild);
  (tabs.children[0] as HTMLElement).classList.add("active");

  void whatIf.run();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app")!);
}
