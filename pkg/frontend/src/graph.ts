// Pure layout of the /chain document: left-to-right flow, parallel branches
// stacked vertically. Same document in, same layout out (hashable).

import type { NodeDoc } from "./types.js";
import { isBlockDoc } from "./types.js";

export const NODE_WIDTH = 148;
export const NODE_HEIGHT = 56;
export const GAP_X = 56;
export const GAP_Y = 20;

export interface GraphNode {
  id: string;
  label: string;
  blockKind: string;
  x: number;
  y: number;
  width: number;
  height: number;
}

export interface GraphEdge {
  from: string;
  to: string;
}

export interface GraphLayout {
  nodes: GraphNode[];
  edges: GraphEdge[];
  width: number;
  height: number;
}

interface SubLayout {
  nodes: GraphNode[];
  edges: GraphEdge[];
  width: number;
  height: number;
  entries: string[]; // node ids receiving the subtree's input
  exits: string[]; // node ids producing the subtree's output
}

function layoutNode(doc: NodeDoc): SubLayout {
  if (isBlockDoc(doc)) {
    const node: GraphNode = {
      id: doc.id,
      label: doc.display_name,
      blockKind: doc.block_kind,
      x: 0,
      y: 0,
      width: NODE_WIDTH,
      height: NODE_HEIGHT,
    };
    return {
      nodes: [node],
      edges: [],
      width: NODE_WIDTH,
      height: NODE_HEIGHT,
      entries: [doc.id],
      exits: [doc.id],
    };
  }
  if (doc.kind === "chain") {
    const parts = doc.children.map(layoutNode);
    const height = Math.max(...parts.map((p) => p.height));
    let x = 0;
    const nodes: GraphNode[] = [];
    const edges: GraphEdge[] = [];
    parts.forEach((part, index) => {
      const yOffset = (height - part.height) / 2;
      for (const node of part.nodes) {
        nodes.push({ ...node, x: node.x + x, y: node.y + yOffset });
      }
      edges.push(...part.edges);
      if (index > 0) {
        for (const from of parts[index - 1].exits) {
          for (const to of part.entries) {
            edges.push({ from, to });
          }
        }
      }
      x += part.width + GAP_X;
    });
    return {
      nodes,
      edges,
      width: x - GAP_X,
      height,
      entries: parts[0].entries,
      exits: parts[parts.length - 1].exits,
    };
  }
  // parallel: stack branches
  const parts = doc.branches.map(layoutNode);
  const width = Math.max(...parts.map((p) => p.width));
  let y = 0;
  const nodes: GraphNode[] = [];
  const edges: GraphEdge[] = [];
  const entries: string[] = [];
  const exits: string[] = [];
  for (const part of parts) {
    for (const node of part.nodes) {
      nodes.push({ ...node, y: node.y + y });
    }
    edges.push(...part.edges);
    entries.push(...part.entries);
    exits.push(...part.exits);
    y += part.height + GAP_Y;
  }
  return { nodes, edges, width, height: y - GAP_Y, entries, exits };
}

export function layoutChain(doc: NodeDoc): GraphLayout {
  const layout = layoutNode(doc);
  return {
    nodes: layout.nodes,
    edges: layout.edges,
    width: layout.width,
    height: layout.height,
  };
}

export function layoutHash(layout: GraphLayout): string {
  const canonical = JSON.stringify({
    nodes: layout.nodes.map((n) => [n.id, n.blockKind, n.x, n.y]),
    edges: layout.edges.map((e) => [e.from, e.to]),
  });
  let hash = 5381;
  for (let i = 0; i < canonical.length; i++) {
    hash = ((hash << 5) + hash + canonical.charCodeAt(i)) | 0;
  }
  return (hash >>> 0).toString(16);
}

export function blockIds(doc: NodeDoc): string[] {
  if (isBlockDoc(doc)) {
    return [doc.id];
  }
  const parts = doc.kind === "chain" ? doc.children : doc.branches;
  return parts.flatMap(blockIds);
}
