/** Neighborhood pane: the mention/relationship graph exactly as returned —
 * every node and edge in the payload, nothing added.  Entities link to
 * their detail view, document-count nodes render as opaque chips. */

import type { GraphEdge, GraphNode, GraphPayload } from "../types.js";
import { escapeHtml } from "./html.js";

export interface GraphNodeModel {
  nodeId: string;
  kind: GraphNode["kind"];
  typeName?: string;
  ref?: string;
  docId?: string;
  countChips: Array<{ name: string; value: number }>;
  attributes: Array<{ name: string; value: string }>;
  edges: Array<{ kind: string; rel?: string; otherId: string; outgoing: boolean }>;
}

export interface GraphModel {
  nodes: GraphNodeModel[];
}

export function buildGraphModel(payload: GraphPayload): GraphModel {
  const adjacency = new Map<string, GraphNodeModel["edges"]>();
  for (const edge of payload.edges) {
    for (const [self, other, outgoing] of [
      [edge.source, edge.target, true],
      [edge.target, edge.source, false],
    ] as Array<[string, string, boolean]>) {
      const rows = adjacency.get(self) ?? [];
      rows.push({ kind: edge.kind, rel: edge.rel, otherId: other, outgoing });
      adjacency.set(self, rows);
    }
  }
  const nodes = Object.entries(payload.nodes)
    .map(([nodeId, node]) => ({
      nodeId,
      kind: node.kind,
      typeName: node.type,
      ref: node.ref === undefined ? undefined : String(node.ref),
      docId: node.doc_id,
      countChips: Object.entries(node.counts ?? {}).map(([name, value]) => ({
        name,
        value,
      })),
      attributes: Object.entries(node.attributes ?? {}).map(([name, value]) => ({
        name,
        value: Array.isArray(value) ? value.map(String).join(", ") : String(value),
      })),
      edges: adjacency.get(nodeId) ?? [],
    }))
    .sort((a, b) => (a.nodeId < b.nodeId ? -1 : a.nodeId > b.nodeId ? 1 : 0));
  return { nodes };
}

function edgeLine(edge: GraphNodeModel["edges"][number]): string {
  const arrow = edge.outgoing ? "→" : "←";
  const label = edge.kind === "relationship" ? (edge.rel ?? "") : "mentioned in";
  return `<li class="edge ${edge.kind}">${escapeHtml(label)} ${arrow}
    <span class="node-ref">${escapeHtml(edge.otherId)}</span></li>`;
}

export function renderGraph(model: GraphModel): string {
  const nodes = model.nodes
    .map((node) => {
      const chips = node.countChips
        .map((c) => `<span class="chip">${escapeHtml(c.name)}: ${c.value}</span>`)
        .join(" ");
      const attrs = node.attributes
        .map((a) => `<span class="attr">${escapeHtml(a.name)}=${escapeHtml(a.value)}</span>`)
        .join(" ");
      const label =
        node.kind === "entity"
          ? `${node.typeName ?? ""} ${node.ref ?? node.nodeId}`.trim()
          : (node.docId ?? node.nodeId);
      return `<li class="node ${node.kind}" data-node-id="${escapeHtml(node.nodeId)}">
        <span class="label">${escapeHtml(label)}</span>
        ${attrs} ${chips}
        <ul class="edges">${node.edges.map(edgeLine).join("")}</ul>
      </li>`;
    })
    .join("\n");
  // each edge is listed under both endpoints
  const edgeCount = model.nodes.reduce((sum, n) => sum + n.edges.length, 0) / 2;
  return `<ul class="graph" data-edge-count="${edgeCount}">${nodes}</ul>`;
}
