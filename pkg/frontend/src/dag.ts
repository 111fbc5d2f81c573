// Layered task-DAG layout and SVG rendering.
//
// Edges point from a task to the task it depends on, so dependencies get
// lower layers and the picture flows left to right. Above the interactive
// cap the graph is clustered by status so a book-scale run stays
// renderable.

import type { GraphEdge, GraphNode, GraphPayload } from "./types.js";

export const INTERACTIVE_NODE_CAP = 2000;

export interface PlacedNode extends GraphNode {
  x: number;
  y: number;
  layer: number;
  cluster?: number;
}

export interface DagLayout {
  nodes: PlacedNode[];
  edges: GraphEdge[];
  clustered: boolean;
  width: number;
  height: number;
}

const COLUMN_WIDTH = 180;
const ROW_HEIGHT = 46;
const MARGIN = 30;

export function layerAssignment(payload: GraphPayload): Map<string, number> {
  const deps = new Map<string, string[]>();
  for (const node of payload.nodes) deps.set(node.id, []);
  for (const edge of payload.edges) {
    deps.get(edge.from)?.push(edge.to);
  }
  const layers = new Map<string, number>();
  const visiting = new Set<string>();

  const layerOf = (id: string): number => {
    const known = layers.get(id);
    if (known !== undefined) return known;
    if (visiting.has(id)) return 0; // defensive: the store forbids cycles
    visiting.add(id);
    let layer = 0;
    for (const dep of deps.get(id) ?? []) {
      if (deps.has(dep)) layer = Math.max(layer, layerOf(dep) + 1);
    }
    visiting.delete(id);
    layers.set(id, layer);
    return layer;
  };

  for (const node of payload.nodes) layerOf(node.id);
  return layers;
}

export function layoutDag(payload: GraphPayload): DagLayout {
  if (payload.nodes.length > INTERACTIVE_NODE_CAP) {
    return clusteredLayout(payload);
  }
  const layers = layerAssignment(payload);
  const byLayer = new Map<number, GraphNode[]>();
  for (const node of payload.nodes) {
    const layer = layers.get(node.id) ?? 0;
    const bucket = byLayer.get(layer) ?? [];
    bucket.push(node);
    byLayer.set(layer, bucket);
  }
  const placed: PlacedNode[] = [];
  let maxRows = 0;
  for (const [layer, bucket] of byLayer) {
    bucket.sort((a, b) => a.id.localeCompare(b.id));
    maxRows = Math.max(maxRows, bucket.length);
    bucket.forEach((node, row) => {
      placed.push({
        ...node,
        layer,
        x: MARGIN + layer * COLUMN_WIDTH,
        y: MARGIN + row * ROW_HEIGHT,
      });
    });
  }
  placed.sort((a, b) => a.id.localeCompare(b.id));
  const layerCount = byLayer.size === 0 ? 1 : Math.max(...byLayer.keys()) + 1;
  return {
    nodes: placed,
    edges: payload.edges,
    clustered: false,
    width: MARGIN * 2 + layerCount * COLUMN_WIDTH,
    height: MARGIN * 2 + Math.max(1, maxRows) * ROW_HEIGHT,
  };
}

function clusteredLayout(payload: GraphPayload): DagLayout {
  const byStatus = new Map<string, GraphNode[]>();
  for (const node of payload.nodes) {
    const bucket = byStatus.get(node.status) ?? [];
    bucket.push(node);
    byStatus.set(node.status, bucket);
  }
  const placed: PlacedNode[] = [];
  let index = 0;
  for (const [status, bucket] of [...byStatus.entries()].sort()) {
    placed.push({
      id: `cluster:${status}`,
      title: `${bucket.length} ${status} tasks`,
      kind: "cluster",
      status,
      priority: 0,
      attempt_count: 0,
      target_refs: [],
      layer: 0,
      cluster: bucket.length,
      x: MARGIN,
      y: MARGIN + index * ROW_HEIGHT,
    });
    index += 1;
  }
  return {
    nodes: placed,
    edges: [],
    clustered: true,
    width: MARGIN * 2 + COLUMN_WIDTH,
    height: MARGIN * 2 + index * ROW_HEIGHT,
  };
}

export const STATUS_COLORS: Record<string, string> = {
  pending: "#6b7a8d",
  in_progress: "#d4a017",
  completed: "#3fb950",
  failed: "#f85149",
  deleted: "#30363d",
};

function escapeXml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderDagSvg(layout: DagLayout): string {
  const position = new Map(layout.nodes.map((n) => [n.id, n]));
  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${layout.width} ${layout.height}" ` +
      `width="${layout.width}" height="${layout.height}" ` +
      `xmlns="http://www.w3.org/2000/svg">`,
  );
  for (const edge of layout.edges) {
    const from = position.get(edge.from);
    const to = position.get(edge.to);
    if (!from || !to) continue;
    parts.push(
      `<line class="edge" x1="${from.x}" y1="${from.y + 12}" ` +
        `x2="${to.x + 130}" y2="${to.y + 12}" />`,
    );
  }
  for (const node of layout.nodes) {
    const color = STATUS_COLORS[node.status] ?? "#8b949e";
    const label = escapeXml(
      node.cluster !== undefined ? node.title : node.id,
    );
    parts.push(
      `<g class="node" data-id="${escapeXml(node.id)}" ` +
        `data-status="${escapeXml(node.status)}" ` +
        `transform="translate(${node.x},${node.y})">` +
        `<rect rx="6" width="130" height="24" fill="${color}22" ` +
        `stroke="${color}" />` +
        `<text x="8" y="16" fill="${color}">${label}</text>` +
        `</g>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}
