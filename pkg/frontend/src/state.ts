/** Composer state and graph-editing actions.
 *
 * All actions are pure: they return a new state (or the old one plus an
 * error message) so the UI can render error badges without mutating
 * anything. Nodes carry stable ids; the request builder maps ids to
 * object-list indices in node order. History is append-only within a
 * session.
 */

import type { GenerateRequest, GenerateResponse, SceneGraphJson, Snapshot, VocabResponse } from "./types.js";

export interface ComposerNode {
  id: number;
  category: string;
  x: number;
  y: number;
}

export interface ComposerEdge {
  id: number;
  subject: number; // node id
  predicate: string;
  object: number; // node id
}

export interface ComposerState {
  nodes: ComposerNode[];
  edges: ComposerEdge[];
  pins: Record<number, string>; // node id -> pinned crop_id
  seed: number;
  nextId: number;
  history: Snapshot[];
}

export interface ActionResult {
  state: ComposerState;
  error?: string;
}

export function emptyState(seed = 0): ComposerState {
  return { nodes: [], edges: [], pins: {}, seed, nextId: 1, history: [] };
}

function ok(state: ComposerState): ActionResult {
  return { state };
}

function fail(state: ComposerState, error: string): ActionResult {
  return { state, error };
}

export function addNode(state: ComposerState, category: string, x = 0.5, y = 0.5): ActionResult {
  if (!category) return fail(state, "category required");
  const node: ComposerNode = { id: state.nextId, category, x, y };
  return ok({ ...state, nodes: [...state.nodes, node], nextId: state.nextId + 1 });
}

export function removeNode(state: ComposerState, nodeId: number): ActionResult {
  if (!state.nodes.some((n) => n.id === nodeId)) return fail(state, `no node ${nodeId}`);
  const pins = { ...state.pins };
  delete pins[nodeId];
  return ok({
    ...state,
    nodes: state.nodes.filter((n) => n.id !== nodeId),
    edges: state.edges.filter((e) => e.subject !== nodeId && e.object !== nodeId),
    pins,
  });
}

export function addEdge(state: ComposerState, subject: number, predicate: string, object: number): ActionResult {
  const have = (id: number) => state.nodes.some((n) => n.id === id);
  if (!have(subject)) return fail(state, `no subject node ${subject}`);
  if (!have(object)) return fail(state, `no object node ${object}`);
  if (subject === object) return fail(state, "subject and object must differ");
  if (!predicate) return fail(state, "predicate required");
  const edge: ComposerEdge = { id: state.nextId, subject, predicate, object };
  return ok({ ...state, edges: [...state.edges, edge], nextId: state.nextId + 1 });
}

export function removeEdge(state: ComposerState, edgeId: number): ActionResult {
  if (!state.edges.some((e) => e.id === edgeId)) return fail(state, `no edge ${edgeId}`);
  return ok({ ...state, edges: state.edges.filter((e) => e.id !== edgeId) });
}

export function setPredicate(state: ComposerState, edgeId: number, predicate: string): ActionResult {
  const edge = state.edges.find((e) => e.id === edgeId);
  if (!edge) return fail(state, `no edge ${edgeId}`);
  if (!predicate) return fail(state, "predicate required");
  return ok({
    ...state,
    edges: state.edges.map((e) => (e.id === edgeId ? { ...e, predicate } : e)),
  });
}

/** Pin a crop for a node; null reverts to automatic selection. */
export function setPin(state: ComposerState, nodeId: number, cropId: string | null): ActionResult {
  if (!state.nodes.some((n) => n.id === nodeId)) return fail(state, `no node ${nodeId}`);
  const pins = { ...state.pins };
  if (cropId === null) delete pins[nodeId];
  else pins[nodeId] = cropId;
  return ok({ ...state, pins });
}

export function setSeed(state: ComposerState, seed: number): ActionResult {
  if (!Number.isInteger(seed) || seed < 0) return fail(state, "seed must be a nonnegative integer");
  return ok({ ...state, seed });
}

export function nodeIndex(state: ComposerState, nodeId: number): number {
  return state.nodes.findIndex((n) => n.id === nodeId);
}

/** Client-side mirror of the server's scene-graph validation. */
export function validateGraph(state: ComposerState, vocab: VocabResponse | null): string[] {
  const problems: string[] = [];
  if (state.nodes.length === 0) problems.push("graph has no objects");
  for (const e of state.edges) {
    if (nodeIndex(state, e.subject) < 0) problems.push(`edge ${e.id}: missing subject node`);
    if (nodeIndex(state, e.object) < 0) problems.push(`edge ${e.id}: missing object node`);
    if (e.subject === e.object) problems.push(`edge ${e.id}: subject equals object`);
  }
  if (vocab) {
    for (const n of state.nodes) {
      if (!vocab.objects.includes(n.category)) problems.push(`node ${n.id}: unknown category "${n.category}"`);
    }
    for (const e of state.edges) {
      if (!vocab.predicates.includes(e.predicate)) problems.push(`edge ${e.id}: unknown predicate "${e.predicate}"`);
    }
  }
  return problems;
}

export function toSceneGraph(state: ComposerState): SceneGraphJson {
  const index = new Map(state.nodes.map((n, i) => [n.id, i]));
  return {
    objects: state.nodes.map((n) => n.category),
    edges: state.edges.map((e) => [index.get(e.subject)!, e.predicate, index.get(e.object)!]),
  };
}

export function buildRequest(state: ComposerState, k: number | null = null): GenerateRequest {
  const index = new Map(state.nodes.map((n, i) => [n.id, i]));
  const overrides: Record<number, string> = {};
  for (const [nodeId, cropId] of Object.entries(state.pins)) {
    const idx = index.get(Number(nodeId));
    if (idx !== undefined) overrides[idx] = cropId;
  }
  return { scene_graph: toSceneGraph(state), crop_overrides: overrides, k, seed: state.seed };
}

export function appendSnapshot(
  state: ComposerState,
  request: GenerateRequest,
  response: GenerateResponse,
  now = Date.now(),
): ComposerState {
  const snap: Snapshot = { request, response, at: now };
  return { ...state, history: [...state.history, snap] };
}

const STORAGE_KEY = "pastegan-composer-v1";

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export function saveSession(state: ComposerState, storage: StorageLike): void {
  storage.setItem(STORAGE_KEY, JSON.stringify(state));
}

export function loadSession(storage: StorageLike): ComposerState | null {
  const raw = storage.getItem(STORAGE_KEY);
  if (!raw) return null;
  try {
    const parsed = JSON.parse(raw) as ComposerState;
    if (!Array.isArray(parsed.nodes) || !Array.isArray(parsed.edges)) return null;
    return parsed;
  } catch {
    return null;
  }
}
