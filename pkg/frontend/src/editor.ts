/** Canvas node-graph editor: draggable category nodes and directed
 * labeled edges. Coordinates are normalized [0,1] in state and scaled to
 * the canvas on draw. */

import { ComposerState } from "./state.js";

const NODE_RADIUS = 26;

export interface EditorCallbacks {
  onSelectNode(nodeId: number | null): void;
  onMoveNode(nodeId: number, x: number, y: number): void;
  onConnect(subjectId: number, objectId: number): void;
}

export class GraphEditor {
  private state: ComposerState | null = null;
  private selected: number | null = null;
  private dragging: number | null = null;
  private connectFrom: number | null = null;
  private pointer = { x: 0, y: 0 };
  connectMode = false;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly callbacks: EditorCallbacks,
  ) {
    canvas.addEventListener("pointerdown", (e) => this.onDown(e));
    canvas.addEventListener("pointermove", (e) => this.onMove(e));
    canvas.addEventListener("pointerup", (e) => this.onUp(e));
  }

  setState(state: ComposerState): void {
    this.state = state;
    if (this.selected !== null && !state.nodes.some((n) => n.id === this.selected)) {
      this.selected = null;
    }
    this.draw();
  }

  get selectedNode(): number | null {
    return this.selected;
  }

  private toCanvas(x: number, y: number): [number, number] {
    return [x * this.canvas.width, y * this.canvas.height];
  }

  private fromEvent(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [(e.clientX - rect.left) / rect.width, (e.clientY - rect.top) / rect.height];
  }

  private hitNode(nx: number, ny: number): number | null {
    if (!this.state) return null;
    for (let i = this.state.nodes.length - 1; i >= 0; i--) {
      const n = this.state.nodes[i];
      const [cx, cy] = this.toCanvas(n.x, n.y);
      const [px, py] = this.toCanvas(nx, ny);
      if ((cx - px) ** 2 + (cy - py) ** 2 <= NODE_RADIUS ** 2) return n.id;
    }
    return null;
  }

  private onDown(e: PointerEvent): void {
    const [nx, ny] = this.fromEvent(e);
    const hit = this.hitNode(nx, ny);
    if (this.connectMode) {
      if (hit !== null) this.connectFrom = hit;
      return;
    }
    this.selected = hit;
    this.dragging = hit;
    this.callbacks.onSelectNode(hit);
    this.draw();
  }

  private onMove(e: PointerEvent): void {
    const [nx, ny] = this.fromEvent(e);
    this.pointer = { x: nx, y: ny };
    if (this.dragging !== null) {
      this.callbacks.onMoveNode(this.dragging, Math.min(1, Math.max(0, nx)), Math.min(1, Math.max(0, ny)));
    } else if (this.connectFrom !== null) {
      this.draw();
    }
  }

  private onUp(e: PointerEvent): void {
    if (this.connectFrom !== null) {
      const [nx, ny] = this.fromEvent(e);
      const hit = this.hitNode(nx, ny);
      if (hit !== null && hit !== this.connectFrom) {
        this.callbacks.onConnect(this.connectFrom, hit);
      }
      this.connectFrom = null;
      this.draw();
    }
    this.dragging = null;
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.state) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#fafafa";
    ctx.fillRect(0, 0, width, height);

    const byId = new Map(this.state.nodes.map((n) => [n.id, n]));
    ctx.strokeStyle = "#666";
    ctx.fillStyle = "#444";
    ctx.font = "12px sans-serif";
    for (const e of this.state.edges) {
      const a = byId.get(e.subject);
      const b = byId.get(e.object);
      if (!a || !b) continue;
      const [ax, ay] = this.toCanvas(a.x, a.y);
      const [bx, by] = this.toCanvas(b.x, b.y);
      this.arrow(ctx, ax, ay, bx, by);
      ctx.fillText(e.predicate, (ax + bx) / 2 + 6, (ay + by) / 2 - 6);
    }

    if (this.connectFrom !== null) {
      const from = byId.get(this.connectFrom);
      if (from) {
        const [ax, ay] = this.toCanvas(from.x, from.y);
        const [px, py] = this.toCanvas(this.pointer.x, this.pointer.y);
        ctx.save();
        ctx.setLineDash([4, 4]);
        ctx.beginPath();
        ctx.moveTo(ax, ay);
        ctx.lineTo(px, py);
        ctx.stroke();
        ctx.restore();
      }
    }

    for (const n of this.state.nodes) {
      const [cx, cy] = this.toCanvas(n.x, n.y);
      ctx.beginPath();
      ctx.arc(cx, cy, NODE_RADIUS, 0, Math.PI * 2);
      ctx.fillStyle = n.id === this.selected ? "#cfe3ff" : "#fff";
      ctx.fill();
      ctx.strokeStyle = this.state.pins[n.id] ? "#d4881c" : "#333";
      ctx.lineWidth = this.state.pins[n.id] ? 3 : 1.5;
      ctx.stroke();
      ctx.lineWidth = 1;
      ctx.fillStyle = "#222";
      ctx.textAlign = "center";
      ctx.fillText(n.category, cx, cy + 4);
      ctx.textAlign = "left";
    }
  }

  private arrow(ctx: CanvasRenderingContext2D, ax: number, ay: number, bx: number, by: number): void {
    const angle = Math.atan2(by - ay, bx - ax);
    const tx = bx - Math.cos(angle) * (NODE_RADIUS + 4);
    const ty = by - Math.sin(angle) * (NODE_RADIUS + 4);
    const sx = ax + Math.cos(angle) * (NODE_RADIUS + 4);
    const sy = ay + Math.sin(angle) * (NODE_RADIUS + 4);
    ctx.beginPath();
    ctx.moveTo(sx, sy);
    ctx.lineTo(tx, ty);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(tx, ty);
    ctx.lineTo(tx - 9 * Math.cos(angle - 0.45), ty - 9 * Math.sin(angle - 0.45));
    ctx.lineTo(tx - 9 * Math.cos(angle + 0.45), ty - 9 * Math.sin(angle + 0.45));
    ctx.closePath();
    ctx.fill();
  }
}
