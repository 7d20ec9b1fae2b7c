// Pointer-to-op translation: strokes are drawn in image space (pixel
// coordinates of the depth grid) and the server does the 3D anchoring.

export interface OutgoingOp {
  type: "annotation_op";
  kind: "stroke_begin" | "stroke_point" | "stroke_end";
  stroke_id: number;
  seq: number;
  u?: number;
  v?: number;
  color?: [number, number, number];
}

export const MOVE_MIN_PX = 8;
export const MOVE_MIN_MS = 50;

export class StrokeInput {
  private activeStroke: number | null = null;
  private lastU = 0;
  private lastV = 0;
  private lastMoveMs = 0;
  private nextStrokeId: number;

  constructor(
    private nextSeq: () => number,
    firstStrokeId = 1,
    private color: [number, number, number] = [255, 220, 0],
  ) {
    this.nextStrokeId = firstStrokeId;
  }

  get drawing(): boolean {
    return this.activeStroke !== null;
  }

  begin(u: number, v: number, nowMs: number): OutgoingOp[] {
    if (this.activeStroke !== null) return [];
    this.activeStroke = this.nextStrokeId++;
    this.lastU = u;
    this.lastV = v;
    this.lastMoveMs = nowMs;
    return [
      {
        type: "annotation_op",
        kind: "stroke_begin",
        stroke_id: this.activeStroke,
        seq: this.nextSeq(),
        u,
        v,
        color: this.color,
      },
    ];
  }

  move(u: number, v: number, nowMs: number): OutgoingOp[] {
    if (this.activeStroke === null) return [];
    const dist = Math.hypot(u - this.lastU, v - this.lastV);
    if (dist < MOVE_MIN_PX && nowMs - this.lastMoveMs < MOVE_MIN_MS) return [];
    this.lastU = u;
    this.lastV = v;
    this.lastMoveMs = nowMs;
    return [
      {
        type: "annotation_op",
        kind: "stroke_point",
        stroke_id: this.activeStroke,
        seq: this.nextSeq(),
        u,
        v,
      },
    ];
  }

  end(): OutgoingOp[] {
    if (this.activeStroke === null) return [];
    const stroke = this.activeStroke;
    this.activeStroke = null;
    return [
      { type: "annotation_op", kind: "stroke_end", stroke_id: stroke, seq: this.nextSeq() },
    ];
  }
}

export const OFFLINE_QUEUE_LIMIT = 100;

export class OfflineOpQueue {
  private queue: object[] = [];
  overflowed = false;

  push(op: object): void {
    if (this.queue.length >= OFFLINE_QUEUE_LIMIT) {
      this.overflowed = true;
      return;
    }
    this.queue.push(op);
  }

  drain(): object[] {
    const out = this.queue;
    this.queue = [];
    this.overflowed = false;
    return out;
  }

  get length(): number {
    return this.queue.length;
  }
}
