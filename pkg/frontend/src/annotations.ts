// Annotation state mirror. The server is authoritative (it anchors pixel
// picks into 3D), so the client folds only server-confirmed ops: echoes
// of its own strokes and the operator's relayed ones.

export type Author = "expert" | "operator";

export type OpKind =
  | "stroke_begin"
  | "stroke_point"
  | "stroke_end"
  | "erase_stroke"
  | "clear_all";

export interface AnnotationOp {
  kind: OpKind;
  author: Author;
  strokeId: number;
  seq: number;
  point?: [number, number, number];
  color?: [number, number, number];
}

export interface Stroke {
  author: Author;
  strokeId: number;
  color: [number, number, number];
  points: [number, number, number][];
  open: boolean;
}

const keyOf = (author: Author, strokeId: number) => `${author}:${strokeId}`;

export class AnnotationMirror {
  strokes = new Map<string, Stroke>();
  private lastSeq = new Map<Author, number>();

  apply(op: AnnotationOp): boolean {
    const last = this.lastSeq.get(op.author);
    if (last !== undefined && op.seq <= last) return false;
    this.lastSeq.set(op.author, op.seq);

    const key = keyOf(op.author, op.strokeId);
    switch (op.kind) {
      case "stroke_begin": {
        const existing = this.strokes.get(key);
        if (existing && existing.open) return false;
        if (!op.point) return false;
        this.strokes.set(key, {
          author: op.author,
          strokeId: op.strokeId,
          color: op.color ?? [255, 255, 0],
          points: [op.point],
          open: true,
        });
        return true;
      }
      case "stroke_point": {
        const stroke = this.strokes.get(key);
        if (!stroke || !stroke.open || !op.point) return false;
        stroke.points.push(op.point);
        return true;
      }
      case "stroke_end": {
        const stroke = this.strokes.get(key);
        if (!stroke || !stroke.open) return false;
        stroke.open = false;
        return true;
      }
      case "erase_stroke":
        return this.strokes.delete(key);
      case "clear_all": {
        // Author-scoped, matching the server's convergence semantics.
        for (const [key2, stroke] of [...this.strokes]) {
          if (stroke.author === op.author) this.strokes.delete(key2);
        }
        return true;
      }
    }
  }

  replaceFromSnapshot(snapshot: {
    strokes: { author: Author; id: number; color: number[]; points: number[][] }[];
  }): void {
    this.strokes.clear();
    for (const s of snapshot.strokes) {
      this.strokes.set(keyOf(s.author, s.id), {
        author: s.author,
        strokeId: s.id,
        color: [s.color[0], s.color[1], s.color[2]],
        points: s.points.map((p) => [p[0], p[1], p[2]] as [number, number, number]),
        open: false,
      });
    }
  }

  all(): Stroke[] {
    return [...this.strokes.values()].sort((a, b) =>
      a.author === b.author ? a.strokeId - b.strokeId : a.author.localeCompare(b.author),
    );
  }
}
