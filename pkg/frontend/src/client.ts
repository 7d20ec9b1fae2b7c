// Socket-agnostic expert client core: feeds binary media into the depth
// decoder mirror, folds server-confirmed annotation ops, tracks stats,
// and queues outgoing ops while disconnected. The transport is injected
// so tests can drive it with scripted messages.

import { AnnotationMirror, AnnotationOp, Author } from "./annotations.js";
import { DepthDecoder, DecodedDepth } from "./decoder.js";
import { OfflineOpQueue, OutgoingOp, StrokeInput } from "./input.js";
import {
  ColorMessage,
  Intrinsics,
  MsgType,
  iterateEnvelopes,
  parseMediaMessage,
} from "./protocol.js";
import { GESTURE_TTL_MS, GestureMarker } from "./render.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
}

export interface HelloInfo {
  width: number;
  height: number;
  fps: number;
  intrinsics: Intrinsics;
  tileSize: number;
}

export interface ClientEvents {
  onFrame?: (frame: DecodedDepth) => void;
  onHello?: (hello: HelloInfo) => void;
  onError?: (reason: string, detail?: string) => void;
}

export class ViewerClient {
  decoder = new DepthDecoder();
  annotations = new AnnotationMirror();
  gestures: GestureMarker[] = [];
  hello: HelloInfo | null = null;
  stats: Record<string, unknown> | null = null;
  latestDepth: DecodedDepth | null = null;
  latestColor: ColorMessage | null = null;
  awaitingKeyframe = true;
  rejections = 0;
  offline = new OfflineOpQueue();
  readonly input: StrokeInput;

  private socket: SocketLike | null = null;
  private seq = 0;
  private keyframeRequested = false;

  constructor(
    public events: ClientEvents = {},
    private author: Author = "expert",
    private now: () => number = () => Date.now(),
  ) {
    this.input = new StrokeInput(() => this.nextSeq());
  }

  // Sequence numbers survive reconnects within a session.
  nextSeq(): number {
    return this.seq++;
  }

  attach(socket: SocketLike): void {
    this.socket = socket;
    for (const op of this.offline.drain()) {
      socket.send(JSON.stringify(op));
    }
  }

  detach(): void {
    this.socket = null;
    // A stroke interrupted by a disconnect is closed locally and queued.
    for (const op of this.input.end()) this.sendJson(op);
  }

  get connected(): boolean {
    return this.socket !== null;
  }

  sendJson(payload: object): void {
    if (this.socket) {
      this.socket.send(JSON.stringify(payload));
    } else {
      this.offline.push(payload);
    }
  }

  sendOps(ops: OutgoingOp[]): void {
    for (const op of ops) this.sendJson(op);
  }

  requestKeyframe(): void {
    if (this.keyframeRequested) return;
    this.keyframeRequested = true;
    this.sendJson({ type: "keyframe_request" });
  }

  requestState(): void {
    this.sendJson({ type: "state_request" });
  }

  sendGesture(u: number, v: number): void {
    this.sendJson({ type: "gesture", u, v });
  }

  handleMessage(data: string | ArrayBuffer | Uint8Array): void {
    if (typeof data === "string") {
      this.handleText(data);
    } else {
      const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
      this.handleBinary(bytes);
    }
  }

  private handleBinary(bytes: Uint8Array): void {
    for (const envelope of iterateEnvelopes(bytes)) {
      const msg = parseMediaMessage(envelope);
      if (!msg) continue;
      if (msg.kind === "color") {
        this.latestColor = msg;
        continue;
      }
      const result =
        msg.kind === "keyframe"
          ? this.decoder.applyKeyframe(msg)
          : this.decoder.applyDelta(msg);
      if (result.status === "desync") {
        this.awaitingKeyframe = true;
        this.requestKeyframe();
        continue;
      }
      if (result.status === "stale") continue;
      if (msg.kind === "keyframe") {
        this.awaitingKeyframe = false;
        this.keyframeRequested = false;
      }
      this.latestDepth = result.frame;
      this.events.onFrame?.(result.frame);
    }
  }

  private handleText(raw: string): void {
    let doc: Record<string, unknown>;
    try {
      doc = JSON.parse(raw);
    } catch {
      this.events.onError?.("bad-json", raw.slice(0, 80));
      return;
    }
    switch (doc["type"]) {
      case "hello": {
        this.hello = {
          width: doc["width"] as number,
          height: doc["height"] as number,
          fps: doc["fps"] as number,
          intrinsics: doc["intrinsics"] as Intrinsics,
          tileSize: doc["tile_size"] as number,
        };
        this.events.onHello?.(this.hello);
        break;
      }
      case "annotation_op": {
        const op: AnnotationOp = {
          kind: doc["kind"] as AnnotationOp["kind"],
          author: doc["author"] as Author,
          strokeId: doc["stroke_id"] as number,
          seq: doc["seq"] as number,
          point: doc["point"] as [number, number, number] | undefined,
          color: doc["color"] as [number, number, number] | undefined,
        };
        this.annotations.apply(op);
        break;
      }
      case "state":
        this.annotations.replaceFromSnapshot(
          doc as unknown as Parameters<AnnotationMirror["replaceFromSnapshot"]>[0],
        );
        break;
      case "gesture": {
        this.gestures.push({
          origin: doc["origin"] as [number, number, number],
          direction: doc["direction"] as [number, number, number],
          expiresAtMs: this.now() + GESTURE_TTL_MS,
        });
        this.gestures = this.gestures.filter((g) => g.expiresAtMs > this.now());
        break;
      }
      case "stats":
        this.stats = doc;
        break;
      case "annotation_rejected":
        this.rejections++;
        break;
      case "error":
        this.events.onError?.(
          String(doc["reason"] ?? "unknown"),
          doc["detail"] as string | undefined,
        );
        break;
      default:
        break;
    }
  }

  colorForDepth(): Uint8Array | null {
    if (!this.latestDepth || !this.latestColor) return null;
    if (this.latestColor.codecId !== 0) return null;
    const sameGrid =
      this.latestColor.width === this.latestDepth.width &&
      this.latestColor.height === this.latestDepth.height;
    return sameGrid ? this.latestColor.payload : null;
  }
}

export { MsgType };
