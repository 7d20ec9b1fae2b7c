// Depth decoder mirror: must stay oracle-equivalent to the server-side
// decoder (same epoch rules, same stale handling, same tile clipping).

import type { DepthDelta, DepthKeyframe, Intrinsics } from "./protocol.js";

export interface DecodedDepth {
  frameId: number;
  captureTsUs: number;
  width: number;
  height: number;
  depth: Uint16Array;
}

export type DeltaResult =
  | { status: "frame"; frame: DecodedDepth }
  | { status: "desync" }
  | { status: "stale" };

export class DepthDecoder {
  reference: Uint16Array | null = null;
  width = 0;
  height = 0;
  tileSize = 0;
  intrinsics: Intrinsics | null = null;
  epochFrameId: number | null = null;
  lastFrameId = -1;

  get hasReference(): boolean {
    return this.reference !== null;
  }

  applyKeyframe(msg: DepthKeyframe): DeltaResult {
    if (msg.frameId <= this.lastFrameId) return { status: "stale" };
    this.reference = msg.depth.slice();
    this.width = msg.width;
    this.height = msg.height;
    this.tileSize = msg.tileSize;
    this.intrinsics = msg.intrinsics;
    this.epochFrameId = msg.frameId;
    this.lastFrameId = msg.frameId;
    return { status: "frame", frame: this.snapshot(msg.frameId, msg.captureTsUs) };
  }

  applyDelta(msg: DepthDelta): DeltaResult {
    if (msg.frameId <= this.lastFrameId) return { status: "stale" };
    if (this.reference === null || msg.refFrameId !== this.epochFrameId) {
      return { status: "desync" };
    }
    const tilesX = Math.ceil(this.width / this.tileSize);
    const tilesY = Math.ceil(this.height / this.tileSize);
    for (const tile of msg.tiles) {
      if (tile.index >= tilesX * tilesY) {
        throw new Error(`tile index ${tile.index} out of range`);
      }
      const ty = Math.floor(tile.index / tilesX);
      const tx = tile.index % tilesX;
      const y0 = ty * this.tileSize;
      const x0 = tx * this.tileSize;
      const w = Math.min(this.tileSize, this.width - x0);
      const h = Math.min(this.tileSize, this.height - y0);
      if (tile.width !== w || tile.height !== h) {
        throw new Error(
          `tile ${tile.index} is ${tile.width}x${tile.height}, expected ${w}x${h}`,
        );
      }
      for (let row = 0; row < h; row++) {
        const src = row * w;
        const dst = (y0 + row) * this.width + x0;
        this.reference.set(tile.values.subarray(src, src + w), dst);
      }
    }
    this.lastFrameId = msg.frameId;
    return { status: "frame", frame: this.snapshot(msg.frameId, msg.captureTsUs) };
  }

  private snapshot(frameId: number, captureTsUs: number): DecodedDepth {
    return {
      frameId,
      captureTsUs,
      width: this.width,
      height: this.height,
      depth: (this.reference as Uint16Array).slice(),
    };
  }
}
