// Point cloud projection and picking. The cloud keeps its source pixel
// index per point so a screen pick maps straight back to depth-image
// coordinates: annotation input stays image-space end to end.

import type { DecodedDepth } from "./decoder.js";
import type { Intrinsics } from "./protocol.js";
import { OrbitView, projectToScreen } from "./orbit.js";
import type { Stroke } from "./annotations.js";

export interface PointCloud {
  positions: Float32Array; // xyz triples, meters
  colors: Uint8Array; // rgb triples
  pixelIndices: Uint32Array; // row-major source pixel per point
  count: number;
  width: number;
  height: number;
}

export function buildPointCloud(
  depth: DecodedDepth,
  intrinsics: Intrinsics,
  color: Uint8Array | null,
  stride = 1,
): PointCloud {
  const { width, height } = depth;
  const capacity = Math.ceil(width / stride) * Math.ceil(height / stride);
  const positions = new Float32Array(capacity * 3);
  const colors = new Uint8Array(capacity * 3);
  const pixelIndices = new Uint32Array(capacity);
  let count = 0;
  for (let v = 0; v < height; v += stride) {
    for (let u = 0; u < width; u += stride) {
      const index = v * width + u;
      const d = depth.depth[index];
      if (d === 0) continue;
      const z = d / 1000;
      positions[count * 3] = ((u - intrinsics.cx) * z) / intrinsics.fx;
      positions[count * 3 + 1] = ((v - intrinsics.cy) * z) / intrinsics.fy;
      positions[count * 3 + 2] = z;
      if (color) {
        colors[count * 3] = color[index * 3];
        colors[count * 3 + 1] = color[index * 3 + 1];
        colors[count * 3 + 2] = color[index * 3 + 2];
      } else {
        colors[count * 3] = colors[count * 3 + 1] = colors[count * 3 + 2] = 160;
      }
      pixelIndices[count] = index;
      count++;
    }
  }
  return { positions, colors, pixelIndices, count, width, height };
}

export function cloudCentroid(cloud: PointCloud): [number, number, number] {
  if (cloud.count === 0) return [0, 0, 1.5];
  let sx = 0;
  let sy = 0;
  let sz = 0;
  for (let i = 0; i < cloud.count; i++) {
    sx += cloud.positions[i * 3];
    sy += cloud.positions[i * 3 + 1];
    sz += cloud.positions[i * 3 + 2];
  }
  return [sx / cloud.count, sy / cloud.count, sz / cloud.count];
}

export interface ScreenPoints {
  xs: Float32Array;
  ys: Float32Array;
  zs: Float32Array;
  visible: Uint8Array;
  cloud: PointCloud;
}

export function projectCloud(
  cloud: PointCloud,
  view: OrbitView,
  focalPx: number,
  centerX: number,
  centerY: number,
): ScreenPoints {
  const xs = new Float32Array(cloud.count);
  const ys = new Float32Array(cloud.count);
  const zs = new Float32Array(cloud.count);
  const visible = new Uint8Array(cloud.count);
  for (let i = 0; i < cloud.count; i++) {
    const projected = projectToScreen(
      cloud.positions[i * 3],
      cloud.positions[i * 3 + 1],
      cloud.positions[i * 3 + 2],
      view, focalPx, centerX, centerY,
    );
    if (!projected) continue;
    xs[i] = projected.sx;
    ys[i] = projected.sy;
    zs[i] = projected.zCam;
    visible[i] = 1;
  }
  return { xs, ys, zs, visible, cloud };
}

// Nearest visible point within the radius; returns its depth-image pixel.
export function pickPixel(
  screen: ScreenPoints,
  x: number,
  y: number,
  radiusPx = 12,
): { u: number; v: number } | null {
  let best = -1;
  let bestDist = radiusPx * radiusPx;
  for (let i = 0; i < screen.cloud.count; i++) {
    if (!screen.visible[i]) continue;
    const dx = screen.xs[i] - x;
    const dy = screen.ys[i] - y;
    const d2 = dx * dx + dy * dy;
    if (d2 <= bestDist) {
      bestDist = d2;
      best = i;
    }
  }
  if (best < 0) return null;
  const index = screen.cloud.pixelIndices[best];
  return { u: index % screen.cloud.width, v: Math.floor(index / screen.cloud.width) };
}

export interface GestureMarker {
  origin: [number, number, number];
  direction: [number, number, number];
  expiresAtMs: number;
}

export const GESTURE_TTL_MS = 2000;

export function drawScene(
  ctx: CanvasRenderingContext2D,
  screen: ScreenPoints,
  strokes: Stroke[],
  gestures: GestureMarker[],
  view: OrbitView,
  focalPx: number,
  centerX: number,
  centerY: number,
  nowMs: number,
): void {
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  const { cloud } = screen;
  for (let i = 0; i < cloud.count; i++) {
    if (!screen.visible[i]) continue;
    ctx.fillStyle = `rgb(${cloud.colors[i * 3]},${cloud.colors[i * 3 + 1]},${cloud.colors[i * 3 + 2]})`;
    ctx.fillRect(screen.xs[i], screen.ys[i], 2, 2);
  }
  for (const stroke of strokes) {
    if (stroke.points.length === 0) continue;
    ctx.strokeStyle = `rgb(${stroke.color[0]},${stroke.color[1]},${stroke.color[2]})`;
    ctx.lineWidth = 3;
    ctx.beginPath();
    let started = false;
    for (const [x, y, z] of stroke.points) {
      const p = projectToScreen(x, y, z, view, focalPx, centerX, centerY);
      if (!p) continue;
      if (started) ctx.lineTo(p.sx, p.sy);
      else ctx.moveTo(p.sx, p.sy);
      started = true;
    }
    ctx.stroke();
  }
  for (const gesture of gestures) {
    if (gesture.expiresAtMs <= nowMs) continue;
    const [ox, oy, oz] = gesture.origin;
    const [dx, dy, dz] = gesture.direction;
    const tip = projectToScreen(
      ox + dx * 1.2, oy + dy * 1.2, oz + dz * 1.2,
      view, focalPx, centerX, centerY,
    );
    if (!tip) continue;
    ctx.strokeStyle = "#4fc3f7";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(tip.sx, tip.sy, 8, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

export interface StatsDisplay {
  p50: string;
  p95: string;
  bandwidth: string;
  drops: string;
}

// Values come from the server verbatim; the client never recomputes them.
export function formatStats(stats: Record<string, unknown> | null): StatsDisplay {
  if (!stats) return { p50: "-", p95: "-", bandwidth: "-", drops: "-" };
  const ms = (v: unknown) =>
    typeof v === "number" ? `${v.toFixed(1)} ms` : "-";
  const bytes = stats["bytes_tx"];
  return {
    p50: ms(stats["e2e_p50_ms"]),
    p95: ms(stats["e2e_p95_ms"]),
    bandwidth:
      typeof bytes === "number" ? `${((bytes * 8) / 1e6).toFixed(2)} Mbit sent` : "-",
    drops: typeof stats["drops"] === "number" ? String(stats["drops"]) : "-",
  };
}
