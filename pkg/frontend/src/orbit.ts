// Orbit camera math, kept pure so it tests without a DOM. Scene space is
// the capture camera's: x right, y down, z forward (meters).

export interface OrbitParams {
  yaw: number;
  pitch: number;
  distance: number;
  target: [number, number, number];
}

export interface OrbitView {
  rot: Float64Array; // row-major 3x3: scene -> camera rotation
  target: [number, number, number];
  distance: number;
}

export function defaultOrbit(targetZ = 1.5): OrbitParams {
  return { yaw: 0, pitch: 0, distance: targetZ, target: [0, 0, targetZ] };
}

export function orbitView(params: OrbitParams): OrbitView {
  const cy = Math.cos(params.yaw);
  const sy = Math.sin(params.yaw);
  const cp = Math.cos(params.pitch);
  const sp = Math.sin(params.pitch);
  // R = Rx(pitch) * Ry(yaw); at yaw = pitch = 0 the view matches the
  // capture camera looking down +z.
  const rot = new Float64Array([
    cy, 0, sy,
    sy * sp, cp, -cy * sp,
    -sy * cp, sp, cy * cp,
  ]);
  return { rot, target: params.target, distance: params.distance };
}

export interface ProjectedPoint {
  sx: number;
  sy: number;
  zCam: number;
}

export function projectToScreen(
  x: number,
  y: number,
  z: number,
  view: OrbitView,
  focalPx: number,
  centerX: number,
  centerY: number,
): ProjectedPoint | null {
  const dx = x - view.target[0];
  const dy = y - view.target[1];
  const dz = z - view.target[2];
  const r = view.rot;
  const cx = r[0] * dx + r[1] * dy + r[2] * dz;
  const cyy = r[3] * dx + r[4] * dy + r[5] * dz;
  const cz = r[6] * dx + r[7] * dy + r[8] * dz + view.distance;
  if (cz <= 1e-6) return null;
  return {
    sx: (cx * focalPx) / cz + centerX,
    sy: (cyy * focalPx) / cz + centerY,
    zCam: cz,
  };
}

export function clampPitch(pitch: number): number {
  const limit = Math.PI / 2 - 0.01;
  return Math.max(-limit, Math.min(limit, pitch));
}
