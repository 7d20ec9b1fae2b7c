// Browser bootstrap: wires a real WebSocket into the client core, runs the
// canvas render loop, and maps mouse input to strokes (left drag), orbit
// (right drag / wheel) and pointer gestures (shift-click).

import { ViewerClient } from "./client.js";
import { clampPitch, defaultOrbit, orbitView } from "./orbit.js";
import {
  GESTURE_TTL_MS,
  ScreenPoints,
  buildPointCloud,
  cloudCentroid,
  drawScene,
  formatStats,
  pickPixel,
  projectCloud,
} from "./render.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as CanvasRenderingContext2D;
const statusEl = document.getElementById("status") as HTMLElement;
const statsEl = document.getElementById("stats") as HTMLElement;

const params = new URLSearchParams(window.location.search);
const wsUrl = params.get("ws") ?? "ws://127.0.0.1:8765";

const client = new ViewerClient({
  onHello: (hello) => {
    statusEl.textContent =
      `connected: ${hello.width}x${hello.height} @ ${hello.fps} fps`;
  },
  onError: (reason, detail) => {
    statusEl.textContent = `error: ${reason}${detail ? ` (${detail})` : ""}`;
  },
});

const orbit = defaultOrbit();
let targetLocked = false;
let screen: ScreenPoints | null = null;
let orbiting = false;
let lastMouse: [number, number] = [0, 0];

function connect(): void {
  statusEl.textContent = `connecting to ${wsUrl}…`;
  const ws = new WebSocket(wsUrl);
  ws.binaryType = "arraybuffer";
  ws.onopen = () => {
    client.attach({ send: (d) => ws.send(d), close: () => ws.close() });
    client.requestState();
  };
  ws.onmessage = (event) => client.handleMessage(event.data);
  ws.onclose = () => {
    client.detach();
    statusEl.textContent = "disconnected: retrying in 2 s";
    setTimeout(connect, 2000);
  };
}

function pick(event: MouseEvent): { u: number; v: number } | null {
  if (!screen) return null;
  const rect = canvas.getBoundingClientRect();
  return pickPixel(screen, event.clientX - rect.left, event.clientY - rect.top);
}

canvas.addEventListener("contextmenu", (e) => e.preventDefault());

canvas.addEventListener("mousedown", (event) => {
  if (event.button === 2) {
    orbiting = true;
    lastMouse = [event.clientX, event.clientY];
    return;
  }
  if (event.shiftKey) {
    const hit = pick(event);
    if (hit) client.sendGesture(hit.u, hit.v);
    return;
  }
  const hit = pick(event);
  if (hit) client.sendOps(client.input.begin(hit.u, hit.v, performance.now()));
});

canvas.addEventListener("mousemove", (event) => {
  if (orbiting) {
    orbit.yaw += (event.clientX - lastMouse[0]) * 0.005;
    orbit.pitch = clampPitch(orbit.pitch + (event.clientY - lastMouse[1]) * 0.005);
    lastMouse = [event.clientX, event.clientY];
    return;
  }
  if (client.input.drawing) {
    const hit = pick(event);
    if (hit) client.sendOps(client.input.move(hit.u, hit.v, performance.now()));
  }
});

window.addEventListener("mouseup", (event) => {
  if (event.button === 2) {
    orbiting = false;
    return;
  }
  client.sendOps(client.input.end());
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  orbit.distance = Math.max(0.2, orbit.distance * (event.deltaY > 0 ? 1.1 : 0.9));
});

function renderLoop(): void {
  requestAnimationFrame(renderLoop);
  const nowMs = performance.now();
  if (!client.latestDepth || !client.hello) {
    ctx.fillStyle = "#10131a";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = "#8899aa";
    ctx.font = "16px system-ui";
    ctx.fillText(
      client.awaitingKeyframe ? "awaiting keyframe…" : "no stream",
      20, 40,
    );
    return;
  }
  const cloud = buildPointCloud(
    client.latestDepth, client.hello.intrinsics, client.colorForDepth(),
  );
  if (!targetLocked && cloud.count > 0) {
    orbit.target = cloudCentroid(cloud);
    orbit.distance = orbit.target[2];
    targetLocked = true;
  }
  const view = orbitView(orbit);
  const focal = canvas.height * 0.9;
  screen = projectCloud(cloud, view, focal, canvas.width / 2, canvas.height / 2);
  client.gestures = client.gestures.filter((g) => g.expiresAtMs > nowMs - GESTURE_TTL_MS);
  drawScene(
    ctx, screen, client.annotations.all(), client.gestures,
    view, focal, canvas.width / 2, canvas.height / 2, nowMs,
  );
  const stats = formatStats(client.stats);
  statsEl.textContent =
    `p50 ${stats.p50} · p95 ${stats.p95} · ${stats.bandwidth} · drops ${stats.drops}` +
    (client.offline.overflowed ? " · offline queue overflow" : "");
}

connect();
renderLoop();
