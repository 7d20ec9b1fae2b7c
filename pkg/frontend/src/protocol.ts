// Binary wire protocol reader. Layouts mirror the Python peer bit for bit:
// every envelope is magic u32 "VCS1", version u8 = 1, msg_type u8,
// flags u16, payload_len u32, payload: all little-endian.

export const MAGIC = 0x31534356;
export const PROTOCOL_VERSION = 1;
export const WIRE_HEADER_SIZE = 12;

export const MsgType = {
  Hello: 1,
  HelloAck: 2,
  DepthKeyframe: 3,
  DepthDelta: 4,
  ColorFrame: 5,
  AnnotationOp: 6,
  GestureEvent: 7,
  Stats: 8,
  Bye: 9,
} as const;

export const FLAG_CHANNEL_MEDIA = 0x0001;
export const FLAG_KEYFRAME_REQUEST = 0x0002;
export const FLAG_COMPRESSED = 0x0004;

export interface Envelope {
  msgType: number;
  flags: number;
  payload: Uint8Array;
  totalSize: number;
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface DepthKeyframe {
  kind: "keyframe";
  frameId: number;
  captureTsUs: number;
  width: number;
  height: number;
  tileSize: number;
  intrinsics: Intrinsics;
  depth: Uint16Array;
}

export interface DeltaTile {
  index: number;
  width: number;
  height: number;
  values: Uint16Array;
}

export interface DepthDelta {
  kind: "delta";
  frameId: number;
  refFrameId: number;
  captureTsUs: number;
  tiles: DeltaTile[];
}

export interface ColorMessage {
  kind: "color";
  frameId: number;
  captureTsUs: number;
  codecId: number;
  width: number;
  height: number;
  payload: Uint8Array;
}

export type MediaMessage = DepthKeyframe | DepthDelta | ColorMessage;

export class ProtocolError extends Error {}

export function parseEnvelope(data: Uint8Array, offset = 0): Envelope | null {
  if (data.length - offset < WIRE_HEADER_SIZE) return null;
  const view = new DataView(data.buffer, data.byteOffset + offset);
  const magic = view.getUint32(0, true);
  if (magic !== MAGIC) {
    throw new ProtocolError(`bad magic 0x${magic.toString(16)}`);
  }
  const version = view.getUint8(4);
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(
      `protocol version mismatch: peer sent ${version}, this client speaks ${PROTOCOL_VERSION}`,
    );
  }
  const msgType = view.getUint8(5);
  const flags = view.getUint16(6, true);
  const payloadLen = view.getUint32(8, true);
  const totalSize = WIRE_HEADER_SIZE + payloadLen;
  if (data.length - offset < totalSize) return null;
  const payload = data.subarray(
    offset + WIRE_HEADER_SIZE,
    offset + totalSize,
  );
  return { msgType, flags, payload, totalSize };
}

// Uint16 views need 2-byte alignment; payload offsets are arbitrary, so copy.
function u16At(payload: Uint8Array, offset: number, count: number): Uint16Array {
  const bytes = payload.slice(offset, offset + 2 * count);
  return new Uint16Array(bytes.buffer, 0, count);
}

export function parseDepthKeyframe(payload: Uint8Array): DepthKeyframe {
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  if (payload.length < 33) throw new ProtocolError("short keyframe prefix");
  const frameId = view.getUint32(0, true);
  const captureTsUs = Number(view.getBigUint64(4, true));
  const width = view.getUint16(12, true);
  const height = view.getUint16(14, true);
  const tileSize = view.getUint8(16);
  const intrinsics = {
    fx: view.getFloat32(17, true),
    fy: view.getFloat32(21, true),
    cx: view.getFloat32(25, true),
    cy: view.getFloat32(29, true),
  };
  const expected = 33 + 2 * width * height;
  if (payload.length !== expected) {
    throw new ProtocolError(
      `keyframe payload is ${payload.length} bytes, expected ${expected}`,
    );
  }
  return {
    kind: "keyframe",
    frameId,
    captureTsUs,
    width,
    height,
    tileSize,
    intrinsics,
    depth: u16At(payload, 33, width * height),
  };
}

export function parseDepthDelta(payload: Uint8Array): DepthDelta {
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  if (payload.length < 20) throw new ProtocolError("short delta prefix");
  const frameId = view.getUint32(0, true);
  const refFrameId = view.getUint32(4, true);
  const captureTsUs = Number(view.getBigUint64(8, true));
  const tileCount = view.getUint32(16, true);
  const tiles: DeltaTile[] = [];
  let offset = 20;
  for (let i = 0; i < tileCount; i++) {
    if (payload.length < offset + 6) throw new ProtocolError("short tile header");
    const index = view.getUint32(offset, true);
    const width = view.getUint8(offset + 4);
    const height = view.getUint8(offset + 5);
    offset += 6;
    const count = width * height;
    if (payload.length < offset + 2 * count) {
      throw new ProtocolError("short tile payload");
    }
    tiles.push({ index, width, height, values: u16At(payload, offset, count) });
    offset += 2 * count;
  }
  if (offset !== payload.length) {
    throw new ProtocolError(`delta payload is ${payload.length} bytes, expected ${offset}`);
  }
  return { kind: "delta", frameId, refFrameId, captureTsUs, tiles };
}

export function parseColorMessage(payload: Uint8Array): ColorMessage {
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  if (payload.length < 17) throw new ProtocolError("short color prefix");
  const frameId = view.getUint32(0, true);
  const captureTsUs = Number(view.getBigUint64(4, true));
  const codecId = view.getUint8(12);
  const width = view.getUint16(13, true);
  const height = view.getUint16(15, true);
  const body = payload.subarray(17);
  if (codecId === 0 && body.length !== 3 * width * height) {
    throw new ProtocolError(
      `raw color payload is ${body.length} bytes, expected ${3 * width * height}`,
    );
  }
  return { kind: "color", frameId, captureTsUs, codecId, width, height, payload: body };
}

export function parseMediaMessage(envelope: Envelope): MediaMessage | null {
  switch (envelope.msgType) {
    case MsgType.DepthKeyframe:
      return parseDepthKeyframe(envelope.payload);
    case MsgType.DepthDelta:
      return parseDepthDelta(envelope.payload);
    case MsgType.ColorFrame:
      return parseColorMessage(envelope.payload);
    default:
      return null; // unknown or non-media: skipped via the length prefix
  }
}

export function* iterateEnvelopes(data: Uint8Array): Generator<Envelope> {
  let offset = 0;
  while (offset < data.length) {
    const envelope = parseEnvelope(data, offset);
    if (envelope === null) return;
    yield envelope;
    offset += envelope.totalSize;
  }
}

export function fnv1a32(bytes: Uint8Array): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < bytes.length; i++) {
    hash ^= bytes[i];
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

export function depthChecksum(depth: Uint16Array): string {
  // Checksums are defined over the little-endian byte stream.
  const bytes = new Uint8Array(depth.length * 2);
  for (let i = 0; i < depth.length; i++) {
    bytes[2 * i] = depth[i] & 0xff;
    bytes[2 * i + 1] = depth[i] >> 8;
  }
  return "0x" + fnv1a32(bytes).toString(16).padStart(8, "0");
}
