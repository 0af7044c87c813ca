// Wire protocol shared with the render service: JSON view requests out,
// a JSON metadata message followed by one binary frame back.

export interface Pose {
  quat: [number, number, number, number]; // camera-to-world (w,x,y,z)
  position: [number, number, number];
}

export interface ViewRequest {
  pose: Pose;
  fov_y: number;
  time: number;
  mode: 'exact' | 'fast';
  width: number;
  height: number;
  req_id?: number;
}

export interface FrameMeta {
  type: 'frame_meta';
  frame_id: number;
  req_id: number | null;
  render_ms: number;
  n_visible: number;
  cache_hit: boolean;
  clamped: boolean;
  width: number;
  height: number;
  t0: number;
}

export interface ServerError {
  type: 'error';
  code: string;
  message: string;
  req_id?: number | null;
}

export type ServerMessage = FrameMeta | ServerError;

export interface Frame {
  frameId: number;
  width: number;
  height: number;
  format: number;
  pixels: Uint8Array; // raw RGB, 3 bytes per pixel
}

export const FRAME_MAGIC = 0x53473444; // "D4GS" read as little-endian u32
export const HEADER_BYTES = 16;
export const FORMAT_RGB8 = 1;

/** Parse the fixed 16-byte frame header plus payload; throws on mismatch. */
export function parseFrame(buf: ArrayBuffer): Frame {
  if (buf.byteLength < HEADER_BYTES) {
    throw new Error(`frame too small: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  if (view.getUint32(0, true) !== FRAME_MAGIC) {
    throw new Error('bad frame magic');
  }
  const frameId = view.getUint32(4, true);
  const width = view.getUint16(8, true);
  const height = view.getUint16(10, true);
  const format = view.getUint16(12, true);
  if (format !== FORMAT_RGB8) {
    throw new Error(`unsupported frame format ${format}`);
  }
  const expected = HEADER_BYTES + width * height * 3;
  if (buf.byteLength !== expected) {
    throw new Error(`frame size ${buf.byteLength} != expected ${expected}`);
  }
  return {
    frameId,
    width,
    height,
    format,
    pixels: new Uint8Array(buf, HEADER_BYTES),
  };
}

/** Expand raw RGB into the RGBA layout a canvas ImageData wants. */
export function rgbToRgba(pixels: Uint8Array, out?: Uint8ClampedArray): Uint8ClampedArray {
  const n = pixels.length / 3;
  const rgba = out ?? new Uint8ClampedArray(n * 4);
  for (let i = 0, j = 0; i < pixels.length; i += 3, j += 4) {
    rgba[j] = pixels[i];
    rgba[j + 1] = pixels[i + 1];
    rgba[j + 2] = pixels[i + 2];
    rgba[j + 3] = 255;
  }
  return rgba;
}

export function clampTime(t: number): number {
  return Math.min(1, Math.max(0, t));
}
