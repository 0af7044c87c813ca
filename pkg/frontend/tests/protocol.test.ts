import { describe, expect, it } from 'vitest';

import { clampTime, FORMAT_RGB8, HEADER_BYTES, parseFrame, rgbToRgba } from '../src/protocol.js';

function buildFrame(frameId: number, w: number, h: number, format = FORMAT_RGB8): ArrayBuffer {
  const buf = new ArrayBuffer(HEADER_BYTES + w * h * 3);
  const view = new DataView(buf);
  view.setUint8(0, 0x44); // D
  view.setUint8(1, 0x34); // 4
  view.setUint8(2, 0x47); // G
  view.setUint8(3, 0x53); // S
  view.setUint32(4, frameId, true);
  view.setUint16(8, w, true);
  view.setUint16(10, h, true);
  view.setUint16(12, format, true);
  const px = new Uint8Array(buf, HEADER_BYTES);
  for (let i = 0; i < px.length; i++) px[i] = i % 251;
  return buf;
}

describe('frame parsing', () => {
  it('parses a well-formed frame', () => {
    const frame = parseFrame(buildFrame(42, 8, 6));
    expect(frame.frameId).toBe(42);
    expect(frame.width).toBe(8);
    expect(frame.height).toBe(6);
    expect(frame.pixels.length).toBe(8 * 6 * 3);
    expect(frame.pixels[5]).toBe(5);
  });

  it('rejects a bad magic', () => {
    const buf = buildFrame(1, 4, 4);
    new DataView(buf).setUint8(0, 0x58);
    expect(() => parseFrame(buf)).toThrow(/magic/);
  });

  it('rejects a size mismatch', () => {
    const buf = buildFrame(1, 4, 4);
    expect(() => parseFrame(buf.slice(0, buf.byteLength - 3))).toThrow(/size/);
  });

  it('rejects unknown pixel formats', () => {
    expect(() => parseFrame(buildFrame(1, 4, 4, 9))).toThrow(/format/);
  });

  it('rejects truncated headers', () => {
    expect(() => parseFrame(new ArrayBuffer(8))).toThrow(/small/);
  });
});

describe('rgb expansion', () => {
  it('expands RGB to opaque RGBA', () => {
    const rgb = new Uint8Array([1, 2, 3, 4, 5, 6]);
    const rgba = rgbToRgba(rgb);
    expect(Array.from(rgba)).toEqual([1, 2, 3, 255, 4, 5, 6, 255]);
  });
});

describe('time clamp', () => {
  it('never sends t outside [0,1]', () => {
    expect(clampTime(-0.5)).toBe(0);
    expect(clampTime(1.5)).toBe(1);
    expect(clampTime(0.25)).toBe(0.25);
  });
});
