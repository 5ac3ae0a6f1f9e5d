import { describe, expect, it } from "vitest";
import { inflateSync } from "node:zlib";

import { decodeGrayPng, encodeGrayPng } from "../src/png.js";

const inflate = (data: Uint8Array) => new Uint8Array(inflateSync(data));

describe("grayscale png codec", () => {
  it("round-trips pixel data", () => {
    const width = 13;
    const height = 9;
    const pixels = new Uint8Array(width * height);
    for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 37) % 256;
    const png = encodeGrayPng(width, height, pixels);
    const decoded = decodeGrayPng(png, inflate);
    expect(decoded.width).toBe(width);
    expect(decoded.height).toBe(height);
    expect(Array.from(decoded.pixels)).toEqual(Array.from(pixels));
  });

  it("is byte-deterministic", () => {
    const pixels = new Uint8Array(32 * 32).fill(128);
    const a = encodeGrayPng(32, 32, pixels);
    const b = encodeGrayPng(32, 32, pixels);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("starts with the png signature", () => {
    const png = encodeGrayPng(2, 2, new Uint8Array([0, 128, 255, 0]));
    expect(Array.from(png.subarray(0, 8))).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  });

  it("handles payloads larger than one stored block", () => {
    const width = 300;
    const height = 300; // raw stream 300*301 > 65535
    const pixels = new Uint8Array(width * height);
    for (let i = 0; i < pixels.length; i++) pixels[i] = i % 251;
    const decoded = decodeGrayPng(encodeGrayPng(width, height, pixels), inflate);
    expect(Buffer.from(decoded.pixels).equals(Buffer.from(pixels))).toBe(true);
  });

  it("rejects mismatched buffer sizes", () => {
    expect(() => encodeGrayPng(4, 4, new Uint8Array(3))).toThrow(/length/);
  });
});
