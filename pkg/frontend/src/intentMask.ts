// Ternary intent field and brush semantics.
//
// Field values: +1 creation, -1 removal, 0 not applied. The wire encoding
// maps -1 -> 0, 0 -> 128, +1 -> 255 in an 8-bit grayscale PNG.

import { encodeGrayPng } from "./png.js";

export type BrushMode = "create" | "remove" | "erase-intent";

export interface BrushState {
  mode: BrushMode;
  radius: number; // pixels, >= 1
  w: number; // guidance weight, slider range [0, 8]
  steps: number;
  seed: number;
  randomizeSeed: boolean;
}

export interface Point {
  x: number;
  y: number;
}

const MODE_VALUE: Record<BrushMode, number> = {
  create: 1,
  remove: -1,
  "erase-intent": 0,
};

export const VALUE_TO_WIRE: Record<number, number> = { [-1]: 0, 0: 128, 1: 255 };
export const WIRE_TO_VALUE: Record<number, number> = { 0: -1, 128: 0, 255: 1 };

export class IntentField {
  readonly width: number;
  readonly height: number;
  readonly values: Int8Array;

  constructor(width: number, height: number, values?: Int8Array) {
    if (width < 1 || height < 1) throw new Error(`bad field size ${width}x${height}`);
    this.width = width;
    this.height = height;
    if (values !== undefined) {
      if (values.length !== width * height) {
        throw new Error(`values length ${values.length} != ${width}x${height}`);
      }
      this.values = Int8Array.from(values);
    } else {
      this.values = new Int8Array(width * height);
    }
  }

  get(x: number, y: number): number {
    return this.values[y * this.width + x];
  }

  set(x: number, y: number, value: number): void {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) return; // clip
    this.values[y * this.width + x] = value;
  }

  clear(): void {
    this.values.fill(0);
  }

  clone(): IntentField {
    return new IntentField(this.width, this.height, this.values);
  }

  nonzeroCount(): number {
    let n = 0;
    for (let i = 0; i < this.values.length; i++) if (this.values[i] !== 0) n++;
    return n;
  }

  /** Stamp a filled disk; pixels outside the field are ignored. */
  stamp(cx: number, cy: number, radius: number, value: number): void {
    const r = Math.max(radius, 0.5);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          this.values[y * this.width + x] = value;
        }
      }
    }
  }

  /** Paint along a pointer path; the last stroke wins per pixel. */
  paintStroke(path: Point[], brush: BrushState): void {
    if (path.length === 0) return;
    const value = MODE_VALUE[brush.mode];
    const radius = Math.max(1, brush.radius) - 0.5;
    let prev = path[0];
    this.stamp(prev.x, prev.y, radius, value);
    for (let i = 1; i < path.length; i++) {
      const next = path[i];
      const dist = Math.hypot(next.x - prev.x, next.y - prev.y);
      const steps = Math.max(1, Math.ceil(dist / 0.5));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp(prev.x + (next.x - prev.x) * t, prev.y + (next.y - prev.y) * t, radius, value);
      }
      prev = next;
    }
  }

  /** Wire encoding: 0/128/255 grayscale PNG; deterministic bytes. */
  toPng(): Uint8Array {
    const pixels = new Uint8Array(this.values.length);
    for (let i = 0; i < this.values.length; i++) {
      pixels[i] = VALUE_TO_WIRE[this.values[i]];
    }
    return encodeGrayPng(this.width, this.height, pixels);
  }

  static fromWirePixels(width: number, height: number, pixels: Uint8Array): IntentField {
    const values = new Int8Array(width * height);
    for (let i = 0; i < pixels.length; i++) {
      const v = WIRE_TO_VALUE[pixels[i]];
      if (v === undefined) {
        const y = Math.floor(i / width);
        const x = i % width;
        throw new Error(`illegal wire value ${pixels[i]} at pixel (y=${y}, x=${x})`);
      }
      values[i] = v;
    }
    return new IntentField(width, height, values);
  }
}
