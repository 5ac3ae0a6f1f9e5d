// Minimal grayscale PNG codec for the intent-mask wire format.
//
// The encoder emits 8-bit grayscale PNGs with an uncompressed (stored-block)
// zlib stream, so its output is byte-deterministic and needs no compression
// library. The decoder handles any zlib stream via an injected inflate
// function (node:zlib in tests; the browser UI never decodes PNGs itself).

const PNG_SIGNATURE = new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(data: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    crc = CRC_TABLE[(crc ^ data[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function writeU32(target: Uint8Array, offset: number, value: number): void {
  target[offset] = (value >>> 24) & 0xff;
  target[offset + 1] = (value >>> 16) & 0xff;
  target[offset + 2] = (value >>> 8) & 0xff;
  target[offset + 3] = value & 0xff;
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + payload.length);
  writeU32(out, 0, payload.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(payload, 8);
  writeU32(out, 8 + payload.length, crc32(out.subarray(4, 8 + payload.length)));
  return out;
}

/** zlib stream with stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [];
  const MAX = 65535;
  for (let start = 0; start < raw.length || start === 0; start += MAX) {
    const part = raw.subarray(start, Math.min(start + MAX, raw.length));
    const final = start + MAX >= raw.length ? 1 : 0;
    const header = new Uint8Array(5);
    header[0] = final;
    header[1] = part.length & 0xff;
    header[2] = (part.length >>> 8) & 0xff;
    header[3] = ~part.length & 0xff;
    header[4] = (~part.length >>> 8) & 0xff;
    blocks.push(header, part);
    if (final) break;
  }
  const body = concat(blocks);
  const out = new Uint8Array(2 + body.length + 4);
  out[0] = 0x78; // 32k window, deflate
  out[1] = 0x01; // no dictionary, fastest-compression flag, valid FCHECK
  out.set(body, 2);
  writeU32(out, 2 + body.length, adler32(raw));
  return out;
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

function encodePng(
  width: number,
  height: number,
  pixels: Uint8Array,
  channels: 1 | 3,
): Uint8Array {
  if (pixels.length !== width * height * channels) {
    throw new Error(`pixel buffer length ${pixels.length} != ${width}x${height}x${channels}`);
  }
  const ihdr = new Uint8Array(13);
  writeU32(ihdr, 0, width);
  writeU32(ihdr, 4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = channels === 1 ? 0 : 2; // colortype: grayscale or truecolor
  // compression, filter, interlace all zero

  // one filter byte (0 = None) per scanline
  const stride = width * channels;
  const raw = new Uint8Array(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0;
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  return concat([
    PNG_SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

/** Encode 8-bit grayscale pixels (row-major, length width*height) as a PNG. */
export function encodeGrayPng(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encodePng(width, height, pixels, 1);
}

/** Encode 8-bit RGB pixels (row-major, interleaved, length w*h*3) as a PNG. */
export function encodeRgbPng(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encodePng(width, height, pixels, 3);
}

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array;
}

/** Decode an 8-bit grayscale PNG; inflate is injected (e.g. node:zlib). */
export function decodeGrayPng(
  png: Uint8Array,
  inflate: (data: Uint8Array) => Uint8Array,
): GrayImage {
  for (let i = 0; i < 8; i++) {
    if (png[i] !== PNG_SIGNATURE[i]) throw new Error("not a PNG");
  }
  let offset = 8;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  while (offset < png.length) {
    const length =
      ((png[offset] << 24) | (png[offset + 1] << 16) | (png[offset + 2] << 8) | png[offset + 3]) >>> 0;
    const type = String.fromCharCode(...png.subarray(offset + 4, offset + 8));
    const payload = png.subarray(offset + 8, offset + 8 + length);
    if (type === "IHDR") {
      width = ((payload[0] << 24) | (payload[1] << 16) | (payload[2] << 8) | payload[3]) >>> 0;
      height = ((payload[4] << 24) | (payload[5] << 16) | (payload[6] << 8) | payload[7]) >>> 0;
      if (payload[8] !== 8 || payload[9] !== 0) {
        throw new Error(`expected 8-bit grayscale, got depth ${payload[8]} colortype ${payload[9]}`);
      }
      if (payload[12] !== 0) throw new Error("interlaced PNGs are not supported");
    } else if (type === "IDAT") {
      idat.push(payload);
    } else if (type === "IEND") {
      break;
    }
    offset += 12 + length;
  }
  if (width === 0 || height === 0) throw new Error("missing IHDR");
  const raw = inflate(concat(idat));
  const stride = width + 1;
  if (raw.length !== height * stride) {
    throw new Error(`decompressed size ${raw.length} != expected ${height * stride}`);
  }
  const pixels = new Uint8Array(width * height);
  let prev = new Uint8Array(width); // previous scanline, for filter reconstruction
  for (let y = 0; y < height; y++) {
    const filter = raw[y * stride];
    const line = raw.subarray(y * stride + 1, (y + 1) * stride);
    const recon = new Uint8Array(width);
    for (let x = 0; x < width; x++) {
      const a = x > 0 ? recon[x - 1] : 0;
      const b = prev[x];
      const c = x > 0 ? prev[x - 1] : 0;
      let value = line[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value = (value + a) & 0xff;
          break;
        case 2:
          value = (value + b) & 0xff;
          break;
        case 3:
          value = (value + ((a + b) >> 1)) & 0xff;
          break;
        case 4: {
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          const pred = pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
          value = (value + pred) & 0xff;
          break;
        }
        default:
          throw new Error(`unsupported PNG filter ${filter}`);
      }
      recon[x] = value;
    }
    pixels.set(recon, y * width);
    prev = recon;
  }
  return { width, height, pixels };
}
