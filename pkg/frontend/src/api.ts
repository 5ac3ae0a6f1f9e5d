// Client for the studio service: /api/health and /api/inpaint.
//
// The multipart body is assembled by hand with a fixed boundary so that the
// same UI state always serializes to identical bytes.

export interface HealthInfo {
  status: string;
  checkpoint_id: string;
  model_config: { image_size: number; channels: number } | null;
}

export interface InpaintSettings {
  w: number;
  steps: number;
  seed: number;
  sampler?: string;
}

export interface InpaintResult {
  imageBytes: Uint8Array;
  seed: number;
  elapsedMs: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(detail);
  }
}

const BOUNDARY = "----intentpaint-studio-7f3a9c51";

function textPart(name: string, value: string): string {
  return (
    `--${BOUNDARY}\r\n` +
    `Content-Disposition: form-data; name="${name}"\r\n\r\n` +
    `${value}\r\n`
  );
}

function filePartHeader(name: string, filename: string): string {
  return (
    `--${BOUNDARY}\r\n` +
    `Content-Disposition: form-data; name="${name}"; filename="${filename}"\r\n` +
    `Content-Type: image/png\r\n\r\n`
  );
}

const encoder = new TextEncoder();

export function buildInpaintBody(
  imagePng: Uint8Array,
  intentPng: Uint8Array,
  settings: InpaintSettings,
): { body: Uint8Array; contentType: string } {
  const parts: Uint8Array[] = [
    encoder.encode(filePartHeader("image", "image.png")),
    imagePng,
    encoder.encode("\r\n"),
    encoder.encode(filePartHeader("intent", "intent.png")),
    intentPng,
    encoder.encode("\r\n"),
    encoder.encode(textPart("w", String(settings.w))),
    encoder.encode(textPart("steps", String(settings.steps))),
    encoder.encode(textPart("seed", String(settings.seed))),
    encoder.encode(textPart("sampler", settings.sampler ?? "ddim")),
    encoder.encode(`--${BOUNDARY}--\r\n`),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const body = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    body.set(p, offset);
    offset += p.length;
  }
  return { body, contentType: `multipart/form-data; boundary=${BOUNDARY}` };
}

export async function fetchHealth(baseUrl: string, fetchImpl = fetch): Promise<HealthInfo> {
  const resp = await fetchImpl(`${baseUrl}/api/health`);
  if (!resp.ok) throw new ApiError(resp.status, `health check failed (${resp.status})`);
  return (await resp.json()) as HealthInfo;
}

export async function submitInpaint(
  baseUrl: string,
  imagePng: Uint8Array,
  intentPng: Uint8Array,
  settings: InpaintSettings,
  fetchImpl = fetch,
): Promise<InpaintResult> {
  const { body, contentType } = buildInpaintBody(imagePng, intentPng, settings);
  const resp = await fetchImpl(`${baseUrl}/api/inpaint`, {
    method: "POST",
    headers: { "Content-Type": contentType },
    // the body buffer is allocated exact-size, so the raw ArrayBuffer is safe
    body: body.buffer as ArrayBuffer,
  });
  if (!resp.ok) {
    let detail = `request failed (${resp.status})`;
    try {
      const parsed = (await resp.json()) as { detail?: string };
      if (parsed.detail) detail = parsed.detail;
    } catch {
      // keep the generic message
    }
    throw new ApiError(resp.status, detail);
  }
  return {
    imageBytes: new Uint8Array(await resp.arrayBuffer()),
    seed: Number(resp.headers.get("X-Seed") ?? settings.seed),
    elapsedMs: Number(resp.headers.get("X-Elapsed-Ms") ?? 0),
  };
}
