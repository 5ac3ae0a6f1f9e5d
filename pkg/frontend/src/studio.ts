// Studio UI wiring: load an image, paint intents, tune the guidance weight,
// submit a single-pass inpaint, iterate via the history strip.

import { ApiError, fetchHealth, submitInpaint } from "./api.js";
import { BrushMode, BrushState, IntentField, Point } from "./intentMask.js";
import { SessionHistory } from "./history.js";

const ZOOM = 12; // display scale for the tiny model canvas

interface StudioState {
  imageSize: number;
  imagePng: Uint8Array | null;
  imagePixels: ImageData | null;
  field: IntentField;
  brush: BrushState;
  history: SessionHistory;
  pending: boolean;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function encodeCanvasPng(canvas: HTMLCanvasElement): Promise<Uint8Array> {
  const blob: Blob = await new Promise((resolve, reject) =>
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("toBlob failed"))), "image/png"),
  );
  return new Uint8Array(await blob.arrayBuffer());
}

export async function startStudio(): Promise<void> {
  const health = await fetchHealth("");
  const size = health.model_config?.image_size ?? 32;

  const state: StudioState = {
    imageSize: size,
    imagePng: null,
    imagePixels: null,
    field: new IntentField(size, size),
    brush: { mode: "create", radius: 2, w: 2.0, steps: 50, seed: 0, randomizeSeed: true },
    history: new SessionHistory(),
    pending: false,
  };

  const paintCanvas = el<HTMLCanvasElement>("paint-canvas");
  const resultImg = el<HTMLImageElement>("result-image");
  const banner = el<HTMLDivElement>("error-banner");
  const submitButton = el<HTMLButtonElement>("submit");
  const historyStrip = el<HTMLDivElement>("history-strip");
  const seedInput = el<HTMLInputElement>("seed");
  const statusLine = el<HTMLSpanElement>("status-line");

  paintCanvas.width = size * ZOOM;
  paintCanvas.height = size * ZOOM;
  const ctx = paintCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;

  statusLine.textContent =
    health.checkpoint_id === "none"
      ? "service has no checkpoint loaded"
      : `model ${size}x${size}, checkpoint ${health.checkpoint_id.slice(0, 12)}`;

  function redraw(): void {
    ctx.clearRect(0, 0, paintCanvas.width, paintCanvas.height);
    if (state.imagePixels) {
      const off = document.createElement("canvas");
      off.width = size;
      off.height = size;
      off.getContext("2d")!.putImageData(state.imagePixels, 0, 0);
      ctx.drawImage(off, 0, 0, size * ZOOM, size * ZOOM);
    }
    // intent overlay: creation regions vs removal regions in two colors
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        const v = state.field.get(x, y);
        if (v === 0) continue;
        ctx.fillStyle = v > 0 ? "rgba(40, 220, 90, 0.45)" : "rgba(235, 60, 60, 0.45)";
        ctx.fillRect(x * ZOOM, y * ZOOM, ZOOM, ZOOM);
      }
    }
    submitButton.disabled =
      state.pending || state.imagePng === null || state.field.nonzeroCount() === 0;
  }

  function showError(message: string): void {
    banner.textContent = message;
    banner.style.display = "block";
  }
  banner.addEventListener("click", () => (banner.style.display = "none"));

  // ---- image loading ----

  el<HTMLInputElement>("file-input").addEventListener("change", async (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const bitmap = await createImageBitmap(file);
    const off = document.createElement("canvas");
    off.width = size;
    off.height = size;
    const offCtx = off.getContext("2d")!;
    offCtx.drawImage(bitmap, 0, 0, size, size);
    state.imagePixels = offCtx.getImageData(0, 0, size, size);
    state.imagePng = await encodeCanvasPng(off);
    state.field.clear();
    redraw();
  });

  // ---- brush controls ----

  for (const mode of ["create", "remove", "erase-intent"] as BrushMode[]) {
    el<HTMLInputElement>(`mode-${mode}`).addEventListener("change", () => {
      state.brush.mode = mode;
    });
  }
  el<HTMLInputElement>("radius").addEventListener("input", (e) => {
    state.brush.radius = Number((e.target as HTMLInputElement).value);
    el<HTMLSpanElement>("radius-value").textContent = String(state.brush.radius);
  });
  const wSlider = el<HTMLInputElement>("w-slider");
  wSlider.addEventListener("input", () => {
    state.brush.w = Number(wSlider.value);
    el<HTMLSpanElement>("w-value").textContent = wSlider.value;
  });
  el<HTMLInputElement>("steps").addEventListener("input", (e) => {
    state.brush.steps = Number((e.target as HTMLInputElement).value);
  });
  seedInput.addEventListener("input", () => {
    state.brush.seed = Number(seedInput.value);
  });
  el<HTMLInputElement>("randomize-seed").addEventListener("change", (e) => {
    state.brush.randomizeSeed = (e.target as HTMLInputElement).checked;
  });
  el<HTMLButtonElement>("clear-intent").addEventListener("click", () => {
    state.field.clear();
    redraw();
  });

  // ---- painting ----

  let stroke: Point[] | null = null;

  function canvasPoint(event: PointerEvent): Point {
    const rect = paintCanvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * size,
      y: ((event.clientY - rect.top) / rect.height) * size,
    };
  }

  paintCanvas.addEventListener("pointerdown", (event) => {
    if (!state.imagePng) return;
    paintCanvas.setPointerCapture(event.pointerId);
    stroke = [canvasPoint(event)];
    state.field.paintStroke(stroke, state.brush);
    redraw();
  });
  paintCanvas.addEventListener("pointermove", (event) => {
    if (!stroke) return;
    const point = canvasPoint(event);
    state.field.paintStroke([stroke[stroke.length - 1], point], state.brush);
    stroke.push(point);
    redraw();
  });
  paintCanvas.addEventListener("pointerup", () => (stroke = null));

  // ---- submit & history ----

  function renderHistory(): void {
    historyStrip.innerHTML = "";
    for (let i = 0; i < state.history.length; i++) {
      const entry = state.history.get(i);
      const item = document.createElement("button");
      item.className = "history-entry";
      const thumb = document.createElement("img");
      thumb.src = URL.createObjectURL(
        new Blob([entry.resultPngBytes.buffer as ArrayBuffer], { type: "image/png" }),
      );
      item.appendChild(thumb);
      const label = document.createElement("span");
      label.textContent = `seed ${entry.seed} / w ${entry.w}`;
      item.appendChild(label);
      item.addEventListener("click", () => {
        state.field.values.set(state.history.restoreField(i).values);
        state.brush.w = entry.w;
        state.brush.steps = entry.steps;
        state.brush.seed = entry.seed;
        state.brush.randomizeSeed = false;
        wSlider.value = String(entry.w);
        el<HTMLSpanElement>("w-value").textContent = String(entry.w);
        el<HTMLInputElement>("steps").value = String(entry.steps);
        seedInput.value = String(entry.seed);
        el<HTMLInputElement>("randomize-seed").checked = false;
        redraw();
      });
      historyStrip.appendChild(item);
    }
  }

  submitButton.addEventListener("click", async () => {
    if (!state.imagePng || state.pending) return;
    const seed = state.brush.randomizeSeed
      ? Math.floor(Math.random() * 2 ** 31)
      : state.brush.seed;
    state.pending = true;
    redraw();
    try {
      const result = await submitInpaint("", state.imagePng, state.field.toPng(), {
        w: state.brush.w,
        steps: state.brush.steps,
        seed,
      });
      seedInput.value = String(result.seed);
      state.brush.seed = result.seed;
      resultImg.src = URL.createObjectURL(
        new Blob([result.imageBytes.buffer as ArrayBuffer], { type: "image/png" }),
      );
      state.history.add(state.field.clone(), state.brush.w, state.brush.steps, result.seed,
        result.imageBytes);
      renderHistory();
    } catch (error) {
      if (error instanceof ApiError) {
        showError(`service error ${error.status}: ${error.message}`);
      } else {
        showError(String(error));
      }
    } finally {
      state.pending = false;
      redraw();
    }
  });

  redraw();
}

startStudio().catch((error) => {
  const banner = document.getElementById("error-banner");
  if (banner) {
    banner.textContent = `failed to start: ${error}`;
    (banner as HTMLElement).style.display = "block";
  }
});
