"""HTTP facade over the inpaint pipeline.

POST /api/inpaint takes a multipart request (image PNG, intent PNG, w, steps,
seed) and returns the composited result PNG; the response headers echo the
effective sampling settings so any result can be reproduced. GET /api/health
reports the loaded checkpoint. Model invocations are serialized through a
single worker in arrival order; requests beyond the configured queue depth
are rejected with 503.
"""

from __future__ import annotations

import hashlib
import io
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict as dataclass_asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Response, UploadFile
from PIL import Image, UnidentifiedImageError

from .checkpoint import load_checkpoint
from .pipeline import InpaintRequest, inpaint
from .schedule import GuidanceConfig, build_schedule
from .wire import WireFormatError, decode_intent

DEFAULT_MAX_QUEUE = 8


def _png_to_image(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise HTTPException(status_code=400, detail=f"image is not a decodable PNG: {exc}")
    return rgb.transpose(2, 0, 1)


def _image_to_png(image: np.ndarray) -> bytes:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def create_app(
    checkpoint_path: str | Path | None = None,
    *,
    max_queue: int = DEFAULT_MAX_QUEUE,
    schedule_steps: int = 1000,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="intentpaint studio service")
    state = app.state
    state.checkpoint = None
    state.checkpoint_id = "none"
    state.sched = build_schedule(schedule_steps)
    state.max_queue = max_queue
    state.pending = 0
    state.pending_lock = threading.Lock()
    state.worker = ThreadPoolExecutor(max_workers=1)  # one model, one queue

    if checkpoint_path is not None:
        state.checkpoint = load_checkpoint(checkpoint_path)
        state.checkpoint_id = hashlib.sha256(Path(checkpoint_path).read_bytes()).hexdigest()

    @app.get("/api/health")
    def health():
        config = None
        if state.checkpoint is not None:
            config = dataclass_asdict(state.checkpoint.config)
        return {"status": "ok", "checkpoint_id": state.checkpoint_id, "model_config": config}

    @app.post("/api/inpaint")
    def handle_inpaint(
        image: UploadFile = File(...),
        intent: UploadFile = File(...),
        w: float = Form(2.0),
        steps: int = Form(50),
        seed: int | None = Form(None),
        sampler: str = Form("ddim"),
    ):
        if state.checkpoint is None:
            raise HTTPException(status_code=409, detail="no checkpoint loaded")
        img = _png_to_image(image.file.read())
        try:
            mask = decode_intent(intent.file.read())
        except WireFormatError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if seed is None:
            seed = int(np.random.default_rng().integers(0, 2**31 - 1))
        try:
            req = InpaintRequest(
                image=img,
                intent=mask,
                guidance=GuidanceConfig(w=w, sampler=sampler, steps=steps, seed=seed),
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        with state.pending_lock:
            if state.pending >= state.max_queue:
                raise HTTPException(status_code=503, detail="inference queue is full")
            state.pending += 1
        start = time.perf_counter()
        try:
            future = state.worker.submit(inpaint, req, state.checkpoint, state.sched)
            result = future.result()
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        finally:
            with state.pending_lock:
                state.pending -= 1
        elapsed_ms = (time.perf_counter() - start) * 1000.0

        return Response(
            content=_image_to_png(result),
            media_type="image/png",
            headers={
                "X-Seed": str(seed),
                "X-Steps": str(steps),
                "X-Guidance-W": str(w),
                "X-Sampler": sampler,
                "X-Elapsed-Ms": f"{elapsed_ms:.1f}",
            },
        )

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="studio")

    return app
