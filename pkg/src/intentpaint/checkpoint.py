"""Versioned binary checkpoint container.

Layout: 4 magic bytes, an 8-byte little-endian header length, a JSON header
(tensor names, shapes, dtype, byte offsets, config, counters, RNG state),
then the raw tensor payload as little-endian 32-bit floats. Serialization is
canonical (sorted tensor names, sorted JSON keys), so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import base64
import json
from collections import OrderedDict
from dataclasses import dataclass
from dataclasses import asdict as dataclass_asdict
from pathlib import Path

import numpy as np
import torch

from .model import ConditionEmbedding, DenoiserConfig, DenoiserParams

MAGIC = b"INPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed or incompatible."""


@dataclass
class Checkpoint:
    config: DenoiserConfig
    params: DenoiserParams
    embeddings: ConditionEmbedding
    opt_moments: dict[str, tuple[torch.Tensor, torch.Tensor]]  # name -> (exp_avg, exp_avg_sq)
    step: int
    stage: int
    rng_numpy: dict | None = None
    rng_torch: bytes | None = None
    format_version: int = FORMAT_VERSION


def _flat_tensors(ckpt: Checkpoint) -> "OrderedDict[str, np.ndarray]":
    out: dict[str, np.ndarray] = {}
    for name, t in ckpt.params.tensors.items():
        out[f"params.{name}"] = t.detach().to(torch.float32).numpy()
    out["emb.y_c"] = ckpt.embeddings.y_c
    out["emb.y_r"] = ckpt.embeddings.y_r
    out["emb.y_null"] = ckpt.embeddings.y_null
    for name, (m1, m2) in ckpt.opt_moments.items():
        out[f"opt.{name}.exp_avg"] = m1.detach().to(torch.float32).numpy()
        out[f"opt.{name}.exp_avg_sq"] = m2.detach().to(torch.float32).numpy()
    return OrderedDict(sorted(out.items()))


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Canonical serialized form (also used for hashing and determinism checks)."""
    tensors = _flat_tensors(ckpt)
    specs = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        specs.append(
            {"name": name, "shape": list(arr.shape), "dtype": "<f4", "offset": offset,
             "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": ckpt.format_version,
        "denoiser_config": dataclass_asdict(ckpt.config),
        "step": ckpt.step,
        "stage": ckpt.stage,
        "rng_numpy": ckpt.rng_numpy,
        "rng_torch": base64.b64encode(ckpt.rng_torch).decode() if ckpt.rng_torch else None,
        "tensors": specs,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return b"".join([MAGIC, len(header_bytes).to_bytes(8, "little"), header_bytes, *chunks])


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}, found {raw[:4]!r}")
    if len(raw) < 12:
        raise CheckpointError("truncated payload: file shorter than the fixed header")
    header_len = int.from_bytes(raw[4:12], "little")
    header_end = 12 + header_len
    if len(raw) < header_end:
        raise CheckpointError("truncated payload: header extends past end of file")
    try:
        header = json.loads(raw[12:header_end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed header JSON: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"version mismatch: file is format {version!r}, reader supports {FORMAT_VERSION}"
        )

    payload = raw[header_end:]
    declared = 0
    arrays: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        expected_nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if spec["dtype"] != "<f4" or spec["nbytes"] != expected_nbytes:
            raise CheckpointError(
                f"header/payload inconsistency for {name!r}: shape {shape} does not "
                f"match declared {spec['nbytes']} bytes"
            )
        if spec["offset"] != declared:
            raise CheckpointError(f"header/payload inconsistency: {name!r} offset gap")
        declared += spec["nbytes"]
        end = header_end + spec["offset"] + spec["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"truncated payload: {name!r} extends past end of file")
        start = header_end + spec["offset"]
        arrays[name] = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape).copy()
    if declared != len(payload):
        raise CheckpointError(
            f"header/payload inconsistency: declared {declared} bytes, file has {len(payload)}"
        )

    params = OrderedDict(
        (name[len("params."):], torch.from_numpy(arr))
        for name, arr in arrays.items()
        if name.startswith("params.")
    )
    moments: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
    for name, arr in arrays.items():
        if name.startswith("opt.") and name.endswith(".exp_avg"):
            base = name[len("opt."):-len(".exp_avg")]
            sq = arrays.get(f"opt.{base}.exp_avg_sq")
            if sq is None:
                raise CheckpointError(f"header/payload inconsistency: missing moment pair for {base!r}")
            moments[base] = (torch.from_numpy(arr), torch.from_numpy(sq))
    for key in ("emb.y_c", "emb.y_r", "emb.y_null"):
        if key not in arrays:
            raise CheckpointError(f"header/payload inconsistency: missing tensor {key!r}")

    rng_torch = header.get("rng_torch")
    return Checkpoint(
        config=DenoiserConfig(**header["denoiser_config"]),
        params=DenoiserParams(params),
        embeddings=ConditionEmbedding(
            y_c=arrays["emb.y_c"], y_r=arrays["emb.y_r"], y_null=arrays["emb.y_null"]
        ),
        opt_moments=moments,
        step=int(header["step"]),
        stage=int(header["stage"]),
        rng_numpy=header.get("rng_numpy"),
        rng_torch=base64.b64decode(rng_torch) if rng_torch else None,
        format_version=version,
    )
