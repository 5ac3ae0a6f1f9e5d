"""Checkpoint container round-trip and corruption diagnostics."""

from collections import OrderedDict

import numpy as np
import pytest
import torch

from intentpaint.checkpoint import (
    Checkpoint,
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    save_checkpoint,
)
from intentpaint.model import ConditionEmbedding, DenoiserConfig, init_params

MINI = DenoiserConfig(image_size=8, channels=3, base_width=4, depth=2, cond_dim=8, time_dim=8)


def _checkpoint(seed=0):
    params = init_params(seed, MINI)
    rng = np.random.default_rng(seed)
    emb = ConditionEmbedding(
        y_c=rng.normal(size=8).astype(np.float32),
        y_r=rng.normal(size=8).astype(np.float32),
        y_null=np.zeros(8, dtype=np.float32),
    )
    moments = {
        name: (torch.randn_like(t.float()), torch.rand_like(t.float()))
        for name, t in list(params.tensors.items())[:3]
    }
    return Checkpoint(
        config=MINI,
        params=params,
        embeddings=emb,
        opt_moments=moments,
        step=123,
        stage=2,
        rng_numpy=np.random.default_rng(1).bit_generator.state,
    )


def test_round_trip_is_bit_exact(tmp_path):
    ckpt = _checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    for name, t in ckpt.params.tensors.items():
        assert torch.equal(loaded.params.tensors[name], t)
    assert np.array_equal(loaded.embeddings.y_c, ckpt.embeddings.y_c)
    assert np.array_equal(loaded.embeddings.y_r, ckpt.embeddings.y_r)
    for name, (m1, m2) in ckpt.opt_moments.items():
        assert torch.equal(loaded.opt_moments[name][0], m1)
        assert torch.equal(loaded.opt_moments[name][1], m2)
    assert loaded.step == 123 and loaded.stage == 2
    assert loaded.rng_numpy == ckpt.rng_numpy
    assert loaded.config == MINI


def test_save_load_save_is_byte_identical(tmp_path):
    ckpt = _checkpoint()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ckpt, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_by_one_byte(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(CheckpointError, match="truncated payload"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    data = path.read_bytes()
    patched = data.replace(b'"format_version":1', b'"format_version":9', 1)
    assert patched != data
    path.write_bytes(patched)
    with pytest.raises(CheckpointError, match="version mismatch"):
        load_checkpoint(path)


def test_declared_spans_cover_payload_exactly(tmp_path):
    import json

    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    raw = path.read_bytes()
    header_len = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12 : 12 + header_len])
    total = sum(spec["nbytes"] for spec in header["tensors"])
    assert total == len(raw) - 12 - header_len


def test_shape_offset_inconsistency(tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(_checkpoint(), path)
    data = path.read_bytes()
    # grow one declared shape without touching the payload
    patched = data.replace(b'"shape":[8]', b'"shape":[9]', 1)
    assert patched != data
    header_delta = len(patched) - len(data)
    header_len = int.from_bytes(data[4:12], "little") + header_delta
    path.write_bytes(patched[:4] + header_len.to_bytes(8, "little") + patched[12:])
    with pytest.raises(CheckpointError, match="inconsistency"):
        load_checkpoint(path)


def test_checkpoint_bytes_matches_file(tmp_path):
    ckpt = _checkpoint()
    path = tmp_path / "a.ckpt"
    save_checkpoint(ckpt, path)
    assert checkpoint_bytes(ckpt) == path.read_bytes()
