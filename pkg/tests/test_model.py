"""Denoiser construction, input assembly, and conditioning tests."""

import numpy as np
import pytest
import torch

from intentpaint.model import (
    ConditionEmbedding,
    DenoiserConfig,
    DenoiserNet,
    assemble_input,
    denoise,
    init_params,
)

MINI = DenoiserConfig(image_size=8, channels=3, base_width=4, depth=2, cond_dim=8, time_dim=8)


# ---- assemble_input ----


def test_assemble_input_nothing_hidden():
    rng = np.random.default_rng(0)
    z, orig = rng.normal(size=(2, 3, 8, 8))
    out = assemble_input(z, np.zeros((8, 8)), orig)
    assert np.array_equal(out[4:], orig)
    assert np.array_equal(out[:3], z)
    assert np.all(out[3] == 0)


def test_assemble_input_everything_hidden():
    rng = np.random.default_rng(1)
    z, orig = rng.normal(size=(2, 3, 8, 8))
    out = assemble_input(z, np.ones((8, 8)), orig)
    assert np.all(out[4:] == 0)
    assert np.all(out[3] == 1)


def test_assemble_input_channel_count():
    out = assemble_input(np.zeros((3, 32, 32)), np.zeros((32, 32)), np.zeros((3, 32, 32)))
    assert out.shape == (7, 32, 32)


def test_assemble_input_rejects_bad_mask_and_shapes():
    with pytest.raises(ValueError):
        assemble_input(np.zeros((3, 8, 8)), np.full((8, 8), 0.5), np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        assemble_input(np.zeros((3, 8, 8)), np.zeros((8, 8)), np.zeros((3, 16, 16)))


# ---- init_params ----


def test_init_params_reproducible():
    a = init_params(0, MINI)
    b = init_params(0, MINI)
    assert list(a.tensors) == list(b.tensors)
    for k in a.tensors:
        assert torch.equal(a.tensors[k], b.tensors[k])


def test_init_params_different_seeds_differ():
    a = init_params(0, MINI)
    b = init_params(1, MINI)
    assert any(not torch.equal(a.tensors[k], b.tensors[k]) for k in a.tensors)


def test_init_params_finite_and_near_zero_mean():
    p = init_params(7, DenoiserConfig())
    assert all(torch.isfinite(t).all() for t in p.tensors.values())
    # conv/linear weight matrices only; norm gains are constant-one by design
    weights = torch.cat([t.flatten() for t in p.tensors.values() if t.ndim >= 2])
    # symmetric fan-in init: aggregate mean close to zero relative to spread
    assert abs(weights.mean().item()) < 3 * weights.std().item() / np.sqrt(len(weights))


def _expected_param_count(cfg: DenoiserConfig) -> int:
    # independent layer-by-layer arithmetic for the architecture contract
    ws = [cfg.base_width * (1 if i == 0 else 2) for i in range(cfg.depth)]
    e = cfg.time_dim

    def gn(c):
        return 2 * c

    def conv(cin, cout, k):
        return cin * cout * k * k + cout

    def lin(i, o):
        return i * o + o

    def res(cin, cout):
        p = gn(cin) + conv(cin, cout, 3) + lin(e, 2 * cout) + gn(cout) + conv(cout, cout, 3)
        if cin != cout:
            p += conv(cin, cout, 1)
        return p

    total = lin(cfg.time_dim, e) + lin(e, e) + lin(cfg.cond_dim, e)
    total += conv(2 * cfg.channels + 1, ws[0], 3)
    total += sum(res(w, w) for w in ws)
    total += sum(conv(ws[i], ws[i + 1], 3) for i in range(cfg.depth - 1))
    total += res(ws[-1], ws[-1])
    total += sum(conv(ws[i + 1], ws[i + 1], 3) for i in range(cfg.depth - 1))
    total += sum(res(ws[i + 1] + ws[i], ws[i]) for i in range(cfg.depth - 1))
    total += gn(ws[0]) + conv(ws[0], cfg.channels, 3)
    return total


@pytest.mark.parametrize("cfg", [DenoiserConfig(), MINI])
def test_parameter_count_matches_layer_arithmetic(cfg):
    assert init_params(0, cfg).total_parameters() == _expected_param_count(cfg)


# ---- denoise ----


def test_denoise_deterministic_and_shaped():
    params = init_params(3, MINI)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 8, 8)).astype(np.float32)
    y = rng.normal(size=(8,)).astype(np.float32)
    out1 = denoise(x, 5, y, params, MINI)
    out2 = denoise(x, 5, y, params, MINI)
    assert out1.shape == (3, 8, 8)
    assert np.array_equal(out1, out2)


def test_denoise_rejects_dimension_mismatch():
    params = init_params(3, MINI)
    with pytest.raises(ValueError):
        denoise(np.zeros((7, 16, 16)), 0, np.zeros(8), params, MINI)
    with pytest.raises(ValueError):
        denoise(np.zeros((7, 8, 8)), 0, np.zeros(16), params, MINI)


def test_condition_jacobian_matches_finite_differences():
    # directional derivative wrt the condition vector, double precision
    torch.manual_seed(4)
    net = DenoiserNet(MINI).double()
    x = torch.randn(1, 7, 8, 8, dtype=torch.float64)
    t = torch.tensor([13])
    y = torch.randn(1, 8, dtype=torch.float64)
    delta = torch.randn(1, 8, dtype=torch.float64)
    delta /= delta.norm()

    _, jvp = torch.autograd.functional.jvp(lambda yy: net(x, t, yy), (y,), (delta,))
    h = 1e-5
    with torch.no_grad():
        fd = (net(x, t, y + h * delta) - net(x, t, y - h * delta)) / (2 * h)
    rel = (jvp - fd).norm() / fd.norm()
    assert rel.item() < 1e-3


def test_forward_pass_has_no_hidden_state():
    torch.manual_seed(5)
    net = DenoiserNet(MINI)
    net.eval()
    x = torch.randn(2, 7, 8, 8)
    t = torch.tensor([3, 900])
    y = torch.randn(2, 8)
    with torch.no_grad():
        a = net(x, t, y)
        _ = net(torch.randn(2, 7, 8, 8), t, y)  # interleaved unrelated call
        b = net(x, t, y)
    assert torch.equal(a, b)


def test_condition_changes_output():
    params = init_params(6, MINI)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(7, 8, 8)).astype(np.float32)
    out_a = denoise(x, 10, np.zeros(8, dtype=np.float32), params, MINI)
    out_b = denoise(x, 10, np.ones(8, dtype=np.float32), params, MINI)
    assert not np.allclose(out_a, out_b)


# ---- config & embedding types ----


def test_config_rejects_indivisible_image_size():
    with pytest.raises(ValueError):
        DenoiserConfig(image_size=12, depth=4)


def test_condition_embedding_validation():
    with pytest.raises(ValueError):
        ConditionEmbedding(np.zeros(4), np.zeros(8), np.zeros(8))
    with pytest.raises(ValueError):
        ConditionEmbedding(np.full(8, np.nan), np.zeros(8), np.zeros(8))
    emb = ConditionEmbedding.neutral(64)
    assert emb.dim == 64
    assert np.all(emb.y_null == 0)
