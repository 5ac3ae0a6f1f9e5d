"""Tiny conditional UNet denoiser operating in pixel space.

The network predicts the noise added to an image, conditioned on a sinusoidal
timestep embedding and a learned condition vector. Conditioning enters every
residual block as scale-and-shift modulation of the normalized features, which
keeps the gradient path from the loss to the condition vector short.

Input layout for inpainting: [noisy image | binary mask | masked original],
i.e. 2*channels + 1 input planes (see assemble_input).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    channels: int = 3
    base_width: int = 32
    depth: int = 3
    cond_dim: int = 64
    time_dim: int = 64

    def __post_init__(self):
        for name in ("image_size", "channels", "base_width", "depth", "cond_dim", "time_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.image_size % (2 ** (self.depth - 1)) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2^(depth-1) = "
                f"{2 ** (self.depth - 1)}"
            )
        if self.time_dim % 2 != 0:
            raise ValueError("time_dim must be even (paired sin/cos frequencies)")

    @property
    def input_channels(self) -> int:
        return 2 * self.channels + 1

    @property
    def level_widths(self) -> tuple[int, ...]:
        # doubles once then stays flat: base, 2*base, 2*base, ...
        return tuple(self.base_width * (1 if i == 0 else 2) for i in range(self.depth))


@dataclass(frozen=True)
class ConditionEmbedding:
    """Learned condition vectors: creation, removal, and the neutral vector."""

    y_c: np.ndarray
    y_r: np.ndarray
    y_null: np.ndarray

    def __post_init__(self):
        vecs = {"y_c": self.y_c, "y_r": self.y_r, "y_null": self.y_null}
        dims = {name: np.asarray(v).shape for name, v in vecs.items()}
        if len(set(dims.values())) != 1 or len(self.y_c.shape) != 1:
            raise ValueError(f"embedding vectors must share one 1-D shape, got {dims}")
        for name, v in vecs.items():
            v = np.asarray(v)
            if not np.issubdtype(v.dtype, np.floating):
                v = v.astype(np.float32)
            if not np.isfinite(v).all():
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, v)

    @property
    def dim(self) -> int:
        return len(self.y_c)

    @classmethod
    def neutral(cls, cond_dim: int) -> "ConditionEmbedding":
        z = np.zeros(cond_dim, dtype=np.float32)
        return cls(y_c=z.copy(), y_r=z.copy(), y_null=z.copy())


@dataclass(frozen=True)
class DenoiserParams:
    """Named parameter tensors of the denoiser."""

    tensors: "OrderedDict[str, torch.Tensor]"

    def __post_init__(self):
        for name, t in self.tensors.items():
            if not torch.isfinite(t).all():
                raise ValueError(f"parameter {name!r} contains non-finite entries")

    def total_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def clone(self) -> "DenoiserParams":
        return DenoiserParams(OrderedDict((k, v.detach().clone()) for k, v in self.tensors.items()))


def _num_groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Transformer-style sin/cos embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    """Residual block with scale-shift conditioning on the inner normalization."""

    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.film = nn.Linear(emb_dim, 2 * cout)
        self.norm2 = nn.GroupNorm(_num_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.film(emb)[:, :, None, None].chunk(2, dim=1)
        h = F.silu(self.norm2(h) * (1.0 + scale) + shift)
        return self.conv2(h) + self.skip(x)


class DenoiserNet(nn.Module):
    """UNet over `depth` resolutions with per-block conditioning.

    forward(x, t, y): x is (B, 2c+1, S, S), t is (B,) timesteps, y is
    (B, cond_dim); returns the (B, c, S, S) noise prediction.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ws = config.level_widths
        emb = config.time_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_dim, emb), nn.SiLU(), nn.Linear(emb, emb)
        )
        self.cond_proj = nn.Linear(config.cond_dim, emb)

        self.conv_in = nn.Conv2d(config.input_channels, ws[0], 3, padding=1)
        self.down_res = nn.ModuleList(ResBlock(w, w, emb) for w in ws)
        self.downsample = nn.ModuleList(
            nn.Conv2d(ws[i], ws[i + 1], 3, stride=2, padding=1) for i in range(config.depth - 1)
        )
        self.mid = ResBlock(ws[-1], ws[-1], emb)
        self.up_conv = nn.ModuleList(
            nn.Conv2d(ws[i + 1], ws[i + 1], 3, padding=1) for i in range(config.depth - 1)
        )
        self.up_res = nn.ModuleList(
            ResBlock(ws[i + 1] + ws[i], ws[i], emb) for i in range(config.depth - 1)
        )
        self.norm_out = nn.GroupNorm(_num_groups(ws[0]), ws[0])
        self.conv_out = nn.Conv2d(ws[0], config.channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(sinusoidal_embedding(t.to(x.dtype), self.config.time_dim))
        emb = emb + self.cond_proj(y)

        h = self.conv_in(x)
        skips = []
        for i in range(self.config.depth):
            h = self.down_res[i](h, emb)
            if i < self.config.depth - 1:
                skips.append(h)
                h = self.downsample[i](h)
        h = self.mid(h, emb)
        for i in reversed(range(self.config.depth - 1)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.up_conv[i](h)
            h = self.up_res[i](torch.cat([h, skips[i]], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(h)))

    def load_denoiser_params(self, params: DenoiserParams) -> None:
        self.load_state_dict(params.tensors, strict=True)

    def extract_params(self) -> DenoiserParams:
        return DenoiserParams(
            OrderedDict((k, v.detach().clone()) for k, v in self.state_dict().items())
        )


def init_params(seed: int, config: DenoiserConfig) -> DenoiserParams:
    """Seeded, fan-in-scaled initialization; the same seed gives identical tensors."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = DenoiserNet(config)
    return net.extract_params()


def assemble_input(z_t: np.ndarray, inpaint_mask: np.ndarray, original: np.ndarray) -> np.ndarray:
    """Stack the inpainting input planes: [z_t | mask | original * (1 - mask)].

    z_t and original are (..., C, H, W); inpaint_mask is (..., H, W) with
    values in {0, 1} and broadcasts across channels.
    """
    z_t = np.asarray(z_t)
    original = np.asarray(original)
    mask = np.asarray(inpaint_mask)
    if z_t.shape != original.shape:
        raise ValueError(f"z_t shape {z_t.shape} != original shape {original.shape}")
    if mask.shape != z_t.shape[:-3] + z_t.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} incompatible with image shape {z_t.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("inpaint mask must be binary (0/1)")
    m = mask[..., None, :, :].astype(z_t.dtype)
    return np.concatenate([z_t, m, original * (1.0 - m)], axis=-3)


_net_cache: dict = {}


def _cached_net(config: DenoiserConfig, dtype: torch.dtype) -> DenoiserNet:
    key = (config, dtype)
    if key not in _net_cache:
        net = DenoiserNet(config).to(dtype)
        net.eval()
        _net_cache[key] = net
    return _net_cache[key]


def denoise(
    input: np.ndarray | torch.Tensor,
    t: int,
    y: np.ndarray | torch.Tensor,
    params: DenoiserParams,
    config: DenoiserConfig,
) -> np.ndarray:
    """Single-sample noise prediction, shaped (channels, image_size, image_size)."""
    x = torch.as_tensor(np.asarray(input))
    yv = torch.as_tensor(np.asarray(y))
    s = config.image_size
    if x.shape != (config.input_channels, s, s):
        raise ValueError(
            f"input shape {tuple(x.shape)} != expected ({config.input_channels}, {s}, {s})"
        )
    if yv.shape != (config.cond_dim,):
        raise ValueError(f"condition shape {tuple(yv.shape)} != ({config.cond_dim},)")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    dtype = next(iter(params.tensors.values())).dtype
    net = _cached_net(config, dtype)
    net.load_denoiser_params(params)
    with torch.no_grad():
        out = net(x[None].to(dtype), torch.tensor([t]), yv[None].to(dtype))
    return out[0].numpy()
