"""End-to-end guided inpainting and the synthetic-scene oracle evaluator.

One inference pass serves every intent in the request: at each sampling step
the denoiser runs twice (creation condition, removal condition) and the two
predictions are blended per pixel by the ternary intent mask. Pixels outside
the derived inpaint mask are re-synchronized to the forward-noised original
after every step and restored exactly by the final composite.

Evaluation replaces perceptual metrics with an exact oracle: scenes use
disjoint object/background palettes, so nearest-palette classification plus
connected components is a perfect object detector on this corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from dataclasses import asdict as dataclass_asdict

import numpy as np
import torch
from scipy import ndimage

from .checkpoint import Checkpoint
from .model import DenoiserNet, assemble_input
from .scenes import (
    BACKGROUND_PALETTE,
    OBJECT_PALETTE,
    MaskGenerationError,
    SceneConfig,
    SceneSample,
    gen_creation_mask,
    gen_object_shaped_mask,
    generate_scene,
)
from .schedule import (
    GuidanceConfig,
    NoiseSchedule,
    TernaryIntentMask,
    build_schedule,
    cfg_spatial,
    ddim_step,
    ddpm_step,
    forward_noise,
)

MIN_DETECTION_AREA = 12
DETECTION_IOU = 0.8
REMOVAL_MAX_OBJECT_FRACTION = 0.10
CREATION_MIN_RATE = 0.5
MIXED_REMOVAL_MAX_OBJECT_FRACTION = 0.15


@dataclass(frozen=True)
class InpaintRequest:
    image: np.ndarray  # (C, H, W) in [0, 1]
    intent: TernaryIntentMask
    guidance: GuidanceConfig

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3:
            raise ValueError(f"image must be (C, H, W), got shape {img.shape}")
        if img.shape[1:] != (self.intent.height, self.intent.width):
            raise ValueError(
                f"image dims {img.shape[1:]} != intent dims "
                f"{(self.intent.height, self.intent.width)}"
            )
        if not (self.intent.values != 0).any():
            raise ValueError("intent mask has no nonzero pixel; nothing to inpaint")


@dataclass(frozen=True)
class InpaintStats:
    denoiser_evals: int
    steps: int


@dataclass(frozen=True)
class RegionMetrics:
    object_pixel_fraction: float
    detected_objects: float
    creation_rate: float
    background_color_distance: float


@dataclass(frozen=True)
class OracleReport:
    samples: int
    w: float
    creation: RegionMetrics | None = None
    removal: RegionMetrics | None = None

    def to_json(self) -> str:
        return json.dumps(dataclass_asdict(self), indent=2, sort_keys=True)


def _sampling_timesteps(T: int, steps: int) -> list[int]:
    # floor spacing keeps the indices distinct for any steps <= T
    return [int(k * T // steps) for k in range(steps - 1, -1, -1)]


def _inpaint_batch(
    images: np.ndarray,
    intent_values: np.ndarray,
    guidance: GuidanceConfig,
    ckpt: Checkpoint,
    sched: NoiseSchedule,
) -> tuple[np.ndarray, InpaintStats]:
    """Shared batched core: images (N,C,H,W) in [0,1], intents (N,H,W) ternary."""
    guidance.validate_against(sched)
    n, c, h, w = images.shape
    size = ckpt.config.image_size
    if (h, w) != (size, size) or c != ckpt.config.channels:
        raise ValueError(
            f"image shape {(c, h, w)} incompatible with checkpoint model "
            f"({ckpt.config.channels}, {size}, {size})"
        )

    net = DenoiserNet(ckpt.config)
    net.load_denoiser_params(ckpt.params)
    net.eval()
    y_c = torch.from_numpy(np.broadcast_to(ckpt.embeddings.y_c, (n, ckpt.config.cond_dim)).copy())
    y_r = torch.from_numpy(np.broadcast_to(ckpt.embeddings.y_r, (n, ckpt.config.cond_dim)).copy())

    rng = np.random.default_rng(guidance.seed)
    x0 = images.astype(np.float64) * 2.0 - 1.0
    inpaint_mask = (intent_values != 0).astype(np.float64)  # (N, H, W)
    mask3 = inpaint_mask[:, None]  # broadcast over channels
    mvals = intent_values[:, None].astype(np.float64)  # (N, 1, H, W)

    timesteps = _sampling_timesteps(sched.T, guidance.steps)
    z = rng.standard_normal((n, c, h, w))
    evals = 0
    with torch.no_grad():
        for i, t in enumerate(timesteps):
            t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else -1
            x_in = assemble_input(z, inpaint_mask, x0).astype(np.float32)
            t_batch = torch.full((n,), t, dtype=torch.long)
            eps_c = net(torch.from_numpy(x_in), t_batch, y_c.float()).numpy().astype(np.float64)
            eps_r = net(torch.from_numpy(x_in), t_batch, y_r.float()).numpy().astype(np.float64)
            evals += 2
            eps = cfg_spatial(eps_c, eps_r, mvals, guidance.w)

            if guidance.sampler == "ddim":
                z = ddim_step(z, eps, t, t_prev, sched)
            else:
                z = ddpm_step(z, eps, t, sched, rng.standard_normal(z.shape))

            # keep known pixels on the forward-noised trajectory of the original
            if t_prev >= 0:
                known = forward_noise(x0, t_prev, rng.standard_normal(z.shape), sched)
            else:
                known = x0
            z = np.where(mask3 > 0, z, known)

    generated = np.clip((z + 1.0) / 2.0, 0.0, 1.0)
    out = composite(images.astype(np.float64), generated, inpaint_mask)
    return out.astype(np.float32), InpaintStats(denoiser_evals=evals, steps=len(timesteps))


def inpaint(req: InpaintRequest, ckpt: Checkpoint, sched: NoiseSchedule) -> np.ndarray:
    """Inpaint one image under its ternary intent mask; see inpaint_with_stats."""
    return inpaint_with_stats(req, ckpt, sched)[0]


def inpaint_with_stats(
    req: InpaintRequest, ckpt: Checkpoint, sched: NoiseSchedule
) -> tuple[np.ndarray, InpaintStats]:
    images = np.asarray(req.image, dtype=np.float64)[None]
    out, stats = _inpaint_batch(images, req.intent.values[None], req.guidance, ckpt, sched)
    return out[0], stats


def composite(original: np.ndarray, generated: np.ndarray, inpaint_mask: np.ndarray) -> np.ndarray:
    """mask * generated + (1 - mask) * original, exact outside the mask."""
    original = np.asarray(original)
    generated = np.asarray(generated)
    mask = np.asarray(inpaint_mask)
    if original.shape != generated.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {generated.shape}")
    if mask.shape != original.shape[-2:] and mask.shape != original.shape[:-3] + original.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} incompatible with {original.shape}")
    m = np.broadcast_to((mask > 0)[..., None, :, :], original.shape)
    return np.where(m, generated, original)


def detect_objects(
    image: np.ndarray, object_palette: np.ndarray | None = None
) -> list[tuple[np.ndarray, int]]:
    """Exact detector for the synthetic corpus.

    Classifies each pixel to the nearest palette color, keeps object-labeled
    pixels, groups them into 4-connected components, and drops components
    smaller than MIN_DETECTION_AREA pixels.
    """
    palette = OBJECT_PALETTE if object_palette is None else np.asarray(object_palette)
    colors = np.concatenate([palette, BACKGROUND_PALETTE], axis=0)
    pixels = np.asarray(image, dtype=np.float64).transpose(1, 2, 0)  # (H, W, 3)
    dists = np.linalg.norm(pixels[:, :, None, :] - colors[None, None], axis=-1)
    nearest = dists.argmin(axis=-1)
    is_object = nearest < len(palette)

    labels, count = ndimage.label(is_object, structure=ndimage.generate_binary_structure(2, 1))
    detections = []
    for idx in range(1, count + 1):
        component = labels == idx
        if component.sum() < MIN_DETECTION_AREA:
            continue
        color_votes = nearest[component]
        color_index = int(np.bincount(color_votes, minlength=len(palette)).argmax())
        detections.append((component.astype(np.uint8), color_index))
    return detections


# ---- evaluation sets ----


@dataclass(frozen=True)
class EvalSample:
    scene: SceneSample
    creation_region: np.ndarray | None
    removal_region: np.ndarray | None

    def intent(self) -> TernaryIntentMask:
        shape = self.scene.image.shape[1:]
        values = np.zeros(shape, dtype=np.int8)
        if self.removal_region is not None:
            values[self.removal_region.astype(bool)] = -1
        if self.creation_region is not None:
            overlap = (
                self.removal_region is not None
                and (self.creation_region.astype(bool) & self.removal_region.astype(bool)).any()
            )
            if overlap:
                raise ValueError("creation and removal regions overlap")
            values[self.creation_region.astype(bool)] = 1
        return TernaryIntentMask(values)


def _scene_for(
    i: int,
    attempt: int,
    seed: int,
    scene_config: SceneConfig,
    scenes: list[SceneSample] | None,
) -> SceneSample:
    # attempt 0 uses the provided corpus when there is one; later attempts
    # substitute freshly generated, simpler scenes for crowded ones
    if scenes and attempt == 0:
        return scenes[i % len(scenes)]
    cfg = scene_config if attempt == 0 else replace(scene_config, max_objects=1)
    return generate_scene(seed + i + 1_000_000 * attempt, cfg)


def build_removal_eval_set(
    n: int,
    seed: int,
    scene_config: SceneConfig = SceneConfig(),
    scenes: list[SceneSample] | None = None,
) -> list[EvalSample]:
    """Scenes with creation-style masks over real objects: ground truth removal."""
    samples = []
    for i in range(n):
        for attempt in range(30):
            scene = _scene_for(i, attempt, seed, scene_config, scenes)
            if scene.instances:
                break
        mask = gen_creation_mask(scene, seed + 10_000 + i, extras=False)
        samples.append(EvalSample(scene=scene, creation_region=None, removal_region=mask))
    return samples


def build_creation_eval_set(
    n: int,
    seed: int,
    scene_config: SceneConfig = SceneConfig(),
    scenes: list[SceneSample] | None = None,
) -> list[EvalSample]:
    """Scenes with object-shaped masks over pure background: room to create."""
    samples = []
    for i in range(n):
        mask = None
        for attempt in range(30):  # skip scenes too crowded to host a new object
            scene = _scene_for(i, attempt, seed, scene_config, scenes)
            try:
                mask = gen_object_shaped_mask(scene, seed + 20_000 + i)
                break
            except MaskGenerationError:
                continue
        if mask is None:
            raise RuntimeError(f"could not place a creation eval mask for sample {i}")
        samples.append(EvalSample(scene=scene, creation_region=mask, removal_region=None))
    return samples


def build_mixed_eval_set(
    n: int,
    seed: int,
    scene_config: SceneConfig = SceneConfig(),
    scenes: list[SceneSample] | None = None,
) -> list[EvalSample]:
    """Two disjoint regions per sample: one creation (+1), one removal (-1)."""

    def _try_pair(scene, sample_seed, margin):
        removal = gen_creation_mask(scene, sample_seed, margin=margin, extras=False)
        for k in range(50):
            try:
                candidate = gen_object_shaped_mask(scene, sample_seed + 10_000 + 1_000_003 * k)
            except MaskGenerationError:
                return removal, None
            if not (candidate.astype(bool) & removal.astype(bool)).any():
                return removal, candidate
        return removal, None

    samples = []
    for i in range(n):
        found = None
        for attempt in range(30):
            scene = _scene_for(i, attempt, seed, scene_config, scenes)
            if not scene.instances:
                continue
            margin = None if attempt == 0 else (1, 2)
            try:
                removal, creation = _try_pair(scene, seed + 30_000 + i, margin=margin)
            except MaskGenerationError:
                continue
            if creation is not None:
                found = EvalSample(scene=scene, creation_region=creation, removal_region=removal)
                break
        if found is None:
            raise RuntimeError(f"could not place disjoint mixed regions for sample {i}")
        samples.append(found)
    return samples


# ---- region metrics ----


def _region_metrics(
    outputs: np.ndarray, samples: list[EvalSample], regions: list[np.ndarray]
) -> RegionMetrics:
    fractions, counts, created, bg_dists = [], [], [], []
    for out, sample, region in zip(outputs, samples, regions):
        region = region.astype(bool)
        detections = detect_objects(out)
        inside = 0
        object_pixels = np.zeros(region.shape, dtype=bool)
        for component, _ in detections:
            component = component.astype(bool)
            object_pixels |= component
            if (component & region).sum() > 0.5 * component.sum():
                inside += 1
        fractions.append(float((object_pixels & region).sum() / max(region.sum(), 1)))
        counts.append(float(inside))
        created.append(1.0 if inside > 0 else 0.0)

        ring = ndimage.binary_dilation(region, np.ones((3, 3)), iterations=3) & ~region
        ring &= ~sample.scene.instance_union()
        if ring.any():
            fill_mean = out[:, region].mean(axis=1)
            ring_mean = sample.scene.image[:, ring].mean(axis=1)
            bg_dists.append(float(np.linalg.norm(fill_mean - ring_mean)))
    return RegionMetrics(
        object_pixel_fraction=float(np.mean(fractions)),
        detected_objects=float(np.mean(counts)),
        creation_rate=float(np.mean(created)),
        background_color_distance=float(np.mean(bg_dists)) if bg_dists else 0.0,
    )


def _run_eval(
    ckpt: Checkpoint,
    eval_set: list[EvalSample],
    w: float,
    sched: NoiseSchedule,
    guidance: GuidanceConfig,
) -> np.ndarray:
    if not eval_set:
        raise ValueError("empty eval set")
    images = np.stack([s.scene.image for s in eval_set]).astype(np.float64)
    intents = np.stack([s.intent().values for s in eval_set])
    out, _ = _inpaint_batch(images, intents, guidance, ckpt, sched)
    return out


def eval_removal(
    model: Checkpoint,
    eval_set: list[EvalSample],
    w: float = 2.0,
    *,
    sched: NoiseSchedule | None = None,
    guidance: GuidanceConfig | None = None,
) -> OracleReport:
    """All-removal intent over object-bearing masks; low object fraction is good."""
    sched = sched or build_schedule(1000)
    guidance = guidance or GuidanceConfig(w=w)
    outputs = _run_eval(model, eval_set, w, sched, guidance)
    regions = [s.removal_region for s in eval_set]
    if any(r is None for r in regions):
        raise ValueError("removal eval set must provide removal regions")
    return OracleReport(
        samples=len(eval_set),
        w=guidance.w,
        removal=_region_metrics(outputs, eval_set, regions),
    )


def eval_creation(
    model: Checkpoint,
    eval_set: list[EvalSample],
    w: float = 2.0,
    *,
    sched: NoiseSchedule | None = None,
    guidance: GuidanceConfig | None = None,
) -> OracleReport:
    """All-creation intent over background masks; high creation rate is good."""
    sched = sched or build_schedule(1000)
    guidance = guidance or GuidanceConfig(w=w)
    outputs = _run_eval(model, eval_set, w, sched, guidance)
    regions = [s.creation_region for s in eval_set]
    if any(r is None for r in regions):
        raise ValueError("creation eval set must provide creation regions")
    return OracleReport(
        samples=len(eval_set),
        w=guidance.w,
        creation=_region_metrics(outputs, eval_set, regions),
    )


def eval_mixed(
    model: Checkpoint,
    eval_set: list[EvalSample],
    w: float = 2.0,
    *,
    sched: NoiseSchedule | None = None,
    guidance: GuidanceConfig | None = None,
) -> OracleReport:
    """Both intents in one pass per sample; metrics reported per region."""
    sched = sched or build_schedule(1000)
    guidance = guidance or GuidanceConfig(w=w)
    for s in eval_set:
        if s.creation_region is None or s.removal_region is None:
            raise ValueError("mixed eval set needs both regions per sample")
    outputs = _run_eval(model, eval_set, w, sched, guidance)
    return OracleReport(
        samples=len(eval_set),
        w=guidance.w,
        creation=_region_metrics(outputs, eval_set, [s.creation_region for s in eval_set]),
        removal=_region_metrics(outputs, eval_set, [s.removal_region for s in eval_set]),
    )
