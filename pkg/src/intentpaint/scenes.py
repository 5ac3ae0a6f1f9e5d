"""Procedural training/evaluation scenes with exact instance masks.

Scenes are 1-4 flat-colored geometric objects (circle, square, triangle) on a
textured background. Object colors come from a fixed 8-color vivid palette and
background textures blend colors from a disjoint muted palette, so a
nearest-palette classifier can act as an exact object detector downstream.

Mask policies:
  * removal masks: random strokes/rectangles that strictly avoid foreground
    (instances dilated by 1 px are excluded),
  * creation masks: dilated unions of whole instances,
  * naive masks: the same stroke process with no foreground exclusion
    (the ablation baseline).

All generators are pure functions of (seed, config).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

OBJECT_PALETTE = np.array(
    [
        (0.95, 0.10, 0.10),  # red
        (0.10, 0.80, 0.10),  # green
        (0.10, 0.20, 0.95),  # blue
        (0.95, 0.85, 0.10),  # yellow
        (0.90, 0.15, 0.90),  # magenta
        (0.10, 0.85, 0.90),  # cyan
        (0.95, 0.55, 0.05),  # orange
        (0.60, 0.10, 0.90),  # purple
    ],
    dtype=np.float64,
)

BACKGROUND_PALETTE = np.array(
    [
        (0.45, 0.45, 0.45),
        (0.55, 0.50, 0.45),
        (0.45, 0.50, 0.55),
        (0.50, 0.55, 0.45),
        (0.60, 0.55, 0.55),
        (0.40, 0.45, 0.50),
        (0.55, 0.60, 0.55),
        (0.50, 0.45, 0.55),
    ],
    dtype=np.float64,
)

BACKGROUND_KINDS = (
    "gradient_h",
    "gradient_v",
    "gradient_d",
    "stripes_h",
    "stripes_v",
    "stripes_d",
    "blotch_coarse",
    "blotch_fine",
)

SHAPE_KINDS = ("circle", "square", "triangle")

MIN_INSTANCE_AREA = 16

MANIFEST_VERSION = 1


class MaskGenerationError(RuntimeError):
    """A mask generator could not satisfy its coverage constraints."""


class DatasetError(ValueError):
    """A dataset directory is missing, inconsistent, or corrupt."""


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 32
    min_objects: int = 1
    max_objects: int = 4
    max_object_fraction: float = 0.35  # cap on total instance area, keeps background roomy
    pixel_noise: float = 0.015
    creation_margin: tuple[int, int] = (2, 6)


@dataclass
class SceneSample:
    """Image plus exact per-instance masks and palette metadata."""

    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    instances: list[tuple[np.ndarray, str, int]]  # (binary mask, shape kind, color index)
    background_kind: str

    def instance_union(self) -> np.ndarray:
        h, w = self.image.shape[1:]
        union = np.zeros((h, w), dtype=bool)
        for mask, _, _ in self.instances:
            union |= mask.astype(bool)
        return union


@dataclass(frozen=True)
class TrainExample:
    image: np.ndarray
    inpaint_mask: np.ndarray
    mode: str  # "creation" | "removal"

    def __post_init__(self):
        if self.mode not in ("creation", "removal"):
            raise ValueError(f"mode must be 'creation' or 'removal', got {self.mode!r}")


# ---- background textures ----


def _texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    ca, cb = BACKGROUND_PALETTE[rng.choice(len(BACKGROUND_PALETTE), size=2, replace=False)]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    if kind == "gradient_h":
        t = xx
    elif kind == "gradient_v":
        t = yy
    elif kind == "gradient_d":
        t = (xx + yy) / 2.0
    elif kind.startswith("stripes"):
        period = int(rng.integers(3, 8))
        axis = {"stripes_h": yy, "stripes_v": xx, "stripes_d": (xx + yy) / 2.0}[kind]
        t = ((axis * (size - 1) // period) % 2).astype(np.float64)
    elif kind.startswith("blotch"):
        cells = 4 if kind == "blotch_coarse" else 8
        coarse = rng.uniform(0.0, 1.0, size=(cells, cells))
        t = np.asarray(
            Image.fromarray((coarse * 255).astype(np.uint8)).resize((size, size), Image.BILINEAR),
            dtype=np.float64,
        ) / 255.0
    else:
        raise ValueError(f"unknown background kind {kind!r}")
    return t[None] * cb[:, None, None] + (1.0 - t[None]) * ca[:, None, None]


# ---- shape rasterization ----


def _raster_shape(kind: str, cy: float, cx: float, r: float, theta: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if kind == "triangle":
        angles = theta + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
        vy = cy + r * np.sin(angles)
        vx = cx + r * np.cos(angles)
        inside = np.ones((size, size), dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            # pixel is inside iff it lies on the centroid side of every edge
            cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
            inside &= cross >= 0
        return inside
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSample:
    """Compose a textured background with 1-4 non-overlapping palette objects."""
    rng = np.random.default_rng(seed)
    size = config.image_size
    kind = BACKGROUND_KINDS[rng.integers(len(BACKGROUND_KINDS))]
    image = _texture(kind, size, rng)
    image += rng.normal(0.0, config.pixel_noise, size=image.shape)

    n_target = int(rng.integers(config.min_objects, config.max_objects + 1))
    area_budget = config.max_object_fraction * size * size
    occupied = np.zeros((size, size), dtype=bool)
    instances: list[tuple[np.ndarray, str, int]] = []
    used_area = 0

    for _ in range(n_target):
        placed = False
        for _attempt in range(40):
            shape = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
            r = {
                "circle": rng.uniform(2.5, 5.5),
                "square": rng.uniform(2.0, 5.0),
                "triangle": rng.uniform(4.0, 6.5),
            }[shape]
            margin = int(np.ceil(r)) + 1
            if 2 * margin >= size:
                continue
            cy = rng.uniform(margin, size - 1 - margin)
            cx = rng.uniform(margin, size - 1 - margin)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            mask = _raster_shape(shape, cy, cx, r, theta, size)
            area = int(mask.sum())
            if area < MIN_INSTANCE_AREA or used_area + area > area_budget:
                continue
            # keep a 2 px gap between instances so they never merge downstream
            grown = ndimage.binary_dilation(mask, np.ones((3, 3)), iterations=2)
            if (grown & occupied).any():
                continue
            color_index = int(rng.integers(len(OBJECT_PALETTE)))
            color = OBJECT_PALETTE[color_index]
            image[:, mask] = color[:, None] + rng.normal(
                0.0, config.pixel_noise, size=(3, area)
            )
            occupied |= mask
            instances.append((mask.astype(np.uint8), shape, color_index))
            used_area += area
            placed = True
            break
        if not placed:
            break  # reduced object count

    return SceneSample(
        image=np.clip(image, 0.0, 1.0).astype(np.float32),
        instances=instances,
        background_kind=kind,
    )


# ---- mask generators ----


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _strokes_and_rects(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random mask: thick strokes (2-6 waypoints, width 3-8), 0-2 rectangles,
    and 0-2 stamped compact shapes.

    The stamps matter: they put object-sized compact blobs of every silhouette
    in the support of every mask policy, so a blob-shaped mask over background
    carries no intent information by itself and the condition embedding must
    decide what fills it.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    # ~30% of masks are stamped-shape-only, so a solitary compact blob is a
    # shape both policies produce, not a creation tell
    stamps_only = rng.random() < 0.3
    if not stamps_only:
        for _ in range(int(rng.integers(1, 3))):
            n_pts = int(rng.integers(2, 7))
            pts = rng.uniform(0, size - 1, size=(n_pts, 2))
            width = float(rng.uniform(3.0, 8.0))
            for p0, p1 in zip(pts[:-1], pts[1:]):
                mask |= _segment_distance(yy, xx, p0, p1) <= width / 2.0
        for _ in range(int(rng.integers(0, 3))):
            h = int(rng.integers(4, 13))
            w = int(rng.integers(4, 13))
            y0 = int(rng.integers(0, max(size - h, 1)))
            x0 = int(rng.integers(0, max(size - w, 1)))
            mask[y0 : y0 + h, x0 : x0 + w] = True
    n_stamps = int(rng.integers(1, 3)) if stamps_only else int(rng.integers(0, 3))
    for _ in range(n_stamps):
        kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
        cy = rng.uniform(0, size - 1)
        cx = rng.uniform(0, size - 1)
        r = float(rng.uniform(3.5, 9.0))
        mask |= _raster_shape(kind, cy, cx, r, float(rng.uniform(0, 2 * np.pi)), size)
    return mask


def _coverage(mask: np.ndarray) -> float:
    return float(mask.mean())


def gen_removal_mask(scene: SceneSample, seed: int, max_tries: int = 40) -> np.ndarray:
    """Random mask over background only: strokes/rects minus dilated foreground.

    The result covers 5-40% of the image and never touches a pixel 4-adjacent
    to an instance.
    """
    rng = np.random.default_rng(seed)
    size = scene.image.shape[1]
    forbidden = ndimage.binary_dilation(scene.instance_union(), np.ones((3, 3)))
    for _ in range(max_tries):
        mask = _strokes_and_rects(rng, size) & ~forbidden
        if mask.any() and 0.05 <= _coverage(mask) <= 0.40:
            return mask.astype(np.uint8)
    raise MaskGenerationError(
        f"no removal mask with 5-40% coverage after {max_tries} tries (seed {seed}); "
        "regenerate with a new seed"
    )


def gen_creation_mask(
    scene: SceneSample,
    seed: int,
    margin: tuple[int, int] | None = None,
    extras: bool = True,
) -> np.ndarray:
    """Dilated union of a random nonempty subset of instances.

    With extras on (the training policy), random blobs and strokes are
    unioned in so the mask silhouette does not give away the object outline;
    the fill decision must then come from the condition, not the shape.
    Every foreground object the mask touches is contained in full: instances
    partially swallowed are promoted into the selection.
    """
    if not scene.instances:
        raise ValueError("creation mask needs a scene with at least one instance")
    rng = np.random.default_rng(seed)
    lo, hi = margin if margin is not None else (2, 6)
    k = int(rng.integers(1, len(scene.instances) + 1))
    chosen = set(rng.choice(len(scene.instances), size=k, replace=False).tolist())
    grow = int(rng.integers(lo, hi + 1)) if hi > lo else lo

    size = scene.image.shape[1]
    mask = np.zeros(scene.image.shape[1:], dtype=bool)
    for i in chosen:
        mask |= scene.instances[i][0].astype(bool)
    if grow > 0:
        mask = ndimage.binary_dilation(mask, np.ones((3, 3)), iterations=grow)
        if extras:
            if rng.random() < 0.3:
                ys, xs = np.nonzero(mask)
                cy = float(ys[rng.integers(len(ys))])
                cx = float(xs[rng.integers(len(xs))])
                mask |= _raster_shape("circle", cy, cx, float(rng.uniform(2.0, 4.0)), 0.0, size)
            if rng.random() < 0.5:
                mask |= _strokes_and_rects(rng, size)
        # the union may have clipped a neighboring object: contain it fully
        changed = True
        while changed:
            changed = False
            for inst, _, _ in scene.instances:
                inst = inst.astype(bool)
                if (mask & inst).any() and not (inst <= mask).all():
                    mask |= inst
                    changed = True
    return mask.astype(np.uint8)


def gen_naive_mask(scene: SceneSample, seed: int, max_tries: int = 40) -> np.ndarray:
    """The removal stroke process without foreground exclusion (ablation baseline)."""
    rng = np.random.default_rng(seed)
    size = scene.image.shape[1]
    for _ in range(max_tries):
        mask = _strokes_and_rects(rng, size)
        if 0.05 <= _coverage(mask) <= 0.40:
            return mask.astype(np.uint8)
    raise MaskGenerationError(
        f"no naive mask with 5-40% coverage after {max_tries} tries (seed {seed})"
    )


def gen_object_shaped_mask(scene: SceneSample, seed: int, max_tries: int = 120) -> np.ndarray:
    """An object-shaped mask placed entirely over background (for creation eval).

    Sized like a creation region in use: an object footprint plus margin
    (scales with the image), so the model has room to place an object with
    the margins it was trained on.
    """
    rng = np.random.default_rng(seed)
    size = scene.image.shape[1]
    forbidden = ndimage.binary_dilation(scene.instance_union(), np.ones((3, 3)))
    min_r = {"circle": 2.7, "square": 2.0, "triangle": 4.0}
    r_top = max(4.5, 0.235 * size)  # ~7.5 at 32 px
    r_floor = max(3.6, 0.125 * size)
    min_area = MIN_INSTANCE_AREA if size < 24 else 40
    for attempt in range(max_tries):
        r_max = max(r_floor, r_top - 4.0 * attempt / max_tries)  # shrink when crowded
        allowed = [s for s in SHAPE_KINDS if min_r[s] + 0.3 < r_max]
        shape = allowed[rng.integers(len(allowed))]
        r = float(rng.uniform(min(min_r[shape] + 1.5, r_max - 0.3), r_max))
        # the shape may clip at the border; instances never sit there
        cy = rng.uniform(1.0, size - 2.0)
        cx = rng.uniform(1.0, size - 2.0)
        mask = _raster_shape(shape, cy, cx, r, float(rng.uniform(0, 2 * np.pi)), size)
        if mask.sum() >= min_area and not (mask & forbidden).any():
            return mask.astype(np.uint8)
    raise MaskGenerationError(
        f"no background region fits an object-shaped mask after {max_tries} tries (seed {seed})"
    )


def make_train_example(scene: SceneSample, mode: str, seed: int) -> TrainExample:
    """TrainExample with a policy-conforming mask for the requested mode."""
    if mode == "creation":
        mask = gen_creation_mask(scene, seed)
    elif mode == "removal":
        mask = gen_removal_mask(scene, seed)
    else:
        raise ValueError(f"mode must be 'creation' or 'removal', got {mode!r}")
    return TrainExample(image=scene.image, inpaint_mask=mask, mode=mode)


# ---- dataset serialization ----


@dataclass
class DatasetRecord:
    scene: SceneSample
    mode: str
    inpaint_mask: np.ndarray
    seed: int


def _save_png(path: Path, array: np.ndarray) -> None:
    if array.ndim == 3:  # (3, H, W) float in [0, 1]
        data = np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(data, mode="RGB").save(path)
    else:  # binary mask
        Image.fromarray((array.astype(np.uint8) * 255), mode="L").save(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(records: list[DatasetRecord], path: str | Path) -> None:
    """Write images, instance masks, inpaint masks and a checksummed manifest."""
    root = Path(path)
    for sub in ("images", "instances", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    for idx, rec in enumerate(records):
        sid = f"{idx:06d}"
        files = {}
        image_rel = f"images/{sid}.png"
        _save_png(root / image_rel, rec.scene.image)
        files[image_rel] = _sha256(root / image_rel)
        mask_rel = f"masks/{sid}.png"
        _save_png(root / mask_rel, rec.inpaint_mask)
        files[mask_rel] = _sha256(root / mask_rel)
        instances = []
        for k, (mask, shape, color_index) in enumerate(rec.scene.instances):
            inst_rel = f"instances/{sid}_{k}.png"
            _save_png(root / inst_rel, mask)
            files[inst_rel] = _sha256(root / inst_rel)
            instances.append({"path": inst_rel, "shape": shape, "color_index": color_index})
        entries.append(
            {
                "id": sid,
                "image": image_rel,
                "mask": mask_rel,
                "mode": rec.mode,
                "seed": rec.seed,
                "background_kind": rec.scene.background_kind,
                "instances": instances,
                "checksums": files,
            }
        )

    manifest = {
        "format_version": MANIFEST_VERSION,
        "object_palette": OBJECT_PALETTE.tolist(),
        "background_palette": BACKGROUND_PALETTE.tolist(),
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return data.transpose(2, 0, 1)


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        data = np.asarray(im.convert("L"))
    return (data > 127).astype(np.uint8)


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    """Read a dataset directory back, verifying the manifest and checksums."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest.json is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest format_version {version!r}")

    records = []
    for entry in manifest.get("samples", []):
        sid = entry.get("id", "<missing id>")
        try:
            for rel, expected in entry["checksums"].items():
                target = root / rel
                if not target.exists():
                    raise DatasetError(f"sample {sid}: missing file {rel}")
                if _sha256(target) != expected:
                    raise DatasetError(f"sample {sid}: checksum mismatch for {rel}")
            image = _load_image(root / entry["image"])
            mask = _load_mask(root / entry["mask"])
            instances = [
                (_load_mask(root / inst["path"]), inst["shape"], int(inst["color_index"]))
                for inst in entry["instances"]
            ]
        except DatasetError:
            raise
        except (KeyError, OSError, TypeError, ValueError) as exc:
            raise DatasetError(f"sample {sid}: malformed entry ({exc})") from exc
        records.append(
            DatasetRecord(
                scene=SceneSample(
                    image=image, instances=instances, background_kind=entry["background_kind"]
                ),
                mode=entry["mode"],
                inpaint_mask=mask,
                seed=int(entry["seed"]),
            )
        )
    return records
