"""Dual-intent diffusion inpainting at desk scale.

A tiny pixel-space denoiser trained with two directly optimized condition
embeddings (creation, removal) and an inference pipeline that applies
spatially varying classifier-free guidance, so different pixels of one image
receive different intents in a single pass.
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .model import ConditionEmbedding, DenoiserConfig, DenoiserNet, DenoiserParams
from .pipeline import (
    InpaintRequest,
    OracleReport,
    composite,
    detect_objects,
    eval_creation,
    eval_mixed,
    eval_removal,
    inpaint,
)
from .scenes import SceneConfig, SceneSample, TrainExample, generate_scene
from .schedule import (
    GuidanceConfig,
    NoiseSchedule,
    TernaryIntentMask,
    build_schedule,
    cfg_scalar,
    cfg_spatial,
    downsample_ternary,
)
from .training import TrainConfig, train_stage1, train_stage2
from .wire import decode_intent, encode_intent

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConditionEmbedding",
    "DenoiserConfig",
    "DenoiserNet",
    "DenoiserParams",
    "GuidanceConfig",
    "InpaintRequest",
    "NoiseSchedule",
    "OracleReport",
    "SceneConfig",
    "SceneSample",
    "TernaryIntentMask",
    "TrainConfig",
    "TrainExample",
    "build_schedule",
    "cfg_scalar",
    "cfg_spatial",
    "composite",
    "decode_intent",
    "detect_objects",
    "downsample_ternary",
    "encode_intent",
    "eval_creation",
    "eval_mixed",
    "eval_removal",
    "generate_scene",
    "inpaint",
    "load_checkpoint",
    "save_checkpoint",
    "train_stage1",
    "train_stage2",
]
