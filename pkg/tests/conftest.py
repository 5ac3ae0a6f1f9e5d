"""Shared fixtures: the reference training run, cached across sessions."""

import time
from pathlib import Path

import numpy as np
import pytest

from intentpaint.checkpoint import load_checkpoint, save_checkpoint
from intentpaint.scenes import DatasetRecord, generate_scene
from intentpaint.schedule import build_schedule
from intentpaint.training import TrainConfig, train_stage1, train_stage2

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "reference"

REFERENCE_SEED = 0
REFERENCE_SCENES = 2000
STAGE1_STEPS = 10_000
STAGE2_STEPS = 3_000


def reference_dataset():
    return [
        DatasetRecord(
            scene=generate_scene(s), mode="removal", inpaint_mask=np.ones((32, 32)), seed=s
        )
        for s in range(REFERENCE_SCENES)
    ]


def train_reference():
    """The reference recipe: 32x32, stage-1 10000 + stage-2 3000 steps, seed 0."""
    CACHE.mkdir(parents=True, exist_ok=True)
    sched = build_schedule(1000)
    dataset = reference_dataset()
    start = time.time()
    stage1 = train_stage1(
        dataset,
        TrainConfig(
            stage=1, steps=STAGE1_STEPS, seed=REFERENCE_SEED, out_dir=str(CACHE / "stage1")
        ),
        sched=sched,
    )
    stage2 = train_stage2(
        stage1,
        dataset,
        TrainConfig(
            stage=2, steps=STAGE2_STEPS, seed=REFERENCE_SEED, out_dir=str(CACHE / "stage2_run")
        ),
        sched=sched,
    )
    save_checkpoint(stage2, CACHE / "stage2.ckpt")
    print(f"reference training took {(time.time() - start) / 60:.1f} min")
    return stage2


@pytest.fixture(scope="session")
def reference_checkpoint():
    final = CACHE / "stage2.ckpt"
    if final.exists():
        return load_checkpoint(final)
    return train_reference()
