"""Two-stage optimization of the denoiser and its condition embeddings.

Stage 1 trains only the denoiser on the inpainting task under the neutral
(zero) condition. Stage 2 initializes the creation/removal embeddings from the
neutral vector plus small jitter and briefly co-trains them with the denoiser
on mode-labeled batches; the short stage-2 budget is enforced because long
joint training erodes the embeddings' steering power.

The loss is squared error against the injected noise, averaged over masked
pixels, plus a 0.1-weighted term over unmasked pixels for global coherence.
Runs are deterministic for a fixed seed in single-worker mode: batch
composition, noise draws and embedding jitter all come from one seeded stream.
"""

from __future__ import annotations

import json
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .model import (
    ConditionEmbedding,
    DenoiserConfig,
    DenoiserNet,
    DenoiserParams,
    assemble_input,
    init_params,
)
from .scenes import (
    DatasetRecord,
    MaskGenerationError,
    TrainExample,
    gen_creation_mask,
    gen_removal_mask,
)
from .schedule import NoiseSchedule, build_schedule, forward_noise

UNMASKED_LOSS_WEIGHT = 0.1
EMBEDDING_JITTER = 0.01
STAGE2_MAX_FRACTION = 0.3
DIVERGENCE_LOSS = 1e3
DIVERGENCE_PATIENCE = 100


class TrainingError(RuntimeError):
    """Training diverged or produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    stage: int
    steps: int
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay_factor: float = 0.01
    seed: int = 0
    checkpoint_every: int = 0
    out_dir: str | None = None
    # zero-initialized embeddings need a much faster rate than the UNet to
    # gain steering power within the short stage-2 budget
    embedding_lr: float | None = None  # default: 50 * lr

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.lr_decay_factor <= 1):
            raise ValueError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if self.embedding_lr is not None and self.embedding_lr <= 0:
            raise ValueError(f"embedding_lr must be > 0, got {self.embedding_lr}")

    @property
    def effective_embedding_lr(self) -> float:
        return self.embedding_lr if self.embedding_lr is not None else 50.0 * self.lr


@dataclass
class LossGrads:
    params: "OrderedDict[str, torch.Tensor]"
    y_c: torch.Tensor | None = None
    y_r: torch.Tensor | None = None


def _batch_tensors(examples: list[TrainExample], sched: NoiseSchedule, rng: np.random.Generator):
    """Noised inputs and targets for a batch; all randomness comes from rng."""
    xs, ts, targets, masks = [], [], [], []
    for ex in examples:
        mask = ex.inpaint_mask.astype(np.float32)
        if not mask.any():
            raise ValueError("train example has an empty inpaint mask")
        z0 = ex.image.astype(np.float32) * 2.0 - 1.0  # model space [-1, 1]
        t = int(rng.integers(0, sched.T))
        eps = rng.standard_normal(z0.shape, dtype=np.float32)
        z_t = forward_noise(z0, t, eps, sched).astype(np.float32)
        xs.append(assemble_input(z_t, mask, z0))
        ts.append(t)
        targets.append(eps)
        masks.append(mask)
    return (
        torch.from_numpy(np.stack(xs)),
        torch.tensor(ts, dtype=torch.long),
        torch.from_numpy(np.stack(targets)),
        torch.from_numpy(np.stack(masks))[:, None],  # (B, 1, H, W)
    )


def _weighted_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    err = (pred - target) ** 2
    channels = pred.shape[1]
    masked = (err * mask).sum(dim=(1, 2, 3)) / (mask.sum(dim=(1, 2, 3)) * channels).clamp(min=1)
    inv = 1.0 - mask
    unmasked = (err * inv).sum(dim=(1, 2, 3)) / (inv.sum(dim=(1, 2, 3)) * channels).clamp(min=1)
    return (masked + UNMASKED_LOSS_WEIGHT * unmasked).mean()


def select_condition(emb: ConditionEmbedding, mode: str, stage: int) -> np.ndarray:
    if stage == 1:
        return emb.y_null
    return emb.y_c if mode == "creation" else emb.y_r


def loss_step(
    example: TrainExample,
    params: DenoiserParams,
    emb: ConditionEmbedding,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    config: DenoiserConfig,
    stage: int = 2,
) -> tuple[float, LossGrads]:
    """Single-example loss and gradients w.r.t. params (and embeddings in stage 2).

    Samples t uniformly and the noise from rng, so a freshly seeded rng makes
    the call a deterministic function of (example, params, emb).
    """
    dtype = next(iter(params.tensors.values())).dtype
    net = DenoiserNet(config).to(dtype)
    net.load_denoiser_params(params)
    for p in net.parameters():
        p.requires_grad_(True)

    x, t, target, mask = _batch_tensors([example], sched, rng)
    x, target, mask = x.to(dtype), target.to(dtype), mask.to(dtype)

    y_c = torch.tensor(emb.y_c, dtype=dtype, requires_grad=stage == 2)
    y_r = torch.tensor(emb.y_r, dtype=dtype, requires_grad=stage == 2)
    if stage == 1:
        y = torch.tensor(emb.y_null, dtype=dtype)[None]
    else:
        y = (y_c if example.mode == "creation" else y_r)[None]

    loss = _weighted_mse(net(x, t, y), target, mask)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss on t={t.item()} mode={example.mode}")
    loss.backward()

    grads = LossGrads(
        params=OrderedDict(
            (name, p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in net.named_parameters()
        )
    )
    if stage == 2:
        grads.y_c = y_c.grad.detach().clone() if y_c.grad is not None else torch.zeros_like(y_c)
        grads.y_r = y_r.grad.detach().clone() if y_r.grad is not None else torch.zeros_like(y_r)
    return float(loss.item()), grads


def _mask_for(scene, mode: str, seed: int) -> np.ndarray:
    last_error = None
    for k in range(8):
        try:
            if mode == "creation":
                return gen_creation_mask(scene, seed + k * 1_000_003)
            return gen_removal_mask(scene, seed + k * 1_000_003)
        except MaskGenerationError as exc:
            last_error = exc
    raise last_error


def _compose_batch(
    dataset: list[DatasetRecord], batch_size: int, rng: np.random.Generator
) -> list[TrainExample]:
    """Fresh masks every step, 50/50 creation/removal."""
    modes = np.array(["creation", "removal"])[
        rng.permutation(np.arange(batch_size) % 2)
    ]
    examples = []
    for mode in modes:
        rec = dataset[int(rng.integers(0, len(dataset)))]
        if mode == "creation" and not rec.scene.instances:
            mode = "removal"
        mask = _mask_for(rec.scene, str(mode), int(rng.integers(0, 2**31 - 1)))
        examples.append(TrainExample(image=rec.scene.image, inpaint_mask=mask, mode=str(mode)))
    return examples


def _run_stage(
    dataset: list[DatasetRecord],
    config: TrainConfig,
    net: DenoiserNet,
    emb_vectors: dict[str, torch.Tensor],
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[Checkpoint, list[dict]]:
    train_embeddings = config.stage == 2
    groups = [{"params": list(net.parameters())}]
    if train_embeddings:
        # no weight decay on the intent vectors: their magnitude is the signal
        groups.append(
            {
                "params": [emb_vectors["y_c"], emb_vectors["y_r"]],
                "weight_decay": 0.0,
                "lr": config.effective_embedding_lr,
            }
        )
    opt = torch.optim.AdamW(groups, lr=config.lr, weight_decay=0.01)
    gamma = config.lr_decay_factor ** (1.0 / config.steps)
    lr_sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=gamma)

    out_dir = Path(config.out_dir) if config.out_dir else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / f"train_stage{config.stage}_log.jsonl", "w")

    log: list[dict] = []
    start_time = time.time()
    high_loss_streak = 0
    try:
        for step in range(1, config.steps + 1):
            examples = _compose_batch(dataset, config.batch_size, rng)
            x, t, target, mask = _batch_tensors(examples, sched, rng)
            if train_embeddings:
                y = torch.stack(
                    [emb_vectors["y_c" if ex.mode == "creation" else "y_r"] for ex in examples]
                )
            else:
                y = emb_vectors["y_null"].expand(len(examples), -1)

            opt.zero_grad(set_to_none=True)
            loss = _weighted_mse(net(x, t, y), target, mask)
            loss_value = float(loss.item())
            if not np.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss at step {step} (stage {config.stage}, seed {config.seed})"
                )
            high_loss_streak = high_loss_streak + 1 if loss_value > DIVERGENCE_LOSS else 0
            if high_loss_streak >= DIVERGENCE_PATIENCE:
                raise TrainingError(
                    f"divergence: loss > {DIVERGENCE_LOSS:g} for {DIVERGENCE_PATIENCE} "
                    f"consecutive steps (at step {step}, last loss {loss_value:.3g})"
                )
            loss.backward()
            opt.step()
            lr_sched.step()

            entry = {
                "step": step,
                "loss": loss_value,
                "lr": lr_sched.get_last_lr()[0],
                "wall_time": time.time() - start_time,
            }
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")

            if (
                out_dir is not None
                and config.checkpoint_every > 0
                and step % config.checkpoint_every == 0
            ):
                snap = _to_checkpoint(net, emb_vectors, opt, step, config.stage, rng)
                save_checkpoint(snap, out_dir / f"ckpt_{step:06d}.ckpt")
    finally:
        if log_file is not None:
            log_file.close()

    ckpt = _to_checkpoint(net, emb_vectors, opt, config.steps, config.stage, rng)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "final.ckpt")
    return ckpt, log


def _to_checkpoint(net, emb_vectors, opt, step, stage, rng) -> Checkpoint:
    moments = {}
    for name, p in net.named_parameters():
        state = opt.state.get(p)
        if state and "exp_avg" in state:
            moments[name] = (state["exp_avg"].clone(), state["exp_avg_sq"].clone())
    return Checkpoint(
        config=net.config,
        params=net.extract_params(),
        embeddings=ConditionEmbedding(
            y_c=emb_vectors["y_c"].detach().numpy().copy(),
            y_r=emb_vectors["y_r"].detach().numpy().copy(),
            y_null=emb_vectors["y_null"].detach().numpy().copy(),
        ),
        opt_moments=moments,
        step=step,
        stage=stage,
        rng_numpy=rng.bit_generator.state,
    )


def train_stage1(
    dataset: list[DatasetRecord],
    config: TrainConfig,
    *,
    denoiser_config: DenoiserConfig = DenoiserConfig(),
    sched: NoiseSchedule | None = None,
) -> Checkpoint:
    """Stage 1: optimize the denoiser only, under the neutral condition."""
    if config.stage != 1:
        raise ValueError(f"train_stage1 requires config.stage == 1, got {config.stage}")
    if not dataset:
        raise ValueError("dataset is empty")
    sched = sched or build_schedule(1000)
    rng = np.random.default_rng(config.seed)

    net = DenoiserNet(denoiser_config)
    net.load_denoiser_params(init_params(config.seed, denoiser_config))
    zero = torch.zeros(denoiser_config.cond_dim)
    emb_vectors = {"y_c": zero.clone(), "y_r": zero.clone(), "y_null": zero.clone()}

    ckpt, _ = _run_stage(dataset, config, net, emb_vectors, sched, rng)
    return ckpt


def train_stage2(
    start: Checkpoint,
    dataset: list[DatasetRecord],
    config: TrainConfig,
    *,
    sched: NoiseSchedule | None = None,
) -> Checkpoint:
    """Stage 2: jointly optimize the denoiser and the two intent embeddings."""
    if config.stage != 2:
        raise ValueError(f"train_stage2 requires config.stage == 2, got {config.stage}")
    if start.stage != 1:
        raise ValueError(f"stage 2 must start from a stage-1 checkpoint, got stage {start.stage}")
    if not dataset:
        raise ValueError("dataset is empty")
    budget = int(STAGE2_MAX_FRACTION * start.step)
    if config.steps > budget:
        raise ValueError(
            f"stage-2 steps {config.steps} exceed 30% of stage-1 steps "
            f"({start.step} -> max {budget}); long joint training erodes controllability"
        )
    sched = sched or build_schedule(1000)
    rng = np.random.default_rng(config.seed)

    net = DenoiserNet(start.config)
    net.load_denoiser_params(start.params)
    d = start.config.cond_dim
    y_null = torch.from_numpy(start.embeddings.y_null.copy())
    jitter = rng.normal(0.0, EMBEDDING_JITTER, size=(2, d)).astype(np.float32)
    emb_vectors = {
        "y_c": (y_null + torch.from_numpy(jitter[0])).requires_grad_(True),
        "y_r": (y_null + torch.from_numpy(jitter[1])).requires_grad_(True),
        "y_null": y_null.clone(),
    }

    ckpt, _ = _run_stage(dataset, config, net, emb_vectors, sched, rng)
    return ckpt
