"""Command-line entry point: synth | train | inpaint | eval | serve.

Option precedence is CLI flag > config file (--config, JSON or TOML) > built-in
default. Every run echoes its effective configuration as a JSON line on stderr
and writes effective_config.json beside its outputs. Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint
from .model import DenoiserConfig
from .scenes import (
    DatasetRecord,
    SceneConfig,
    gen_creation_mask,
    gen_removal_mask,
    generate_scene,
    read_dataset,
    write_dataset,
)
from .schedule import GuidanceConfig, TernaryIntentMask, build_schedule
from .training import TrainConfig, train_stage1, train_stage2
from .wire import decode_intent


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


DEFAULTS: dict[str, dict] = {
    "synth": {"out": None, "n": 1000, "seed": 0, "image_size": 32},
    "train": {
        "data": None, "out": None, "stage": None, "steps": None, "batch_size": 32,
        "lr": 1e-4, "lr_decay": 0.01, "seed": 0, "checkpoint_every": 0,
        "init_checkpoint": None, "image_size": 32, "base_width": 32, "depth": 3,
        "cond_dim": 64, "time_dim": 64, "timesteps": 1000,
    },
    "inpaint": {
        "checkpoint": None, "image": None, "intent": None, "out": None,
        "w": 2.0, "steps": 50, "sampler": "ddim", "seed": 0, "timesteps": 1000,
    },
    "eval": {
        "mode": None, "checkpoint": None, "data": None, "out": None, "n": 32,
        "seed": 1000, "w": 2.0, "steps": 50, "sampler": "ddim",
        "guidance_seed": 9, "timesteps": 1000,
    },
    "serve": {
        "checkpoint": None, "host": "127.0.0.1", "port": 8000, "max_queue": 8,
        "timesteps": 1000, "ui_dir": None,
    },
}

STAGE_DEFAULT_STEPS = {1: 10_000, 2: 3_000}


def _log(**fields):
    print(json.dumps(fields), file=sys.stderr)


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".json"):
        return json.loads(text)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError as exc:  # python < 3.11
            raise UsageError("TOML config requires Python 3.11+; use a JSON config") from exc
        return tomllib.loads(text)
    raise UsageError(f"config file must end in .json or .toml, got {path!r}")


def _effective_config(cmd: str, args: argparse.Namespace) -> dict:
    effective = dict(DEFAULTS[cmd])
    if args.config:
        file_cfg = _load_config_file(args.config)
        section = file_cfg.get(cmd, file_cfg)
        for key, value in section.items():
            if key not in effective:
                raise UsageError(f"unknown config key {key!r} for subcommand {cmd!r}")
            effective[key] = value
    for key in effective:
        value = getattr(args, key, None)
        if value is not None:
            effective[key] = value
    return effective


def _write_effective_config(cfg: dict, where: Path) -> None:
    where.mkdir(parents=True, exist_ok=True)
    (where / "effective_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    _log(event="effective_config", **cfg)


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg[key] is None:
            raise UsageError(f"missing required flag --{key.replace('_', '-')}")


def _load_image_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0).transpose(2, 0, 1)


def _save_image_png(image: np.ndarray, path: str) -> None:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(data, mode="RGB").save(path)


# ---- subcommands ----


def _cmd_synth(cfg: dict) -> int:
    _require(cfg, "out")
    out = Path(cfg["out"])
    scene_config = SceneConfig(image_size=cfg["image_size"])
    records = []
    for i in range(cfg["n"]):
        scene = generate_scene(cfg["seed"] + i, scene_config)
        mode = "creation" if (i % 2 == 0 and scene.instances) else "removal"
        mask_seed = cfg["seed"] + 100_000 + i
        if mode == "creation":
            mask = gen_creation_mask(scene, mask_seed)
        else:
            mask = gen_removal_mask(scene, mask_seed)
        records.append(
            DatasetRecord(scene=scene, mode=mode, inpaint_mask=mask, seed=cfg["seed"] + i)
        )
    write_dataset(records, out)
    _write_effective_config(cfg, out)
    _log(event="synth_done", n=len(records), out=str(out))
    return 0


def _cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out", "stage")
    stage = int(cfg["stage"])
    if stage == 2 and cfg["init_checkpoint"] is None:
        raise UsageError("missing required flag --init-checkpoint (needed for --stage 2)")
    steps = cfg["steps"] if cfg["steps"] is not None else STAGE_DEFAULT_STEPS.get(stage)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_effective_config({**cfg, "steps": steps}, out)

    dataset = read_dataset(cfg["data"])
    sched = build_schedule(cfg["timesteps"])
    train_cfg = TrainConfig(
        stage=stage, steps=steps, batch_size=cfg["batch_size"], lr=cfg["lr"],
        lr_decay_factor=cfg["lr_decay"], seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"], out_dir=str(out),
    )
    if stage == 1:
        denoiser_config = DenoiserConfig(
            image_size=cfg["image_size"], base_width=cfg["base_width"], depth=cfg["depth"],
            cond_dim=cfg["cond_dim"], time_dim=cfg["time_dim"],
        )
        ckpt = train_stage1(dataset, train_cfg, denoiser_config=denoiser_config, sched=sched)
    else:
        start = load_checkpoint(cfg["init_checkpoint"])
        ckpt = train_stage2(start, dataset, train_cfg, sched=sched)
    _log(event="train_done", stage=stage, steps=steps, final=str(out / "final.ckpt"))
    return 0


def _cmd_inpaint(cfg: dict) -> int:
    from .pipeline import InpaintRequest, inpaint

    _require(cfg, "checkpoint", "image", "intent", "out")
    ckpt = load_checkpoint(cfg["checkpoint"])
    sched = build_schedule(cfg["timesteps"])
    image = _load_image_png(cfg["image"])
    intent = decode_intent(Path(cfg["intent"]).read_bytes())
    req = InpaintRequest(
        image=image,
        intent=intent,
        guidance=GuidanceConfig(
            w=cfg["w"], sampler=cfg["sampler"], steps=cfg["steps"], seed=cfg["seed"]
        ),
    )
    result = inpaint(req, ckpt, sched)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _save_image_png(result, str(out))
    _write_effective_config(cfg, out.parent)
    _log(event="inpaint_done", out=str(out))
    return 0


def _cmd_eval(cfg: dict) -> int:
    from .pipeline import (
        build_creation_eval_set,
        build_mixed_eval_set,
        build_removal_eval_set,
        eval_creation,
        eval_mixed,
        eval_removal,
    )

    _require(cfg, "mode", "checkpoint")
    if cfg["mode"] not in ("removal", "creation", "mixed"):
        raise UsageError(f"--mode must be removal, creation or mixed, got {cfg['mode']!r}")
    ckpt = load_checkpoint(cfg["checkpoint"])
    sched = build_schedule(cfg["timesteps"])
    scene_config = SceneConfig(image_size=ckpt.config.image_size)
    scenes = [rec.scene for rec in read_dataset(cfg["data"])] if cfg["data"] else None

    builders = {
        "removal": (build_removal_eval_set, eval_removal),
        "creation": (build_creation_eval_set, eval_creation),
        "mixed": (build_mixed_eval_set, eval_mixed),
    }
    build, run = builders[cfg["mode"]]
    eval_set = build(cfg["n"], cfg["seed"], scene_config, scenes=scenes)
    guidance = GuidanceConfig(
        w=cfg["w"], sampler=cfg["sampler"], steps=cfg["steps"], seed=cfg["guidance_seed"]
    )
    report = run(ckpt, eval_set, sched=sched, guidance=guidance)

    print(report.to_json())
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        _write_effective_config(cfg, out.parent)
    _log(event="eval_done", mode=cfg["mode"], samples=report.samples)
    return 0


def _cmd_serve(cfg: dict) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        cfg["checkpoint"],
        max_queue=cfg["max_queue"],
        schedule_steps=cfg["timesteps"],
        ui_dir=cfg["ui_dir"],
    )
    _write_effective_config(cfg, Path.cwd())
    _log(event="serving", host=cfg["host"], port=cfg["port"])
    uvicorn.run(app, host=cfg["host"], port=int(cfg["port"]), log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="intentpaint", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="JSON or TOML config file")
        return p

    p = add("synth", help="generate a synthetic scene dataset")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)

    p = add("train", help="run a training stage")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--init-checkpoint", dest="init_checkpoint")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--base-width", dest="base_width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--cond-dim", dest="cond_dim", type=int)
    p.add_argument("--time-dim", dest="time_dim", type=int)
    p.add_argument("--timesteps", type=int)

    p = add("inpaint", help="inpaint one image under an intent mask")
    p.add_argument("--checkpoint")
    p.add_argument("--image")
    p.add_argument("--intent")
    p.add_argument("--out")
    p.add_argument("--w", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--sampler", choices=("ddim", "ddpm"))
    p.add_argument("--seed", type=int)
    p.add_argument("--timesteps", type=int)

    p = add("eval", help="run the oracle evaluator")
    p.add_argument("--mode", choices=("removal", "creation", "mixed"))
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--w", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--sampler", choices=("ddim", "ddpm"))
    p.add_argument("--guidance-seed", dest="guidance_seed", type=int)
    p.add_argument("--timesteps", type=int)

    p = add("serve", help="serve the studio HTTP API")
    p.add_argument("--checkpoint")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--max-queue", dest="max_queue", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--ui-dir", dest="ui_dir")

    return parser


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "inpaint": _cmd_inpaint,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _effective_config(args.subcommand, args)
        return COMMANDS[args.subcommand](cfg)
    except UsageError as exc:
        _log(event="usage_error", error=str(exc))
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure -> exit code 2
        _log(event="error", error=f"{type(exc).__name__}: {exc}")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
