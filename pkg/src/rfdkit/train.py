"""Staged training loop with deterministic seeding, checkpoints, and curves.

Training runs three stages: "pretrain" fits the detection loss alone, then
"shape" fits the shape loss on detached detector outputs, and "joint"
couples both at a lower learning rate (or keeps the detector frozen for the
no-joint ablation). Every step draws its randomness from a stream keyed by
(seed, "train", global step), so a resumed run replays the interrupted one
bitwise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .container import read_container, write_container
from .errors import ConfigError, NumericsError, ShapeMismatchError
from .model import ReconstructionPipeline, template_scales_from_boxes
from .nn.optim import Adam
from .rng import rng_for
from .synthetic.dataset import read_manifest, read_scene

STAGES = ("pretrain", "shape", "joint")


@dataclass
class StageSpec:
    name: str
    mode: str
    lr: float
    epochs: int


def stage_specs(config: RunConfig, stage: str | None = None,
                no_joint: bool = False) -> list[StageSpec]:
    """The stage schedule for a run; `stage` restricts to one named phase."""
    joint_mode = "joint" if (config.joint_training and not no_joint) else "frozen"
    all_stages = [
        StageSpec("pretrain", "detector", config.pretrain_lr,
                  config.scaled_epochs(config.pretrain_epochs)),
        StageSpec("shape", "frozen", config.pretrain_lr,
                  config.scaled_epochs(config.shape_epochs)),
        StageSpec("joint", joint_mode, config.joint_lr,
                  config.scaled_epochs(config.joint_epochs)),
    ]
    if stage is None:
        return all_stages
    if stage == "pretrain":
        return all_stages[:2]
    if stage == "joint":
        return all_stages[2:]
    raise ConfigError(f"unknown training stage {stage!r}, expected pretrain or joint")


def _stage_lr(spec: StageSpec, epoch: int, decay: float, decay_every: int) -> float:
    return spec.lr * decay ** (epoch // decay_every)


class Trainer:
    """Owns the pipeline, optimizer, and counters for one training run."""

    def __init__(self, config: RunConfig, data_root, out_dir):
        self.config = config
        self.data_root = Path(data_root)
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = read_manifest(self.data_root)
        self.samples = [read_scene(self.data_root, i)
                        for i in range(int(manifest["n_scenes"]))]
        boxes = [b for s in self.samples for b in s.boxes]
        self.pipeline = ReconstructionPipeline(
            rng_for(config.seed, "init"), config.pipeline_config(),
            template_scales=template_scales_from_boxes(boxes))
        self.optimizer = Adam(self.pipeline.parameters(), lr=config.pretrain_lr)
        self.global_step = 0
        self.completed: list[str] = []
        self.curves: list[dict] = []
        self._caches = None

    # -- persistence -------------------------------------------------------------

    def save_checkpoint(self, tag: str = "latest") -> Path:
        ckpt = self.out_dir / f"checkpoint-{tag}"
        ckpt.mkdir(parents=True, exist_ok=True)
        write_container(ckpt / "model.rfdk", self.pipeline.state_dict())
        write_container(ckpt / "optim.rfdk", self.optimizer.state_arrays())
        state = {
            "global_step": self.global_step,
            "completed_stages": self.completed,
            "config": self.config.to_dict(),
        }
        (ckpt / "trainer.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
        return ckpt

    def load_checkpoint(self, ckpt) -> None:
        ckpt = Path(ckpt)
        state = json.loads((ckpt / "trainer.json").read_text())
        if state["config"] != self.config.to_dict():
            raise ConfigError("checkpoint was produced by a different configuration")
        self.pipeline.load_state_dict(read_container(ckpt / "model.rfdk"))
        self.optimizer.load_state_arrays(read_container(ckpt / "optim.rfdk"))
        self.global_step = int(state["global_step"])
        self.completed = list(state["completed_stages"])

    def write_curves(self) -> Path:
        path = self.out_dir / "loss_curves.json"
        path.write_text(json.dumps(self.curves, indent=1, sort_keys=True) + "\n")
        return path

    # -- training ----------------------------------------------------------------

    def caches(self) -> list[dict]:
        if self._caches is None:
            self._caches = [self.pipeline.prepare(s.points.astype(np.float64), s.instance_ids)
                            for s in self.samples]
        return self._caches

    def _step(self, spec: StageSpec, lr: float) -> dict:
        scene = self.global_step % len(self.samples)
        self.optimizer.lr = lr
        result = self.pipeline.forward_train(
            self.samples[scene], self.caches()[scene],
            rng_for(self.config.seed, "train", self.global_step), mode=spec.mode)
        if not np.isfinite(result.parts["total"]):
            self._dump_numerics(spec, scene, result.parts)
            raise NumericsError(
                f"non-finite training loss at step {self.global_step} ({spec.name})")
        if result.loss.requires_grad:
            # a frozen-stage step with no supervised proposal has nothing to fit
            self.optimizer.zero_grad()
            result.loss.backward()
            self.optimizer.step()
        self.global_step += 1
        return result.parts

    def _dump_numerics(self, spec: StageSpec, scene: int, parts: dict) -> None:
        dump = {
            "step": self.global_step,
            "stage": spec.name,
            "scene": scene,
            "parts": {k: float(v) for k, v in parts.items()},
        }
        (self.out_dir / "numerics_dump.json").write_text(
            json.dumps(dump, indent=2, sort_keys=True) + "\n")

    def run_stage(self, spec: StageSpec, log=None) -> None:
        if spec.name in self.completed:
            return
        c = self.config
        self.pipeline.train()
        n_scenes = len(self.samples)
        decay_every = c.scaled_decay_epochs()
        start = time.time()
        for epoch in range(spec.epochs):
            lr = _stage_lr(spec, epoch, c.lr_decay, decay_every)
            for _ in range(n_scenes):
                parts = self._step(spec, lr)
                record = {"step": self.global_step, "stage": spec.name,
                          "epoch": epoch, "lr": lr}
                record.update({k: float(v) for k, v in parts.items()})
                self.curves.append(record)
            if log and (epoch + 1) % max(1, spec.epochs // 10) == 0:
                log(f"{spec.name} epoch {epoch + 1}/{spec.epochs} "
                    f"loss {parts['total']:.4f} lr {lr:.2e} "
                    f"({time.time() - start:.0f}s)")
        self.completed.append(spec.name)

    def run(self, stage: str | None = None, no_joint: bool = False,
            resume=None, log=None) -> Path:
        if resume is not None:
            self.load_checkpoint(resume)
        for spec in stage_specs(self.config, stage, no_joint):
            self.run_stage(spec, log=log)
            self.save_checkpoint()
            self.write_curves()
        return self.save_checkpoint()


def load_pipeline(ckpt, config: RunConfig | None = None) -> ReconstructionPipeline:
    """Rebuild the pipeline a checkpoint was trained with and load its weights."""
    ckpt = Path(ckpt)
    state = json.loads((ckpt / "trainer.json").read_text())
    stored = RunConfig.from_dict(state["config"])
    if config is not None and config.to_dict() != stored.to_dict():
        raise ConfigError("checkpoint was produced by a different configuration")
    pipeline = ReconstructionPipeline(rng_for(stored.seed, "init"),
                                      stored.pipeline_config())
    weights = read_container(ckpt / "model.rfdk")
    expected = pipeline.state_dict()
    for name, value in expected.items():
        if name not in weights:
            raise ShapeMismatchError(f"checkpoint is missing tensor {name}")
        if tuple(weights[name].shape) != tuple(value.shape):
            raise ShapeMismatchError(
                f"checkpoint tensor {name} has shape {tuple(weights[name].shape)}, "
                f"expected {tuple(value.shape)}")
    pipeline.load_state_dict(weights)
    pipeline.eval()
    return pipeline
