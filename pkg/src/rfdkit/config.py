"""Run configuration: a validated, JSON-loadable bundle of hyperparameters.

Defaults mirror the reference setup; the ablation switches (encoder variant,
detection count, joint versus frozen shape training, point budget) are plain
fields so a run is fully described by one JSON document.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model.pipeline import PipelineConfig
from .model.shapegen import VARIANTS

BACKBONES = ("two_stage",)
POINT_BUDGETS = (20000, 40000, 80000)


@dataclass
class RunConfig:
    """Everything a training or inference run needs beyond the data itself."""

    seed: int = 0
    # capacity
    n_seeds: int = 1024
    n_proposals: int = 256
    proposal_feature_dim: int = 128
    n_train_detections: int = 10
    group_points: int = 1024
    group_radius: float = 1.0
    latent_dim: int = 32
    shape_feature_dim: int = 512
    variant: str = "full"
    backbone: str = "two_stage"
    # loss weights
    cls_weight: float = 0.1
    semantic_weight: float = 0.1
    objectness_weight: float = 0.5
    seg_weight: float = 100.0
    shape_weight: float = 0.005
    # decoding
    nms_iou: float = 0.25
    min_objectness: float = 0.5
    mesh_resolution: int = 128
    mesh_coarse: int = 16
    # data
    n_points: int = 80000
    n_train_queries: int = 512
    # schedule (epoch counts are pre-scaling; see epoch_scale)
    pretrain_lr: float = 1e-3
    joint_lr: float = 1e-4
    lr_decay: float = 0.5
    decay_epochs: int = 80
    epoch_scale: float = 0.1
    pretrain_epochs: int = 240
    shape_epochs: int = 240
    joint_epochs: int = 60
    joint_training: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive_ints = ("n_seeds", "n_proposals", "proposal_feature_dim",
                         "n_train_detections", "group_points", "latent_dim",
                         "shape_feature_dim", "mesh_resolution", "mesh_coarse",
                         "n_train_queries", "decay_epochs", "pretrain_epochs",
                         "shape_epochs", "joint_epochs")
        for name in positive_ints:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        positive_floats = ("group_radius", "cls_weight", "semantic_weight",
                           "objectness_weight", "seg_weight", "shape_weight",
                           "pretrain_lr", "joint_lr", "lr_decay", "epoch_scale")
        for name in positive_floats:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
            setattr(self, name, float(value))
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not 0.0 <= float(self.min_objectness) <= 1.0:
            raise ConfigError(f"min_objectness must be in [0, 1], got {self.min_objectness!r}")
        if not 0.0 < float(self.nms_iou) <= 1.0:
            raise ConfigError(f"nms_iou must be in (0, 1], got {self.nms_iou!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.n_points not in POINT_BUDGETS:
            raise ConfigError(f"n_points must be one of {POINT_BUDGETS}, got {self.n_points!r}")
        if self.n_train_detections > self.n_proposals:
            raise ConfigError("n_train_detections cannot exceed n_proposals")
        if not isinstance(self.joint_training, bool):
            raise ConfigError(f"joint_training must be a boolean, got {self.joint_training!r}")

    # -- construction ------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be an object, got {type(data).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    # -- derived views -----------------------------------------------------------

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            n_seeds=self.n_seeds,
            n_proposals=self.n_proposals,
            n_train_detections=self.n_train_detections,
            group_radius=self.group_radius,
            group_points=self.group_points,
            variant=self.variant,
            latent_dim=self.latent_dim,
            shape_feature_dim=self.shape_feature_dim,
            n_train_queries=self.n_train_queries,
            min_objectness=self.min_objectness,
            nms_iou=self.nms_iou,
            shape_weight=self.shape_weight,
            seg_weight=self.seg_weight,
            loss_weights={"cls": self.cls_weight, "semantic": self.semantic_weight,
                          "objectness": self.objectness_weight},
            mesh_coarse=self.mesh_coarse,
            mesh_fine=self.mesh_resolution,
        )

    def scaled_epochs(self, epochs: int) -> int:
        return max(1, round(epochs * self.epoch_scale))

    def scaled_decay_epochs(self) -> int:
        return max(1, round(self.decay_epochs * self.epoch_scale))
