"""Detection, alignment, and shape generation models."""

from .alignment import (
    AlignedGroup,
    CanonicalAlignment,
    align_rows,
    rotation_t_from_heading,
    select_for_training,
)
from .detector import (
    HEAD_CHANNELS,
    N_CLASSES,
    N_HEADING_BINS,
    NEGATIVE_RADIUS,
    POSITIVE_RADIUS,
    Backbone,
    DetectionOutput,
    DetectionTargets,
    Detector,
    ProposalModule,
    SetAbstraction,
    VoteModule,
    assign_targets,
    LOSS_WEIGHTS,
    box_loss,
    encode_heading,
    heading_bin_anchors,
    predicted_boxes,
    split_head,
    template_scales_from_boxes,
)
from .pipeline import PipelineConfig, Prediction, ReconstructionPipeline, TrainStepResult
from .shapegen import VARIANTS, ShapeGenerator

__all__ = [
    "AlignedGroup",
    "CanonicalAlignment",
    "PipelineConfig",
    "Prediction",
    "ReconstructionPipeline",
    "ShapeGenerator",
    "TrainStepResult",
    "VARIANTS",
    "align_rows",
    "rotation_t_from_heading",
    "select_for_training",
    "HEAD_CHANNELS",
    "N_CLASSES",
    "N_HEADING_BINS",
    "NEGATIVE_RADIUS",
    "POSITIVE_RADIUS",
    "Backbone",
    "DetectionOutput",
    "DetectionTargets",
    "Detector",
    "ProposalModule",
    "SetAbstraction",
    "VoteModule",
    "assign_targets",
    "LOSS_WEIGHTS",
    "box_loss",
    "encode_heading",
    "heading_bin_anchors",
    "predicted_boxes",
    "split_head",
    "template_scales_from_boxes",
]
