"""Synthetic detect -> segment -> distill pipeline at desk scale."""
from .detect import detect_blobs
from .optim import OptimHyper, init_state, optimizer_step
from .pipeline import run_pipeline
from .scenes import (
    IMBALANCED,
    AugmentConfig,
    Sample,
    SceneConfig,
    augment,
    boxes_from_mask,
    gen_scene,
    hflip,
    sharpen,
)
from .segnet import SegNet, predict_mask, segnet_backward, segnet_forward
from .training import TrainConfig, distill, evaluate, train
