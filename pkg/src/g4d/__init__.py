"""Pixel-aligned 4D Gaussian toolkit: rendering, metric gauge, dense motion,
occlusion-aware temporal fusion, evaluation protocols and synthetic oracles."""

from .errors import G4DError
from .fusion import FusionFunction, dual_consistency, fuse, interpolate_time, split_by_occlusion
from .gauge import camera_loss, metric_gauge, metric_gauge_temporal
from .metrics import psnr, similarity_align, ssim
from .model import (Camera, FlowField, GaussianCloud, GaussianFrame, MotionField, WeightMap,
                    make_gaussian_frame)
from .motion import (FlowConsistencyParams, LossWeights, cyclic_weight, flow_loss,
                     project_scene_flow, retarget, retargeting_loss, warp_to_time)
from .render import RenderConfig, render, render_reference

__version__ = "0.1.0"

__all__ = [
    "Camera", "FlowConsistencyParams", "FlowField", "FusionFunction", "G4DError", "GaussianCloud",
    "GaussianFrame", "LossWeights", "MotionField", "RenderConfig", "WeightMap", "camera_loss",
    "cyclic_weight", "dual_consistency", "flow_loss", "fuse", "interpolate_time",
    "make_gaussian_frame", "metric_gauge", "metric_gauge_temporal", "project_scene_flow", "psnr",
    "render", "render_reference", "retarget", "retargeting_loss", "similarity_align",
    "split_by_occlusion", "ssim", "warp_to_time",
]
