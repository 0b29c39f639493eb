"""Python bindings for the featsplat library."""

from ._core import (
    BodyAsset,
    BodyModel,
    ConfigError,
    InvalidArgument,
    InvariantViolation,
    IoError,
    PoseParams,
    TopologyMismatch,
    TrainingDiverged,
    dilate_mask,
    fit,
    gradcheck,
    landmark_vertices,
    load_asset,
    portrait_asset,
    psnr,
    rasterize,
    render,
    retrack,
    swap,
    synth,
)

__all__ = [
    "BodyAsset",
    "BodyModel",
    "ConfigError",
    "InvalidArgument",
    "InvariantViolation",
    "IoError",
    "PoseParams",
    "TopologyMismatch",
    "TrainingDiverged",
    "dilate_mask",
    "fit",
    "gradcheck",
    "landmark_vertices",
    "load_asset",
    "portrait_asset",
    "psnr",
    "rasterize",
    "render",
    "retrack",
    "swap",
    "synth",
]
