"""Python bindings for the contrastlab C++ core."""

from ._core import (
    __version__,
    NoiseSchedule,
    aggregate,
    cli,
    cross_modality_dice,
    dice_jaccard,
    dopri5,
    gaussian_reverse_sample,
    mae,
    paired_phantoms,
    pearson,
    phantom,
    relative_error,
    ssim,
    threshold_segment,
)

__all__ = [
    "__version__",
    "NoiseSchedule",
    "aggregate",
    "cli",
    "cross_modality_dice",
    "dice_jaccard",
    "dopri5",
    "gaussian_reverse_sample",
    "mae",
    "paired_phantoms",
    "pearson",
    "phantom",
    "relative_error",
    "ssim",
    "threshold_segment",
]
