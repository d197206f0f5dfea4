"""Segmentation quality control via pseudo-ground-truth restoration."""

import torch  # noqa: F401  (loads libtorch before the extension needs it)

from nnqc._core import (
    BandUnreachable,
    ConfigError,
    IoError,
    PrerequisiteError,
    RunConfig,
    ShapeError,
    TrainingDivergence,
    __version__,
    dsc,
    evaluate,
    fingerprint,
    hd95,
    kendall_tau,
    mae,
    pearson_r,
    phantom_gen,
    qc,
    rank,
    train_ldm,
    train_vae,
)

__all__ = [
    "BandUnreachable",
    "ConfigError",
    "IoError",
    "PrerequisiteError",
    "RunConfig",
    "ShapeError",
    "TrainingDivergence",
    "__version__",
    "dsc",
    "evaluate",
    "fingerprint",
    "hd95",
    "kendall_tau",
    "mae",
    "pearson_r",
    "phantom_gen",
    "qc",
    "rank",
    "train_ldm",
    "train_vae",
]
