"""Noise-space domain adaptation for image restoration."""

import json as _json

# Loads libtorch into the process before the extension needs it.
import torch as _torch  # noqa: F401

from . import _core
from ._core import (
    NoiseSchedule,
    Restorer,
    charbonnier_loss,
    combined_loss,
    contrastive_loss,
    forward_sample,
    lambda_schedule,
    linear_schedule,
    psnr,
    spearman,
    ssim,
)

__all__ = [
    "NoiseSchedule",
    "Restorer",
    "charbonnier_loss",
    "combined_loss",
    "contrastive_loss",
    "evaluate",
    "forward_sample",
    "lambda_schedule",
    "linear_schedule",
    "load_config",
    "psnr",
    "run_cli",
    "spearman",
    "ssim",
]


def load_config(path, overrides=()):
    """Resolved configuration as a dict."""
    return _json.loads(_core.load_config_json(str(path), list(overrides)))


def run_cli(*args):
    """Runs one `nadapt` command; returns (exit_code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


def evaluate(checkpoint, data_root, split="real", task="denoise"):
    """Scores a restorer checkpoint; returns {"psnr_db", "ssim", "per_image"}."""
    return _json.loads(_core.evaluate_json(str(checkpoint), str(data_root), split, task))
