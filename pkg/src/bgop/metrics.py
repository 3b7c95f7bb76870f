"""PSNR/BPP metrics and RD-curve serialization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import ConfigurationError, ShapeError

PSNR_CAP_DB = 100.0


def mse(a: torch.Tensor, b: torch.Tensor) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return float(((a.double() - b.double()) ** 2).mean())


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] frames, capped at 100 dB.

    Accepts tensors or lists of same-shaped tensors; MSE is averaged over
    everything before the log.
    """
    if torch.is_tensor(a):
        a, b = [a], [b]
    if len(a) != len(b) or not a:
        raise ShapeError("frame sets must be nonempty and equal length")
    total = sum(mse(x, y) * x.numel() for x, y in zip(a, b))
    count = sum(x.numel() for x in a)
    m = total / count
    if m <= 0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / m), PSNR_CAP_DB)


def bpp(total_bits: float, frame_count: int, height: int, width: int) -> float:
    pixels = frame_count * height * width
    if pixels <= 0:
        raise ConfigurationError("bpp needs a positive pixel count")
    return total_bits / pixels


@dataclass(frozen=True)
class RdPoint:
    lam: float
    bpp: float
    psnr: float


def emit_rd_curve(points: list[RdPoint], path) -> Path:
    """CSV with header lambda,bpp,psnr, rows sorted by bpp ascending."""
    if not points:
        raise ConfigurationError("need at least one RD point")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lambda", "bpp", "psnr"])
        for p in sorted(points, key=lambda p: p.bpp):
            writer.writerow([repr(p.lam), repr(p.bpp), repr(p.psnr)])
    return path


def read_rd_curve(path) -> list[RdPoint]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["lambda", "bpp", "psnr"]:
        raise ConfigurationError(f"{path}: not an RD curve file")
    return [RdPoint(float(l), float(b), float(p)) for l, b, p in rows[1:]]
