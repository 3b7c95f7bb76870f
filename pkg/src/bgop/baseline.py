"""Conventional-codec baselines through an external ffmpeg binary.

Baselines are optional: when ffmpeg is missing we raise
EnvironmentUnavailableError so callers can skip or exit with the dedicated
environment code instead of failing the run.
"""

from __future__ import annotations

import enum
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import FrameDataset
from .errors import DataError, EnvironmentUnavailableError
from .metrics import bpp as bits_per_pixel
from .metrics import psnr as compute_psnr

FFMPEG = "ffmpeg"


class BaselineCodec(enum.Enum):
    X264 = "x264"
    X265 = "x265"


@dataclass(frozen=True)
class BaselineResult:
    codec: BaselineCodec
    preset: str
    gop: int
    quality: int
    bpp: float
    psnr: float


def build_encode_command(
    codec: BaselineCodec,
    preset: str,
    gop: int,
    quality: int,
    input_pattern: str,
    output_path: str,
) -> list[str]:
    """ffmpeg argv for a closed-GOP constant-quality encode."""
    cmd = [FFMPEG, "-y", "-loglevel", "error", "-framerate", "25", "-i", input_pattern]
    if codec is BaselineCodec.X264:
        cmd += [
            "-c:v", "libx264", "-preset", preset, "-crf", str(quality),
            "-g", str(gop), "-keyint_min", str(gop), "-sc_threshold", "0",
        ]
    else:
        cmd += [
            "-c:v", "libx265", "-preset", preset, "-crf", str(quality),
            "-x265-params", f"keyint={gop}:min-keyint={gop}:scenecut=0:log-level=error",
        ]
    cmd += ["-pix_fmt", "yuv420p", output_path]
    return cmd


def build_decode_command(input_path: str, output_pattern: str) -> list[str]:
    return [FFMPEG, "-y", "-loglevel", "error", "-i", input_path, output_pattern]


def _require_ffmpeg():
    if shutil.which(FFMPEG) is None:
        raise EnvironmentUnavailableError(
            "baseline codec unavailable: ffmpeg not found on PATH"
        )


def _run(cmd: list[str]):
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise DataError(f"{cmd[0]} failed ({proc.returncode}): {proc.stderr.strip()[-500:]}")


def run_baseline(
    dataset: FrameDataset,
    codec: BaselineCodec,
    preset: str = "ultrafast",
    gop: int = 4,
    qualities: tuple[int, ...] = (23, 28, 33, 38),
) -> list[BaselineResult]:
    """Encode every sequence at each quality, return bpp/psnr per quality."""
    _require_ffmpeg()
    results = []
    with tempfile.TemporaryDirectory(prefix="bgop_baseline_") as tmp:
        tmp = Path(tmp)
        seq_inputs = []
        for i, seq in enumerate(dataset.sequences):
            in_dir = tmp / f"in_{i:03d}"
            in_dir.mkdir()
            frames = dataset.load_sequence(i)
            for t in range(frames.shape[0]):
                arr = (frames[t].permute(1, 2, 0).numpy() * 255.0 + 0.5).astype(np.uint8)
                Image.fromarray(arr).save(in_dir / f"frame_{t:05d}.png")
            seq_inputs.append((in_dir, frames))

        for quality in qualities:
            total_bits = 0
            originals, decoded = [], []
            for i, (in_dir, frames) in enumerate(seq_inputs):
                out_file = tmp / f"q{quality}_s{i:03d}.mkv"
                _run(build_encode_command(
                    codec, preset, gop, quality,
                    str(in_dir / "frame_%05d.png"), str(out_file),
                ))
                total_bits += out_file.stat().st_size * 8
                dec_dir = tmp / f"dec_q{quality}_s{i:03d}"
                dec_dir.mkdir()
                _run(build_decode_command(str(out_file), str(dec_dir / "frame_%05d.png")))
                dec_files = sorted(dec_dir.iterdir())
                if len(dec_files) != frames.shape[0]:
                    raise DataError(f"decoder returned {len(dec_files)} frames, expected {frames.shape[0]}")
                for t, p in enumerate(dec_files):
                    with Image.open(p) as img:
                        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
                    decoded.append(np.transpose(arr, (2, 0, 1)))
                    originals.append(frames[t].numpy())
            results.append(BaselineResult(
                codec=codec,
                preset=preset,
                gop=gop,
                quality=quality,
                bpp=bits_per_pixel(total_bits, len(originals), dataset.height, dataset.width),
                psnr=compute_psnr(
                    [torch.from_numpy(o) for o in originals],
                    [torch.from_numpy(d) for d in decoded],
                ),
            ))
    return results
