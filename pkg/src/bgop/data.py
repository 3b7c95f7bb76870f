"""Frame ingestion and the synthetic moving-shapes dataset.

Datasets are directories of 8-bit RGB images. A directory containing
subdirectories is treated as one sequence per subdirectory; otherwise the
directory itself is a single sequence. Frame order is lexicographic on
filename. Frames are center-cropped to the largest dims divisible by 64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, DataError

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}
MOTION_FILE = "motion.json"


@dataclass(frozen=True)
class Sequence:
    name: str
    files: tuple[Path, ...]


@dataclass
class FrameDataset:
    root: Path
    sequences: list[Sequence]
    height: int
    width: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.sequences)

    def frame_count(self) -> int:
        return sum(len(s.files) for s in self.sequences)

    def load_frame(self, path: Path) -> torch.Tensor:
        """One frame as float (3, H, W) in [0,1], center-cropped. Cached."""
        key = str(path)
        if key not in self._cache:
            self._cache[key] = _read_image(path, self.height, self.width)
        return self._cache[key]

    def load_sequence(self, index: int) -> torch.Tensor:
        seq = self.sequences[index]
        return torch.stack([self.load_frame(p) for p in seq.files])

    def motion_metadata(self, index: int) -> dict | None:
        """Ground-truth motion for synthetic sequences, None otherwise."""
        path = self.root / self.sequences[index].name / MOTION_FILE
        if not path.exists():
            path = self.root / MOTION_FILE
            if not path.exists():
                return None
        return json.loads(path.read_text())


def _read_image(path: Path, target_h: int, target_w: int) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None
    h, w = arr.shape[:2]
    if h < target_h or w < target_w:
        raise DataError(f"{path}: dims {w}x{h} smaller than dataset crop {target_w}x{target_h}")
    top = (h - target_h) // 2
    left = (w - target_w) // 2
    arr = arr[top : top + target_h, left : left + target_w]
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.height, img.width
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from None


def load_frames(root, crop_to_multiple: int = 64) -> FrameDataset:
    """Scan a directory into a FrameDataset, cropping to multiple-of-64 dims."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    seq_dirs = subdirs if subdirs else [root]
    sequences = []
    for d in seq_dirs:
        files = tuple(sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS))
        if files:
            sequences.append(Sequence(name=d.name if d != root else ".", files=files))
    if not sequences:
        raise DataError(f"no image files under {root}")

    h0, w0 = _image_size(sequences[0].files[0])
    target_h = (h0 // crop_to_multiple) * crop_to_multiple
    target_w = (w0 // crop_to_multiple) * crop_to_multiple
    if target_h == 0 or target_w == 0:
        raise DataError(
            f"{sequences[0].files[0]}: {w0}x{h0} too small for multiple-of-{crop_to_multiple} crop"
        )
    for seq in sequences:
        for p in seq.files:
            h, w = _image_size(p)
            if h < target_h or w < target_w:
                raise DataError(f"{p}: dims {w}x{h} inconsistent with dataset crop {target_w}x{target_h}")
    return FrameDataset(root=root, sequences=sequences, height=target_h, width=target_w)


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth random texture, (h, w, 3) in [0.15, 0.85]."""
    coarse = rng.random((3, h // 8, w // 8)).astype(np.float32)
    up = F.interpolate(torch.from_numpy(coarse)[None], size=(h, w), mode="bilinear", align_corners=False)
    return (0.15 + 0.7 * up[0].permute(1, 2, 0).numpy()).astype(np.float32)


def _coverage_1d(n: int, start: float, extent: float) -> np.ndarray:
    """Overlap of each unit pixel cell [i, i+1) with the interval [start, start+extent)."""
    i = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(i + 1.0, start + extent) - np.maximum(i, start), 0.0, 1.0)


def _shape_coverage(shape: dict, t: int, h: int, w: int) -> np.ndarray:
    y = shape["start"][0] + shape["velocity"][0] * t
    x = shape["start"][1] + shape["velocity"][1] * t
    size = shape["size"]
    if shape["kind"] == "rect":
        return np.outer(_coverage_1d(h, y, size), _coverage_1d(w, x, size))
    # disc centered on the box, anti-aliased with a 1px linear edge
    r = size / 2.0
    yy = np.arange(h, dtype=np.float64)[:, None] + 0.5 - (y + r)
    xx = np.arange(w, dtype=np.float64)[None, :] + 0.5 - (x + r)
    dist = np.sqrt(yy * yy + xx * xx)
    return np.clip(r + 0.5 - dist, 0.0, 1.0)


def render_synthetic_frame(background: np.ndarray, shapes: list[dict], t: int) -> np.ndarray:
    """Composite shapes at their frame-t positions; (h, w, 3) float in [0,1]."""
    h, w = background.shape[:2]
    frame = background.copy()
    for shape in shapes:
        cov = _shape_coverage(shape, t, h, w)[:, :, None].astype(np.float32)
        color = np.asarray(shape["color"], dtype=np.float32)
        frame = frame * (1.0 - cov) + color * cov
    return np.clip(frame, 0.0, 1.0)


def _plan_shape(rng: np.random.Generator, h: int, w: int, frames: int, still: bool) -> dict:
    kind = "rect" if rng.random() < 0.5 else "disc"
    size = float(rng.integers(8, 15))
    if still:
        vy = vx = 0.0
    else:
        # half the shapes get integer velocities, half subpixel
        vy, vx = rng.uniform(-2.0, 2.0, size=2)
        if rng.random() < 0.5:
            vy, vx = float(round(vy)), float(round(vx))
    start = []
    for dim, v in ((h, vy), (w, vx)):
        disp = v * (frames - 1)
        lo = 2.0 + max(0.0, -disp)
        hi = dim - size - 2.0 - max(0.0, disp)
        if hi <= lo:  # velocity too aggressive for this dim; park it mid-frame
            start.append((dim - size) / 2.0)
        else:
            start.append(float(rng.uniform(lo, hi)))
    return {
        "kind": kind,
        "size": size,
        "color": [float(c) for c in rng.uniform(0.0, 1.0, size=3)],
        "start": start,
        "velocity": [float(vy), float(vx)],
    }


def make_synthetic_dataset(
    seed: int,
    sequences: int,
    frames_per_seq: int,
    dims: tuple[int, int],
    out_dir,
    shapes_per_seq: int = 4,
    still: bool = False,
) -> FrameDataset:
    """Deterministic moving-shape sequences with ground-truth motion.

    Each sequence directory gets frame_###.png files plus a motion.json
    recording every shape's start position and per-frame velocity in pixels.
    still=True freezes all velocities at zero (all frames identical).
    """
    h, w = dims
    if h % 64 or w % 64:
        raise ConfigurationError(f"synthetic dims must be multiples of 64, got {dims}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for s in range(sequences):
        seq_dir = out_dir / f"seq_{s:03d}"
        seq_dir.mkdir(parents=True, exist_ok=True)
        background = _background(rng, h, w)
        shapes = [_plan_shape(rng, h, w, frames_per_seq, still) for _ in range(shapes_per_seq)]
        for t in range(frames_per_seq):
            frame = render_synthetic_frame(background, shapes, t)
            img = Image.fromarray((frame * 255.0 + 0.5).astype(np.uint8))
            img.save(seq_dir / f"frame_{t:03d}.png")
        (seq_dir / MOTION_FILE).write_text(json.dumps({
            "still": still,
            "frames": frames_per_seq,
            "dims": [h, w],
            "shapes": shapes,
        }, indent=1))
    (out_dir / "manifest.json").write_text(json.dumps({
        "seed": seed,
        "sequences": sequences,
        "frames_per_seq": frames_per_seq,
        "dims": [h, w],
        "still": still,
    }))
    return load_frames(out_dir)
