"""Staged pretraining and end-to-end GOP optimization.

Stages mirror the intended protocol: image codec (+ post-processing) on
single crops, flow compression on triplets, then one optimizer over every
module with the GOP-level rate-distortion loss. Rates are normalized to
bits per pixel inside the training objective so the trade-off weight
transfers across crop sizes; the loss decomposition itself stays exact.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .codec import VideoCodec
from .data import FrameDataset
from .entropy import QuantizerMode
from .errors import ConfigurationError, DataError, TrainingError
from .gop import encode_gop, encode_sequence
from .metrics import RdPoint, bpp as bits_per_pixel, psnr as compute_psnr
from .motion import FlowPair, estimate_bidirectional_flow, warp


class TrainStage(enum.Enum):
    IMAGE_PRETRAIN = "image_pretrain"
    FLOW_COMPRESSION_PRETRAIN = "flow_compression_pretrain"
    POSTPROC_PRETRAIN = "postproc_pretrain"
    END_TO_END = "end_to_end"


@dataclass(frozen=True)
class AugmentationSpec:
    random_crop: bool = True
    random_rotation: bool = True  # multiples of 90 degrees only
    temporal_flip: bool = True  # GOP/triplet samples: reverse frame order


@dataclass(frozen=True)
class TrainConfig:
    stage: TrainStage
    learning_rate: float = 3e-5
    batch_size: int = 16
    steps: int = 2000
    crop: int = 64
    lam: float = 128.0
    seed: int = 0
    freeze_flow: bool = False
    gop_size: int = 4
    augmentation: AugmentationSpec = AugmentationSpec()
    log_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.crop % 64:
            raise ConfigurationError(f"crop must be divisible by 64, got {self.crop}")

    @staticmethod
    def paper_image() -> "TrainConfig":
        # 256px crops, 400K iterations, Adam at 3e-5, batch 16
        return TrainConfig(stage=TrainStage.IMAGE_PRETRAIN, learning_rate=3e-5,
                           batch_size=16, steps=400_000, crop=256)

    @staticmethod
    def paper_end_to_end() -> "TrainConfig":
        return TrainConfig(stage=TrainStage.END_TO_END, learning_rate=1e-5,
                           batch_size=4, steps=400_000, crop=256)


class TrainLogger:
    """Append-only JSONL training log, also kept in memory."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.history: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def log(self, record: dict):
        self.history.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")


def _f(v) -> float:
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def smoothed(values, window: int) -> tuple[float, float]:
    """(mean of first window, mean of last window) of a scalar series."""
    if len(values) < window:
        raise ConfigurationError(f"need at least {window} values, got {len(values)}")
    return float(np.mean(values[:window])), float(np.mean(values[-window:]))


def _crop_window(rng, h, w, crop, random_crop):
    if h < crop or w < crop:
        raise DataError(f"frames {h}x{w} smaller than crop {crop}")
    if random_crop:
        return int(rng.integers(h - crop + 1)), int(rng.integers(w - crop + 1))
    return (h - crop) // 2, (w - crop) // 2


def _augment(frames: torch.Tensor, rng, crop: int, aug: AugmentationSpec) -> torch.Tensor:
    """Crop/rotate/flip one (T, 3, H, W) clip. Same transform for all frames."""
    t, _, h, w = frames.shape
    y0, x0 = _crop_window(rng, h, w, crop, aug.random_crop)
    out = frames[:, :, y0 : y0 + crop, x0 : x0 + crop]
    if aug.random_rotation:
        k = int(rng.integers(4))
        if k:
            out = torch.rot90(out, k, dims=(-2, -1))
    if aug.temporal_flip and t > 1 and rng.random() < 0.5:
        out = torch.flip(out, dims=[0])
    return out.contiguous()


def _sample_clips(dataset: FrameDataset, rng, batch: int, length: int, crop: int,
                  aug: AugmentationSpec) -> torch.Tensor:
    """(batch, length, 3, crop, crop) of augmented consecutive-frame clips."""
    eligible = [i for i, s in enumerate(dataset.sequences) if len(s.files) >= length]
    if not eligible:
        raise DataError(f"no sequence has {length} consecutive frames")
    clips = []
    for _ in range(batch):
        seq_index = eligible[int(rng.integers(len(eligible)))]
        frames = dataset.load_sequence(seq_index)
        start = int(rng.integers(frames.shape[0] - length + 1))
        clips.append(_augment(frames[start : start + length], rng, crop, aug))
    return torch.stack(clips)


def _trainable(codec: VideoCodec, config: TrainConfig) -> dict[str, list]:
    groups = codec.parameter_groups()
    if config.stage is TrainStage.IMAGE_PRETRAIN:
        selected = ["image_codec", "postproc"]
    elif config.stage is TrainStage.POSTPROC_PRETRAIN:
        selected = ["postproc"]
    elif config.stage is TrainStage.FLOW_COMPRESSION_PRETRAIN:
        selected = ["flow_codec"] + ([] if config.freeze_flow else ["flow_net"])
    else:
        selected = list(groups)
        if config.freeze_flow:
            selected.remove("flow_net")
    return {name: groups[name] for name in selected}


def _make_optimizer(params, config: TrainConfig):
    return torch.optim.Adam(params, lr=config.learning_rate)


def pretrain_image(dataset: FrameDataset, codec: VideoCodec, config: TrainConfig) -> list[dict]:
    """Stage 1: image codec (+ post-processing) on independent random crops.

    Objective per step: lam * MSE(x, postproc(decode(x))) + R_image in
    bits/pixel, noise-mode quantization. Returns the per-step log records.
    """
    if config.stage not in (TrainStage.IMAGE_PRETRAIN, TrainStage.POSTPROC_PRETRAIN):
        raise ConfigurationError(f"wrong stage {config.stage} for pretrain_image")
    if len(dataset) == 0:
        raise DataError("empty dataset")
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    groups = _trainable(codec, config)
    opt = _make_optimizer([p for ps in groups.values() for p in ps], config)
    logger = TrainLogger(config.log_path)
    codec.train()
    pixels = config.batch_size * config.crop * config.crop
    for step in range(config.steps):
        x = _sample_clips(dataset, rng, config.batch_size, 1, config.crop,
                          config.augmentation)[:, 0]
        x_hat, _, _, _, bits = codec.image_codec.code(x, QuantizerMode.NOISE, gen)
        x_hat = codec.postproc(x_hat)
        d = ((x - x_hat) ** 2).mean()
        r = bits / pixels
        loss = config.lam * d + r
        opt.zero_grad()
        loss.backward()
        opt.step()
        logger.log({"step": step, "stage": config.stage.value, "lambda": config.lam,
                    "L": _f(loss), "D": _f(d), "R_image": _f(r),
                    "R_flow": 0.0, "R_residual": 0.0})
    codec.eval()
    return logger.history


def pretrain_flow_compression(dataset: FrameDataset, codec: VideoCodec,
                              config: TrainConfig) -> list[dict]:
    """Stage 2: flow estimation + 4-channel flow compression on triplets.

    Distortion is the warp error of both references against the middle
    frame, computed with the DECODED flow so the codec is in the loop.
    freeze_flow pins the pyramid weights (bitwise) and trains only the
    flow autoencoder.
    """
    if config.stage is not TrainStage.FLOW_COMPRESSION_PRETRAIN:
        raise ConfigurationError(f"wrong stage {config.stage} for pretrain_flow_compression")
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    groups = _trainable(codec, config)
    for p in codec.flow_net.parameters():
        p.requires_grad_(not config.freeze_flow)
    opt = _make_optimizer([p for ps in groups.values() for p in ps], config)
    logger = TrainLogger(config.log_path)
    codec.train()
    pixels = config.batch_size * config.crop * config.crop
    for step in range(config.steps):
        clips = _sample_clips(dataset, rng, config.batch_size, 3, config.crop,
                              config.augmentation)
        past, current, future = clips[:, 0], clips[:, 1], clips[:, 2]
        flow_pair = estimate_bidirectional_flow(past, future, current, codec.flow_net)
        f_hat, _, _, _, bits = codec.flow_codec.code(flow_pair.packed(), QuantizerMode.NOISE, gen)
        decoded = FlowPair.from_packed(f_hat)
        x_pw = warp(past, decoded.backward_flow)
        x_fw = warp(future, decoded.forward_flow)
        d = 0.5 * (((x_pw - current) ** 2).mean() + ((x_fw - current) ** 2).mean())
        r = bits / pixels
        loss = config.lam * d + r
        opt.zero_grad()
        loss.backward()
        opt.step()
        logger.log({"step": step, "stage": config.stage.value, "lambda": config.lam,
                    "L": _f(loss), "D": _f(d), "R_image": 0.0,
                    "R_flow": _f(r), "R_residual": 0.0})
    for p in codec.flow_net.parameters():
        p.requires_grad_(True)
    codec.eval()
    return logger.history


def _audit_gradients(groups: dict[str, list]):
    dead = []
    for name, params in groups.items():
        if not any(p.grad is not None and bool(p.grad.abs().max() > 0) for p in params):
            dead.append(name)
    if dead:
        raise TrainingError(f"no gradient reached parameter group(s): {', '.join(dead)}")


def train_end_to_end(dataset: FrameDataset, codec: VideoCodec, config: TrainConfig,
                     audit: bool = True) -> list[dict]:
    """Single optimizer over all modules, GOP-level loss, noise quantization.

    The first backward pass is audited: every trainable parameter group must
    receive a nonzero gradient, otherwise training aborts. This is the
    end-to-end differentiability contract, not an optional warning.
    """
    if config.stage is not TrainStage.END_TO_END:
        raise ConfigurationError(f"wrong stage {config.stage} for train_end_to_end")
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    groups = _trainable(codec, config)
    for p in codec.flow_net.parameters():
        p.requires_grad_(not config.freeze_flow)
    opt = _make_optimizer([p for ps in groups.values() for p in ps], config)
    logger = TrainLogger(config.log_path)
    codec.train()
    n = config.gop_size
    pixels = config.batch_size * (n + 1) * config.crop * config.crop
    for step in range(config.steps):
        clips = _sample_clips(dataset, rng, config.batch_size, n + 1, config.crop,
                              config.augmentation)
        frames = [clips[:, t] for t in range(n + 1)]
        _, _, breakdown = encode_gop(frames, codec, QuantizerMode.NOISE, config.lam,
                                     generator=gen)
        norm = breakdown.normalized(pixels)
        opt.zero_grad()
        norm.L.backward()
        if step == 0 and audit:
            _audit_gradients(groups)
        opt.step()
        logger.log({"step": step, "stage": config.stage.value, "lambda": config.lam,
                    "L": _f(norm.L), "D": _f(norm.D),
                    "R_image": _f(norm.R_image), "R_flow": _f(norm.R_flow),
                    "R_residual": _f(norm.R_residual)})
    for p in codec.flow_net.parameters():
        p.requires_grad_(True)
    codec.eval()
    return logger.history


@torch.no_grad()
def evaluate(codec: VideoCodec, dataset: FrameDataset, gop_size: int = 4,
             use_bitstream: str = "auto") -> tuple[float, float]:
    """(bpp, psnr) over the dataset with hard quantization.

    use_bitstream: "always" counts real container bytes (requires the coder
    backend), "never" uses the entropy-model estimate, "auto" prefers real
    bytes but falls back to the estimate when the backend is missing.
    """
    from . import bitstream
    from .errors import EnvironmentUnavailableError

    codec.eval()
    total_bits = 0.0
    total_frames = 0
    originals, recons = [], []
    for i in range(len(dataset)):
        frames_all = dataset.load_sequence(i)
        usable = ((frames_all.shape[0] - 1) // gop_size) * gop_size + 1
        if usable < gop_size + 1:
            continue
        frames = [frames_all[t : t + 1] for t in range(usable)]
        encoded_gops, recon, breakdowns = encode_sequence(
            frames, codec, gop_size, QuantizerMode.ROUND)
        if use_bitstream in ("always", "auto"):
            try:
                blob = bitstream.write_stream(encoded_gops, codec)
                total_bits += len(blob) * 8
            except EnvironmentUnavailableError:
                if use_bitstream == "always":
                    raise
                total_bits += sum(float(b.total_bits) for b in breakdowns)
        else:
            total_bits += sum(float(b.total_bits) for b in breakdowns)
        total_frames += usable
        originals.extend(frames)
        recons.extend(recon)
    if total_frames == 0:
        raise DataError(f"no sequence long enough for GOP size {gop_size}")
    return (bits_per_pixel(total_bits, total_frames, dataset.height, dataset.width),
            compute_psnr(originals, recons))


def lambda_sweep(lams: list[float], base_config: TrainConfig, init_codec: VideoCodec,
                 train_dataset: FrameDataset, eval_dataset: FrameDataset,
                 use_bitstream: str = "auto") -> list[RdPoint]:
    """Train (or fine-tune) one model per trade-off weight, largest first.

    Each run starts from a copy of init_codec, so passing pretrained weights
    turns the sweep into fine-tuning. Points carry the exact lam used.
    """
    if len(lams) < 2:
        raise ConfigurationError("lambda sweep needs at least 2 values")
    if sorted(lams) != list(lams):
        raise ConfigurationError("lambda values must be sorted ascending")
    points = []
    for lam in lams:
        try:
            codec = copy.deepcopy(init_codec)
            config = replace(base_config, lam=lam, stage=TrainStage.END_TO_END)
            train_end_to_end(train_dataset, codec, config, audit=False)
            rate, quality = evaluate(codec, eval_dataset, base_config.gop_size, use_bitstream)
        except Exception as exc:
            raise TrainingError(f"lambda={lam}: {exc}") from exc
        points.append(RdPoint(lam=lam, bpp=rate, psnr=quality))
    return points
