"""Codec assembly: configuration and the bundle of trainable submodules.

One latent codec (analysis/synthesis + hyperprior) instance each for intra
frames, packed flow pairs and residuals; plus the pyramid flow estimator,
the fusion-mask U-net and the post-processing unit.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import torch
from torch import Tensor, nn

from .entropy import LaplaceParams, QuantizerMode, hyper_rate_bits, quantize, rate_bits
from .networks import (
    AutoencoderConfig,
    MaskUnetConfig,
    PostprocConfig,
    build_hyper_autoencoder,
    build_image_autoencoder,
    build_flow_pyramid,
    build_mask_unet,
    build_postproc,
)


@dataclass(frozen=True)
class CodecConfig:
    """Desk-scale defaults; paper() gives the full-size variant."""

    hidden_channels: int = 48
    latent_channels: int = 96
    down_layers: int = 4
    hyper_down_layers: int = 2
    mean_scale: bool = True
    flow_levels: int = 3
    flow_channels: int = 32
    mask_base_channels: int = 32
    mask_depth: int = 3
    postproc_blocks: int = 12
    postproc_channels: int = 64

    @staticmethod
    def paper() -> "CodecConfig":
        return CodecConfig(hidden_channels=96, latent_channels=192)

    @staticmethod
    def tiny() -> "CodecConfig":
        """Light variant for CPU training runs and fast tests."""
        return CodecConfig(
            hidden_channels=32,
            latent_channels=64,
            flow_channels=16,
            mask_base_channels=16,
            postproc_blocks=4,
            postproc_channels=32,
        )

    def autoencoder(self, input_channels: int) -> AutoencoderConfig:
        return AutoencoderConfig(
            input_channels=input_channels,
            hidden_channels=self.hidden_channels,
            latent_channels=self.latent_channels,
            down_layers=self.down_layers,
            hyper_down_layers=self.hyper_down_layers,
            mean_scale=self.mean_scale,
        )

    @property
    def frame_multiple(self) -> int:
        return 2 ** (self.down_layers + self.hyper_down_layers)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CodecConfig":
        return CodecConfig(**json.loads(text))

    @property
    def model_id(self) -> int:
        """One-byte config fingerprint carried in the stream header."""
        return zlib.crc32(self.to_json().encode()) & 0xFF


class LatentCodec(nn.Module):
    """Analysis/synthesis pair plus its hyperprior."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        self.enc, self.dec = build_image_autoencoder(config)
        self.hyper_enc, self.hyper_dec = build_hyper_autoencoder(config)

    def code(self, x: Tensor, mode: QuantizerMode, generator=None):
        """Full quantized round trip; returns (x_hat, y_hat, z_hat, params, bits)."""
        y = self.enc(x)
        z = self.hyper_enc(y)
        z_hat = quantize(z, mode, generator)
        params = self.hyper_dec(z_hat)
        y_hat = quantize(y, mode, generator)
        bits = rate_bits(y_hat, params) + hyper_rate_bits(z_hat)
        return self.dec(y_hat), y_hat, z_hat, params, bits

    def decode_latents(self, y_hat: Tensor) -> Tensor:
        return self.dec(y_hat)

    def params_from_hyper(self, z_hat: Tensor) -> LaplaceParams:
        return self.hyper_dec(z_hat)


class VideoCodec(nn.Module):
    """All trainable components of the GOP codec.

    The top-level children are the parameter groups audited during
    end-to-end training.
    """

    def __init__(self, config: CodecConfig = CodecConfig()):
        super().__init__()
        self.config = config
        self.image_codec = LatentCodec(config.autoencoder(3))
        self.flow_codec = LatentCodec(config.autoencoder(4))
        self.residual_codec = LatentCodec(config.autoencoder(3))
        self.flow_net = build_flow_pyramid(config.flow_levels, config.flow_channels)
        self.mask_net = build_mask_unet(
            MaskUnetConfig(base_channels=config.mask_base_channels, depth=config.mask_depth)
        )
        self.postproc = build_postproc(
            PostprocConfig(blocks=config.postproc_blocks, channels=config.postproc_channels)
        )

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {name: list(child.parameters()) for name, child in self.named_children()}

    @staticmethod
    def seeded(config: CodecConfig, seed: int) -> "VideoCodec":
        """Deterministically initialized codec (same seed, same weights)."""
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return VideoCodec(config)
