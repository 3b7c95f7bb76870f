"""Network constructors: strided autoencoders, hyperprior nets, mask U-net,
pyramid flow estimator and the residual-block post-processor.

Strided autoencoder convolutions use 5x5 kernels; hyper, mask and
residual-block convolutions use 3x3.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .entropy import B_MIN, LaplaceParams
from .errors import ConfigurationError, ShapeError
from .layers import GDN
from .motion import warp


@dataclass(frozen=True)
class TensorSpec:
    """Shape contract for tensors entering the codec."""

    batch: int
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.batch, self.channels, self.height, self.width) < 1:
            raise ShapeError(f"all dims must be >= 1, got {self}")

    def validate_frame(self, multiple: int = 64) -> None:
        if self.height % multiple or self.width % multiple:
            raise ShapeError(
                f"frame dims {self.height}x{self.width} not divisible by {multiple}"
            )


@dataclass(frozen=True)
class AutoencoderConfig:
    input_channels: int = 3
    hidden_channels: int = 96
    latent_channels: int = 192
    down_layers: int = 4
    hyper_down_layers: int = 2
    hyper_channels: int | None = None  # defaults to hidden_channels
    mean_scale: bool = True  # hyper decoder predicts mu as well as b

    def __post_init__(self):
        if min(self.input_channels, self.hidden_channels, self.latent_channels) < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if self.down_layers < 1 or self.hyper_down_layers < 1:
            raise ConfigurationError("layer counts must be >= 1")

    @property
    def hyper_width(self) -> int:
        return self.hyper_channels if self.hyper_channels is not None else self.hidden_channels

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.down_layers


def _check_divisible(h, w, factor, what):
    if h % factor or w % factor:
        raise ShapeError(f"{what} dims {h}x{w} not divisible by {factor}")


class AnalysisTransform(nn.Module):
    """Strided conv encoder with GDN between downsampling layers."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        layers = []
        c_in = config.input_channels
        for i in range(config.down_layers):
            last = i == config.down_layers - 1
            c_out = config.latent_channels if last else config.hidden_channels
            layers.append(nn.Conv2d(c_in, c_out, kernel_size=5, stride=2, padding=2))
            if not last:
                layers.append(GDN(c_out))
            c_in = c_out
        self.layers = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        _check_divisible(x.shape[-2], x.shape[-1], self.config.downsample_factor, "input")
        return self.layers(x)


class SynthesisTransform(nn.Module):
    """Mirror decoder: transposed convs with IGDN, back to input channels."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        layers = []
        c_in = config.latent_channels
        for i in range(config.down_layers):
            last = i == config.down_layers - 1
            c_out = config.input_channels if last else config.hidden_channels
            layers.append(
                nn.ConvTranspose2d(c_in, c_out, kernel_size=5, stride=2, padding=2, output_padding=1)
            )
            if not last:
                layers.append(GDN(c_out, inverse=True))
            c_in = c_out
        self.layers = nn.Sequential(*layers)

    def forward(self, y: Tensor) -> Tensor:
        return self.layers(y)


def build_image_autoencoder(config: AutoencoderConfig) -> tuple[AnalysisTransform, SynthesisTransform]:
    """Main latent encoder/decoder pair (images, flow pairs or residuals)."""
    return AnalysisTransform(config), SynthesisTransform(config)


class HyperAnalysis(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        c = config.hyper_width
        layers = [nn.Conv2d(config.latent_channels, c, kernel_size=3, stride=1, padding=1), nn.ReLU()]
        for i in range(config.hyper_down_layers):
            layers.append(nn.Conv2d(c, c, kernel_size=3, stride=2, padding=1))
            if i != config.hyper_down_layers - 1:
                layers.append(nn.ReLU())
        self.layers = nn.Sequential(*layers)

    def forward(self, y: Tensor) -> Tensor:
        factor = 2 ** self.config.hyper_down_layers
        _check_divisible(y.shape[-2], y.shape[-1], factor, "latent")
        return self.layers(y)


class HyperSynthesis(nn.Module):
    """Maps quantized hyper latents to per-element Laplace parameters.

    The scale output is reparameterized through softplus with floor B_MIN.
    With mean_scale off the location is fixed at zero.
    """

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = config
        c = config.hyper_width
        layers = []
        for _ in range(config.hyper_down_layers):
            layers.append(nn.ConvTranspose2d(c, c, kernel_size=3, stride=2, padding=1, output_padding=1))
            layers.append(nn.ReLU())
        out_channels = 2 * config.latent_channels if config.mean_scale else config.latent_channels
        layers.append(nn.Conv2d(c, out_channels, kernel_size=3, stride=1, padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, z_hat: Tensor) -> LaplaceParams:
        out = self.layers(z_hat)
        if self.config.mean_scale:
            mu, raw_b = out.chunk(2, dim=1)
        else:
            mu, raw_b = torch.zeros_like(out), out
        return LaplaceParams(mu=mu, b=B_MIN + F.softplus(raw_b))


def build_hyper_autoencoder(config: AutoencoderConfig) -> tuple[HyperAnalysis, HyperSynthesis]:
    return HyperAnalysis(config), HyperSynthesis(config)


@dataclass(frozen=True)
class MaskUnetConfig:
    in_channels: int = 6  # two warped frames
    base_channels: int = 32
    depth: int = 3


class MaskUnet(nn.Module):
    """U-shaped fusion-mask estimator; sigmoid output, one channel per pixel.

    The final conv starts at zero so the untrained mask is 0.5 everywhere
    (plain averaging of the two warped references).
    """

    def __init__(self, config: MaskUnetConfig = MaskUnetConfig()):
        super().__init__()
        self.config = config
        c = config.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_channels, c, 3, padding=1), nn.ReLU(),
            nn.Conv2d(c, c, 3, padding=1), nn.ReLU(),
        )
        downs, ups = [], []
        chans = [c * 2 ** i for i in range(config.depth + 1)]
        for i in range(config.depth):
            downs.append(nn.Sequential(
                nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1), nn.ReLU(),
                nn.Conv2d(chans[i + 1], chans[i + 1], 3, padding=1), nn.ReLU(),
            ))
            # after upsample, concatenated with the matching skip
            ups.append(nn.Sequential(
                nn.Conv2d(chans[i + 1] + chans[i], chans[i], 3, padding=1), nn.ReLU(),
                nn.Conv2d(chans[i], chans[i], 3, padding=1), nn.ReLU(),
            ))
        self.downs = nn.ModuleList(downs)
        self.ups = nn.ModuleList(ups[::-1])
        self.head = nn.Conv2d(c, 1, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, warped_pair: Tensor) -> Tensor:
        factor = 2 ** self.config.depth
        _check_divisible(warped_pair.shape[-2], warped_pair.shape[-1], factor, "mask input")
        x = self.stem(warped_pair)
        skips = [x]
        for down in self.downs:
            x = down(x)
            skips.append(x)
        skips.pop()
        for up in self.ups:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = up(torch.cat([x, skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))


def build_mask_unet(config: MaskUnetConfig = MaskUnetConfig()) -> MaskUnet:
    return MaskUnet(config)


class _FlowLevel(nn.Module):
    """Per-level increment predictor: (warped ref, current, upsampled flow) -> delta flow."""

    def __init__(self, channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(8, channels, 5, padding=2), nn.ReLU(),
            nn.Conv2d(channels, channels, 5, padding=2), nn.ReLU(),
            nn.Conv2d(channels, channels // 2, 5, padding=2), nn.ReLU(),
            nn.Conv2d(channels // 2, 2, 5, padding=2),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class FlowPyramid(nn.Module):
    """Coarse-to-fine residual flow estimator.

    forward(reference, current) returns a B x 2 x H x W displacement field on
    the current-frame grid such that warp(reference, flow) approximates
    current. Resolution doubles per level; increments start from zero flow at
    the coarsest level.
    """

    def __init__(self, levels: int, channels: int = 32):
        super().__init__()
        if levels < 1:
            raise ConfigurationError(f"levels must be >= 1, got {levels}")
        self.levels = levels
        self.stages = nn.ModuleList(_FlowLevel(channels) for _ in range(levels))

    def forward(self, reference: Tensor, current: Tensor) -> Tensor:
        if reference.shape != current.shape:
            raise ShapeError(
                f"reference {tuple(reference.shape)} != current {tuple(current.shape)}"
            )
        factor = 2 ** (self.levels - 1)
        _check_divisible(reference.shape[-2], reference.shape[-1], factor, "frame")

        refs, curs = [reference], [current]
        for _ in range(self.levels - 1):
            refs.append(F.avg_pool2d(refs[-1], 2))
            curs.append(F.avg_pool2d(curs[-1], 2))

        flow = torch.zeros(
            reference.shape[0], 2, curs[-1].shape[-2], curs[-1].shape[-1],
            dtype=reference.dtype, device=reference.device,
        )
        for level, stage in enumerate(self.stages):
            ref_l, cur_l = refs[-1 - level], curs[-1 - level]
            if level > 0:
                flow = 2.0 * F.interpolate(flow, scale_factor=2, mode="bilinear", align_corners=False)
            warped = warp(ref_l, flow)
            flow = flow + stage(torch.cat([warped, cur_l, flow], dim=1))
        return flow


def build_flow_pyramid(levels: int, channels: int = 32) -> FlowPyramid:
    return FlowPyramid(levels, channels)


@dataclass(frozen=True)
class PostprocConfig:
    blocks: int = 12
    channels: int = 64
    image_channels: int = 3


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


class PostProcessor(nn.Module):
    """Residual-block artifact-reduction unit with a global skip connection.

    Output = input + head(blocks(stem(input))); the head conv starts at zero
    so the unit is the identity at construction.
    """

    def __init__(self, config: PostprocConfig = PostprocConfig()):
        super().__init__()
        self.config = config
        self.stem = nn.Conv2d(config.image_channels, config.channels, 3, padding=1)
        self.blocks = nn.Sequential(*(ResidualBlock(config.channels) for _ in range(config.blocks)))
        self.head = nn.Conv2d(config.channels, config.image_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.head(self.blocks(self.stem(x)))


def build_postproc(config: PostprocConfig = PostprocConfig()) -> PostProcessor:
    return PostProcessor(config)
