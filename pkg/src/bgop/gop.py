"""Hierarchical GOP scheduling and the closed-loop encode/decode engine.

A GOP of size N (power of two) codes frames 0 and N independently, then
bisects: the midpoint of every interval is coded bi-directionally from its
two already-reconstructed endpoints, recursively. Reconstructed frames are
post-processed before being used as references, on both encoder and decoder
sides, so the loop cannot drift.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import torch
from torch import Tensor

from .codec import VideoCodec
from .entropy import QuantizerMode
from .errors import ConfigurationError, DecodeError, ShapeError
from .motion import FlowPair, estimate_bidirectional_flow, motion_compensate


class UnitKind(enum.Enum):
    INTRA = "intra"
    BIDIRECTIONAL = "bidirectional"


@dataclass(frozen=True)
class CodingUnit:
    target_index: int
    kind: UnitKind
    left_ref: int | None = None
    right_ref: int | None = None

    def __post_init__(self):
        if self.kind is UnitKind.BIDIRECTIONAL:
            if self.left_ref is None or self.right_ref is None:
                raise ConfigurationError("bidirectional unit needs two references")
            if not (self.left_ref < self.target_index < self.right_ref):
                raise ConfigurationError(f"references must bracket the target: {self}")
            if 2 * self.target_index != self.left_ref + self.right_ref:
                raise ConfigurationError(f"target must be the interval midpoint: {self}")


@dataclass(frozen=True)
class GopStructure:
    gop_size: int
    schedule: tuple[CodingUnit, ...]


def coding_schedule(gop_size: int) -> GopStructure:
    """Dyadic coding order for one GOP: 0(I), N(I), then midpoints depth-first."""
    if gop_size < 1 or gop_size & (gop_size - 1):
        raise ConfigurationError(f"gop size must be a power of 2, got {gop_size}")
    units = [
        CodingUnit(0, UnitKind.INTRA),
        CodingUnit(gop_size, UnitKind.INTRA),
    ]

    def bisect(left, right):
        if right - left <= 1:
            return
        mid = (left + right) // 2
        units.append(CodingUnit(mid, UnitKind.BIDIRECTIONAL, left, right))
        bisect(left, mid)
        bisect(mid, right)

    bisect(0, gop_size)
    return GopStructure(gop_size=gop_size, schedule=tuple(units))


@dataclass
class LossBreakdown:
    """Distortion, per-category rates and the scalar GOP loss.

    Rates are in bits as accumulated by the engine; normalized() rescales
    them to bits per pixel so the trade-off weight transfers across frame
    sizes. The decomposition L = lam * D + R_image + R_flow + R_residual
    holds exactly in either scaling.
    """

    D: Tensor | float
    R_image: Tensor | float
    R_flow: Tensor | float
    R_residual: Tensor | float
    lam: float
    L: Tensor | float = field(init=False)

    def __post_init__(self):
        for name in ("D", "R_image", "R_flow", "R_residual"):
            v = getattr(self, name)
            if float(v.detach() if torch.is_tensor(v) else v) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        self.L = self.lam * self.D + self.R_image + self.R_flow + self.R_residual

    @property
    def total_bits(self):
        return self.R_image + self.R_flow + self.R_residual

    def normalized(self, pixel_count: int) -> "LossBreakdown":
        return LossBreakdown(
            D=self.D,
            R_image=self.R_image / pixel_count,
            R_flow=self.R_flow / pixel_count,
            R_residual=self.R_residual / pixel_count,
            lam=self.lam,
        )

    def detached(self) -> "LossBreakdown":
        def f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return LossBreakdown(f(self.D), f(self.R_image), f(self.R_flow), f(self.R_residual), self.lam)


def rd_loss(d, r_image, r_flow, r_residual, lam: float) -> LossBreakdown:
    """Rate-distortion loss: L = lam * D + R_image + R_flow + R_residual."""
    return LossBreakdown(D=d, R_image=r_image, R_flow=r_flow, R_residual=r_residual, lam=lam)


@dataclass
class LatentStream:
    """Quantized main+hyper symbols for one latent coding."""

    main_symbols: Tensor  # int32, shape (B, C, h, w)
    hyper_symbols: Tensor  # int32, shape (B, Cz, h', w')


@dataclass
class EncodedUnit:
    target_index: int
    kind: UnitKind
    left_ref: int | None
    right_ref: int | None
    streams: dict[str, LatentStream]  # "image" | "flow", "residual"


@dataclass
class EncodedGop:
    """Closed-loop payload of one GOP, decodable without the originals."""

    batch: int
    height: int
    width: int
    gop_size: int
    model_id: int
    left_key_skipped: bool
    units: list[EncodedUnit]


def _to_symbols(x_hat: Tensor) -> Tensor:
    return x_hat.detach().to(torch.int32)


def _from_symbols(symbols: Tensor, dtype, device) -> Tensor:
    return symbols.to(device=device, dtype=dtype)


def encode_gop(
    frames: list[Tensor],
    codec: VideoCodec,
    mode: QuantizerMode,
    lam: float,
    generator: torch.Generator | None = None,
    left_key: Tensor | None = None,
) -> tuple[EncodedGop, list[Tensor], LossBreakdown]:
    """Encode N+1 frames through the hierarchical pipeline.

    Returns the encoded payload, the reconstructed frames (identical to what
    the decoder will produce in ROUND mode) and the loss breakdown with rates
    in bits. When left_key is given, frame 0 is taken as that already-decoded
    key frame and contributes neither bits nor distortion (its bits belong to
    the previous GOP).
    """
    gop_size = len(frames) - 1
    structure = coding_schedule(gop_size)
    b, c, h, w = frames[0].shape
    multiple = codec.config.frame_multiple
    for i, f in enumerate(frames):
        if f.shape != frames[0].shape:
            raise ShapeError(f"frame {i} shape {tuple(f.shape)} != frame 0 {tuple(frames[0].shape)}")
    if h % multiple or w % multiple:
        raise ShapeError(f"frame dims {h}x{w} not divisible by {multiple}")
    if left_key is not None and left_key.shape != frames[0].shape:
        raise ShapeError("left_key shape must match the frames")

    device, dtype = frames[0].device, frames[0].dtype
    zero = torch.zeros((), device=device, dtype=dtype)
    bits = {"image": zero.clone(), "flow": zero.clone(), "residual": zero.clone()}
    recon: dict[int, Tensor] = {}
    units: list[EncodedUnit] = []

    for unit in structure.schedule:
        t = unit.target_index
        if unit.kind is UnitKind.INTRA:
            if t == 0 and left_key is not None:
                recon[0] = left_key
                continue
            x_hat, y_hat, z_hat, _, unit_bits = codec.image_codec.code(frames[t], mode, generator)
            recon[t] = codec.postproc(x_hat)
            bits["image"] = bits["image"] + unit_bits
            units.append(EncodedUnit(t, unit.kind, None, None, {
                "image": LatentStream(_to_symbols(y_hat), _to_symbols(z_hat)),
            }))
        else:
            l, r = unit.left_ref, unit.right_ref
            flow_pair = estimate_bidirectional_flow(recon[l], recon[r], frames[t], codec.flow_net)
            f_hat, fy_hat, fz_hat, _, flow_bits = codec.flow_codec.code(flow_pair.packed(), mode, generator)
            decoded_flow = FlowPair.from_packed(f_hat)
            x_mc = motion_compensate(recon[l], recon[r], decoded_flow, codec.mask_net)
            residual = frames[t] - x_mc
            r_hat, ry_hat, rz_hat, _, res_bits = codec.residual_codec.code(residual, mode, generator)
            recon[t] = codec.postproc(x_mc + r_hat)
            bits["flow"] = bits["flow"] + flow_bits
            bits["residual"] = bits["residual"] + res_bits
            units.append(EncodedUnit(t, unit.kind, l, r, {
                "flow": LatentStream(_to_symbols(fy_hat), _to_symbols(fz_hat)),
                "residual": LatentStream(_to_symbols(ry_hat), _to_symbols(rz_hat)),
            }))

    counted = [i for i in range(gop_size + 1) if not (i == 0 and left_key is not None)]
    d = torch.stack([((frames[i] - recon[i]) ** 2).mean() for i in counted]).mean()
    breakdown = rd_loss(d, bits["image"], bits["flow"], bits["residual"], lam)
    encoded = EncodedGop(
        batch=b,
        height=h,
        width=w,
        gop_size=gop_size,
        model_id=codec.config.model_id,
        left_key_skipped=left_key is not None,
        units=units,
    )
    return encoded, [recon[i] for i in range(gop_size + 1)], breakdown


def decode_gop(
    encoded: EncodedGop,
    codec: VideoCodec,
    left_key: Tensor | None = None,
    dtype: torch.dtype = torch.float32,
    device=None,
) -> list[Tensor]:
    """Reproduce the encoder-side reconstruction from symbols alone."""
    if encoded.model_id != codec.config.model_id:
        raise DecodeError(
            f"model id mismatch: stream {encoded.model_id}, codec {codec.config.model_id}"
        )
    if encoded.left_key_skipped and left_key is None:
        raise DecodeError("stream depends on a previously decoded key frame; pass left_key")
    structure = coding_schedule(encoded.gop_size)
    recon: dict[int, Tensor] = {}
    if encoded.left_key_skipped:
        recon[0] = left_key
    units = iter(encoded.units)

    for index, unit in enumerate(structure.schedule):
        t = unit.target_index
        if t == 0 and encoded.left_key_skipped:
            continue
        try:
            payload = next(units)
        except StopIteration:
            raise DecodeError(f"payload truncated at unit {index}", unit_index=index) from None
        if payload.target_index != t or payload.kind is not unit.kind:
            raise DecodeError(f"payload order mismatch at unit {index}", unit_index=index)
        try:
            if unit.kind is UnitKind.INTRA:
                stream = payload.streams["image"]
                y_hat = _from_symbols(stream.main_symbols, dtype, device)
                recon[t] = codec.postproc(codec.image_codec.decode_latents(y_hat))
            else:
                l, r = unit.left_ref, unit.right_ref
                fs = payload.streams["flow"]
                f_hat = codec.flow_codec.decode_latents(_from_symbols(fs.main_symbols, dtype, device))
                decoded_flow = FlowPair.from_packed(f_hat)
                x_mc = motion_compensate(recon[l], recon[r], decoded_flow, codec.mask_net)
                rs = payload.streams["residual"]
                r_hat = codec.residual_codec.decode_latents(_from_symbols(rs.main_symbols, dtype, device))
                recon[t] = codec.postproc(x_mc + r_hat)
        except KeyError as exc:
            raise DecodeError(f"missing stream {exc} at unit {index}", unit_index=index) from None
        except (RuntimeError, ShapeError) as exc:
            raise DecodeError(f"corrupt payload at unit {index}: {exc}", unit_index=index) from None
    return [recon[i] for i in range(encoded.gop_size + 1)]


def gop_pixel_count(frames: list[Tensor], left_key_skipped: bool = False) -> int:
    """Pixels covered by the bits of one GOP (shared key counted once)."""
    coded = len(frames) - (1 if left_key_skipped else 0)
    _, _, h, w = frames[0].shape
    return coded * h * w


def encode_sequence(
    frames: list[Tensor],
    codec: VideoCodec,
    gop_size: int,
    mode: QuantizerMode,
    lam: float = 1.0,
    generator: torch.Generator | None = None,
):
    """Chain GOPs over a frame sequence, sharing key-frame reconstructions.

    Requires len(frames) = G * gop_size + 1. Returns (encoded gops, recon
    frames, breakdowns per gop).
    """
    if (len(frames) - 1) % gop_size or len(frames) < gop_size + 1:
        raise ConfigurationError(
            f"sequence length {len(frames)} does not cover whole GOPs of size {gop_size}"
        )
    encoded_gops, breakdowns = [], []
    recon: list[Tensor] = []
    left_key = None
    for start in range(0, len(frames) - 1, gop_size):
        chunk = frames[start : start + gop_size + 1]
        encoded, chunk_recon, breakdown = encode_gop(chunk, codec, mode, lam, generator, left_key=left_key)
        encoded_gops.append(encoded)
        breakdowns.append(breakdown)
        recon.extend(chunk_recon if left_key is None else chunk_recon[1:])
        left_key = chunk_recon[-1]
    return encoded_gops, recon, breakdowns


def decode_sequence(encoded_gops: list[EncodedGop], codec: VideoCodec, dtype=torch.float32, device=None):
    recon: list[Tensor] = []
    left_key = None
    for encoded in encoded_gops:
        frames = decode_gop(encoded, codec, left_key=left_key, dtype=dtype, device=device)
        recon.extend(frames if left_key is None else frames[1:])
        left_key = frames[-1]
    return recon
