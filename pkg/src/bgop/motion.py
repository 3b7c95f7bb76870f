"""Bi-directional motion: differentiable backward warping, flow-pair packing
and learned mask fusion.

Convention: flow fields live on the current-frame pixel grid and give, per
output pixel, the displacement (x, y) at which the reference is sampled, so
warp(reference, flow) predicts the current frame. Sampling coordinates
outside the reference are clamped to the border.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ShapeError


def warp(frame: Tensor, flow: Tensor) -> Tensor:
    """Backward bilinear warp: output(p) = bilinear(frame, p + flow(p))."""
    if frame.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2:
        raise ShapeError(
            f"expected frame (B,C,H,W) and flow (B,2,H,W), got {tuple(frame.shape)} / {tuple(flow.shape)}"
        )
    if frame.shape[-2:] != flow.shape[-2:] or frame.shape[0] != flow.shape[0]:
        raise ShapeError(
            f"frame {tuple(frame.shape)} and flow {tuple(flow.shape)} do not align"
        )
    b, _, h, w = flow.shape
    xs = torch.arange(w, dtype=frame.dtype, device=frame.device)
    ys = torch.arange(h, dtype=frame.dtype, device=frame.device)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    sample_x = grid_x.unsqueeze(0) + flow[:, 0]
    sample_y = grid_y.unsqueeze(0) + flow[:, 1]
    # normalize to [-1, 1]; border padding clamps out-of-range coordinates
    gx = 2.0 * sample_x / max(w - 1, 1) - 1.0
    gy = 2.0 * sample_y / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1)
    return F.grid_sample(frame, grid, mode="bilinear", padding_mode="border", align_corners=True)


@dataclass
class FlowPair:
    """Displacement fields from the current frame into both references.

    backward_flow samples the past reference, forward_flow the future one.
    Packed layout is fixed: channels (past x, past y, future x, future y).
    """

    backward_flow: Tensor
    forward_flow: Tensor

    def __post_init__(self):
        if self.backward_flow.shape != self.forward_flow.shape:
            raise ShapeError("flow halves must share shape")
        if self.backward_flow.shape[1] != 2:
            raise ShapeError("each flow half must have 2 channels")

    def packed(self) -> Tensor:
        return torch.cat([self.backward_flow, self.forward_flow], dim=1)

    @staticmethod
    def from_packed(packed: Tensor) -> "FlowPair":
        if packed.shape[1] != 4:
            raise ShapeError(f"packed flow must have 4 channels, got {packed.shape[1]}")
        return FlowPair(backward_flow=packed[:, 0:2], forward_flow=packed[:, 2:4])


class WarpResult(NamedTuple):
    x_pw: Tensor  # warped past reference
    x_fw: Tensor  # warped future reference


def estimate_bidirectional_flow(past_ref: Tensor, future_ref: Tensor, current: Tensor, net) -> FlowPair:
    """Run the pyramid flow net against both (decoded) references."""
    if past_ref.shape != current.shape or future_ref.shape != current.shape:
        raise ShapeError("past/future/current frames must share shape")
    return FlowPair(
        backward_flow=net(past_ref, current),
        forward_flow=net(future_ref, current),
    )


def fuse(warped: WarpResult, mask: Tensor) -> Tensor:
    """Per-pixel convex blend: mask * x_pw + (1 - mask) * x_fw."""
    if mask.shape[1] != 1 or mask.shape[-2:] != warped.x_pw.shape[-2:]:
        raise ShapeError(f"mask shape {tuple(mask.shape)} does not align with warped frames")
    return mask * warped.x_pw + (1.0 - mask) * warped.x_fw


def motion_compensate(past_ref: Tensor, future_ref: Tensor, decoded_flow: FlowPair, mask_net) -> Tensor:
    """Warp both references with the reconstructed flow pair and fuse them."""
    warped = WarpResult(
        x_pw=warp(past_ref, decoded_flow.backward_flow),
        x_fw=warp(future_ref, decoded_flow.forward_flow),
    )
    mask = mask_net(torch.cat([warped.x_pw, warped.x_fw], dim=1))
    return fuse(warped, mask)
