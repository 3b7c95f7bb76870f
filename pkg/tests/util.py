"""Shared test oracles: finite differences and a brute-force bilinear warp."""

import math

import numpy as np
import torch


def fd_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite differences of a scalar function w.r.t. every element."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.abs().max()), float(b.abs().max()), 1e-12)
    return float((a - b).abs().max()) / denom


def warp_oracle(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Reference backward warp: per-pixel clamped bilinear sampling.

    frame (B,C,H,W), flow (B,2,H,W) with channels (dx, dy).
    """
    b, c, h, w = frame.shape
    out = np.zeros_like(frame)
    for bi in range(b):
        for y in range(h):
            for x in range(w):
                sx = min(max(x + flow[bi, 0, y, x], 0.0), w - 1.0)
                sy = min(max(y + flow[bi, 1, y, x], 0.0), h - 1.0)
                x0 = int(math.floor(sx))
                y0 = int(math.floor(sy))
                x1 = min(x0 + 1, w - 1)
                y1 = min(y0 + 1, h - 1)
                wx = sx - x0
                wy = sy - y0
                for ci in range(c):
                    v00 = frame[bi, ci, y0, x0]
                    v01 = frame[bi, ci, y0, x1]
                    v10 = frame[bi, ci, y1, x0]
                    v11 = frame[bi, ci, y1, x1]
                    top = v00 * (1 - wx) + v01 * wx
                    bot = v10 * (1 - wx) + v11 * wx
                    out[bi, ci, y, x] = top * (1 - wy) + bot * wy
    return out
