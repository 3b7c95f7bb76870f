"""Channel-coupled normalizing nonlinearities (GDN / IGDN).

Forward form: y_i = x_i * (beta_i + sum_j gamma_ij * x_j^2)^(-1/2),
inverse uses the +1/2 exponent, so inverse(forward(x)) == x for identical
parameters. The module variant stores unconstrained parameters mapped
through softplus with a small floor, keeping beta > 0 and gamma >= 0
without projection steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigurationError, ShapeError

REPARAM_FLOOR = 1e-6


@dataclass
class GdnParams:
    """Effective (already-positive) normalization parameters.

    beta: (C,) positive offsets; gamma: (C, C) nonnegative coupling weights.
    """

    beta: Tensor
    gamma: Tensor

    def __post_init__(self):
        if self.beta.ndim != 1:
            raise ShapeError(f"beta must be 1-D, got {self.beta.ndim}-D")
        c = self.beta.shape[0]
        if self.gamma.shape != (c, c):
            raise ShapeError(f"gamma must be ({c}, {c}), got {tuple(self.gamma.shape)}")
        if not bool((self.beta > 0).all()):
            raise ConfigurationError("beta must be strictly positive")
        if not bool((self.gamma >= 0).all()):
            raise ConfigurationError("gamma must be nonnegative")


def gdn(x: Tensor, params: GdnParams, inverse: bool = False) -> Tensor:
    """Apply (inverse) generalized divisive normalization to a B,C,H,W tensor."""
    c = params.beta.shape[0]
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError(
            f"expected input of shape (B, {c}, H, W), got {tuple(x.shape)}"
        )
    kernel = params.gamma.to(x.dtype).view(c, c, 1, 1)
    norm = F.conv2d(x * x, kernel, bias=params.beta.to(x.dtype))
    if inverse:
        return x * torch.sqrt(norm)
    return x * torch.rsqrt(norm)


def _inverse_softplus(y: Tensor) -> Tensor:
    # log(expm1(y)), stable for small y
    return y + torch.log(-torch.expm1(-y))


class GDN(nn.Module):
    """Learnable GDN/IGDN layer with reparameterized positive parameters.

    Initialized with beta = 1 and gamma = 0.1 on the diagonal (off-diagonal
    couplings start near zero).
    """

    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        self.channels = channels
        self.inverse = inverse
        beta0 = torch.ones(channels)
        gamma0 = 0.1 * torch.eye(channels) + 1e-4
        self._beta = nn.Parameter(_inverse_softplus(beta0 - REPARAM_FLOOR))
        self._gamma = nn.Parameter(_inverse_softplus(gamma0 - REPARAM_FLOOR))

    def params(self) -> GdnParams:
        return GdnParams(
            beta=F.softplus(self._beta) + REPARAM_FLOOR,
            gamma=F.softplus(self._gamma) + REPARAM_FLOOR,
        )

    def forward(self, x: Tensor) -> Tensor:
        return gdn(x, self.params(), inverse=self.inverse)

    def extra_repr(self) -> str:
        return f"channels={self.channels}, inverse={self.inverse}"
