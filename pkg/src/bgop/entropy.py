"""Probability models and quantization for latent tensors.

Main latents are modelled per element by a Laplace distribution whose
location/scale come from the hyper decoder; hyper latents use a fixed unit
Laplace. Discrete symbol probabilities integrate the density over unit bins
(CDF difference at +/-0.5), which matches the additive-uniform-noise training
surrogate. Rates are the summed -log2 of the (floored) bin probabilities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigurationError, ShapeError

# Scale floor applied at the hyper-decoder output; keeps bin widths and
# rate gradients finite.
B_MIN = 0.01

# Floor inside the log; bounds the per-element rate for outlier symbols.
P_FLOOR = 1e-9

# Hard symbol range: rounded latents are clamped here so every symbol fits
# the signed 16-bit fields of the coded stream and the decoder sees exactly
# the values the encoder reconstructed from.
SYMBOL_MIN = -32768
SYMBOL_MAX = 32767


@dataclass
class LaplaceParams:
    """Per-element location/scale of the latent symbol distribution."""

    mu: Tensor
    b: Tensor

    def __post_init__(self):
        if self.mu.shape != self.b.shape:
            raise ShapeError(
                f"mu shape {tuple(self.mu.shape)} != b shape {tuple(self.b.shape)}"
            )

    @staticmethod
    def unit(shape, dtype=torch.float32, device=None) -> "LaplaceParams":
        """mu=0, b=1 everywhere (the fixed hyper-latent prior)."""
        return LaplaceParams(
            mu=torch.zeros(shape, dtype=dtype, device=device),
            b=torch.ones(shape, dtype=dtype, device=device),
        )


class QuantizerMode(enum.Enum):
    NOISE = "noise"
    ROUND = "round"


def quantize(y: Tensor, mode: QuantizerMode, generator: torch.Generator | None = None) -> Tensor:
    """Quantize a latent tensor.

    NOISE adds iid U(-0.5, 0.5) (training surrogate, gradient passes
    through unchanged); ROUND maps to the nearest integer with half-away-
    from-zero tie-breaking, so -0.5 -> -1. The decoder must use the same
    rule when mapping symbols back to values. Rounded values are clamped
    to the signed 16-bit symbol range of the coded stream (a no-op for any
    sanely scaled latent).
    """
    if mode is QuantizerMode.NOISE:
        noise = torch.empty_like(y)
        noise.uniform_(-0.5, 0.5, generator=generator)
        return y + noise
    if mode is QuantizerMode.ROUND:
        rounded = torch.sign(y) * torch.floor(torch.abs(y) + 0.5)
        return torch.clamp(rounded, SYMBOL_MIN, SYMBOL_MAX)
    raise ConfigurationError(f"unknown quantizer mode: {mode!r}")


def laplace_bin_prob(k, params: LaplaceParams) -> Tensor:
    """Probability of the unit bin centred at k: F(k+0.5) - F(k-0.5).

    Evaluated in a symmetric, numerically stable form (all exponents are
    nonpositive). k may be fractional (noise-mode latents) and the result
    is differentiable w.r.t. k, mu and b.
    """
    if not torch.is_tensor(k):
        k = torch.as_tensor(k, dtype=params.b.dtype, device=params.b.device)
    a = torch.abs(k - params.mu)
    b = params.b
    # |k - mu| >= 0.5: both bin edges on the same side of the mode.
    tail = 0.5 * torch.exp(-(a - 0.5) / b) * (-torch.expm1(-1.0 / b))
    # |k - mu| < 0.5: bin straddles the mode.
    center = 1.0 - 0.5 * (torch.exp(-(0.5 - a) / b) + torch.exp(-(0.5 + a) / b))
    return torch.where(a >= 0.5, tail, center)


def rate_bits(y_hat: Tensor, params: LaplaceParams) -> Tensor:
    """Estimated bits for a quantized latent tensor (0-dim tensor, >= 0)."""
    if y_hat.shape != params.mu.shape:
        raise ShapeError(
            f"latent shape {tuple(y_hat.shape)} != params shape {tuple(params.mu.shape)}"
        )
    prob = laplace_bin_prob(y_hat, params)
    return -torch.log2(torch.clamp(prob, min=P_FLOOR)).sum()


def hyper_rate_bits(z_hat: Tensor) -> Tensor:
    """Estimated bits for hyper latents under the fixed unit Laplace prior."""
    return rate_bits(z_hat, LaplaceParams.unit(z_hat.shape, dtype=z_hat.dtype, device=z_hat.device))


def _laplace_cdf(x: Tensor, mu: Tensor, b: Tensor) -> Tensor:
    d = x - mu
    return torch.where(d < 0, 0.5 * torch.exp(d / b), 1.0 - 0.5 * torch.exp(-d / b))


@dataclass
class PmfTable:
    """Normalized symbol probabilities over an inclusive integer span.

    Tail mass outside the span is folded into the boundary symbols, the
    floor P_FLOOR is applied, and the table is rebalanced so the
    probabilities sum to 1 exactly (largest entry absorbs the residual).
    """

    symbol_min: int
    symbol_max: int
    probs: Tensor

    def __post_init__(self):
        if self.symbol_max < self.symbol_min:
            raise ConfigurationError(
                f"empty symbol span [{self.symbol_min}, {self.symbol_max}]"
            )
        n = self.symbol_max - self.symbol_min + 1
        if self.probs.shape[-1] != n:
            raise ShapeError(f"expected {n} probabilities, got {self.probs.shape[-1]}")


def build_pmf_tables(params: LaplaceParams, symbol_min: int, symbol_max: int) -> PmfTable:
    """Pmf tables over [symbol_min, symbol_max] for every element of params.

    Returns a PmfTable whose probs has shape params.shape + (span,), in
    float64 so the downstream 16-bit CDF quantization is reproducible.
    """
    if symbol_max < symbol_min:
        raise ConfigurationError(f"empty symbol span [{symbol_min}, {symbol_max}]")
    mu = params.mu.detach().to(torch.float64).reshape(-1, 1)
    b = params.b.detach().to(torch.float64).reshape(-1, 1)
    ks = torch.arange(symbol_min, symbol_max + 1, dtype=torch.float64)
    probs = laplace_bin_prob(ks.unsqueeze(0), LaplaceParams(mu=mu, b=b))
    # Fold everything left of the first bin and right of the last bin
    # into the boundary symbols.
    probs[:, 0] += _laplace_cdf(torch.tensor(symbol_min - 0.5, dtype=torch.float64), mu[:, 0], b[:, 0])
    probs[:, -1] += 1.0 - _laplace_cdf(torch.tensor(symbol_max + 0.5, dtype=torch.float64), mu[:, 0], b[:, 0])
    probs = torch.clamp(probs, min=P_FLOOR)
    probs = probs / probs.sum(dim=1, keepdim=True)
    # Push the (tiny) float residual into the largest symbol so each row
    # sums to 1 exactly in float64.
    residual = 1.0 - probs.sum(dim=1)
    idx = probs.argmax(dim=1)
    probs[torch.arange(probs.shape[0]), idx] += residual
    return PmfTable(
        symbol_min=symbol_min,
        symbol_max=symbol_max,
        probs=probs.reshape(params.mu.shape + (symbol_max - symbol_min + 1,)),
    )


def build_pmf_table(params: LaplaceParams, symbol_min: int, symbol_max: int) -> PmfTable:
    """Single-element convenience wrapper around build_pmf_tables."""
    if params.mu.numel() != 1:
        raise ConfigurationError("build_pmf_table expects a single-element params; use build_pmf_tables")
    table = build_pmf_tables(params, symbol_min, symbol_max)
    return PmfTable(symbol_min, symbol_max, table.probs.reshape(-1))
