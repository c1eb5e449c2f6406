"""Directional state-space scanning with zero-initialized output projections.

A 2D feature map is traversed as four 1D sequences (row-major, reversed
row-major, column-major, reversed column-major), so a linear recurrence sees
every pixel from every side and the block gets a global receptive field.
Each direction runs an independent per-channel recurrence with a diagonal
state transition:

    h_k = a * h_{k-1} + b * x_k        (h, a, b in R^d, elementwise)
    y_k = <c, h_k>

which unrolls to y_k = sum_{j<=k} K_{k-j} x_j with kernel
K_m = sum_d c_d a_d^m b_d. The scans are evaluated in that causal-convolution
form with FFTs; this is mathematically identical to stepping the recurrence
and far faster for long sequences.

Every block's output projection is zero at construction, so a fresh block
maps any input to zeros and can be inserted into a trained network without
changing its behaviour. No layer carries a bias, so zero input always maps
to zero output.
"""

from __future__ import annotations

import copy

import torch
from torch import nn

from .errors import ValidationError

_DIRECTIONS = 4


def cross_scan(feature_map: torch.Tensor) -> torch.Tensor:
    """Unroll a feature map (..., H, W) into four sequences (..., 4, H*W).

    Order: row-major, reversed row-major, column-major, reversed column-major.
    Each sequence is a permutation of all pixels.
    """
    if feature_map.ndim < 2:
        raise ValidationError("cross_scan needs at least a 2D feature map")
    h, w = feature_map.shape[-2], feature_map.shape[-1]
    lead = feature_map.shape[:-2]
    rows = feature_map.reshape(*lead, h * w)
    cols = feature_map.transpose(-2, -1).reshape(*lead, h * w)
    return torch.stack([rows, rows.flip(-1), cols, cols.flip(-1)], dim=-2)


def cross_merge(sequences: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Invert cross_scan and average the four directions back to (..., H, W)."""
    if sequences.shape[-2] != _DIRECTIONS:
        raise ValidationError("expected four directional sequences")
    if sequences.shape[-1] != height * width:
        raise ValidationError("sequence length does not match H*W")
    lead = sequences.shape[:-2]
    s0, s1, s2, s3 = sequences.unbind(dim=-2)
    m0 = s0.reshape(*lead, height, width)
    m1 = s1.flip(-1).reshape(*lead, height, width)
    m2 = s2.reshape(*lead, width, height).transpose(-2, -1)
    m3 = s3.flip(-1).reshape(*lead, width, height).transpose(-2, -1)
    return (m0 + m1 + m2 + m3) / 4.0


def ssm_scan(x: torch.Tensor, a: torch.Tensor, b: torch.Tensor,
             c: torch.Tensor) -> torch.Tensor:
    """Run the linear state-space recurrence along the last axis of x.

    x: (..., L); a, b, c: (..., d) broadcastable against x's leading dims.
    Returns y with y_k = sum_{j<=k} (sum_d c_d a_d^{k-j} b_d) x_j.
    """
    length = x.shape[-1]
    # a^m for m = 0..L-1 via cumprod (sign-safe, autograd-friendly)
    ones = torch.ones_like(a).unsqueeze(-1)
    powers = torch.cat([ones, a.unsqueeze(-1).expand(*a.shape, length - 1)],
                       dim=-1).cumprod(dim=-1) if length > 1 else ones
    kernel = ((b * c).unsqueeze(-1) * powers).sum(dim=-2)  # (..., L)
    n = 2 * length
    xf = torch.fft.rfft(x, n=n)
    kf = torch.fft.rfft(kernel, n=n)
    return torch.fft.irfft(xf * kf, n=n)[..., :length]


class Ss2dBlock(nn.Module):
    """Four-direction state-space mixer over channels-first feature maps.

    Maps (..., in_channels, H, W) to (..., out_channels, H, W). Each of the
    four scan directions has independent per-channel recurrence parameters;
    direction outputs are averaged and passed through a zero-initialized,
    bias-free 1x1 projection.
    """

    def __init__(self, in_channels: int, out_channels: int, state_dim: int = 4,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.state_dim = state_dim
        shape = (_DIRECTIONS, in_channels, state_dim)
        a_raw = torch.empty(shape, dtype=torch.float64)
        b = torch.empty(shape, dtype=torch.float64)
        c = torch.empty(shape, dtype=torch.float64)
        with torch.no_grad():
            # memory factor a = tanh(a_raw) stays in (-1, 1), keeping long
            # scan kernels bounded during training
            a_raw.uniform_(0.8, 1.8, generator=generator)
            scale = 4.5 / state_dim ** 0.5
            b.uniform_(-scale, scale, generator=generator)
            c.uniform_(-scale, scale, generator=generator)
        self.a_raw = nn.Parameter(a_raw)
        self.b = nn.Parameter(b)
        self.c = nn.Parameter(c)
        self.out_proj = nn.Conv2d(in_channels, out_channels, kernel_size=1,
                                  bias=False, dtype=torch.float64)
        with torch.no_grad():
            self.out_proj.weight.zero_()

    def scan_directions(self, x: torch.Tensor) -> torch.Tensor:
        """The averaged four-direction scan, before the output projection."""
        h, w = x.shape[-2], x.shape[-1]
        seqs = cross_scan(x)                      # (..., C, 4, L)
        seqs = seqs.transpose(-3, -2)             # (..., 4, C, L)
        a = torch.tanh(self.a_raw)
        y = ssm_scan(seqs, a, self.b, self.c)     # (..., 4, C, L)
        return cross_merge(y.transpose(-3, -2), h, w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim not in (3, 4):
            raise ValidationError(
                f"expected (C, H, W) or (B, C, H, W), got shape {tuple(x.shape)}")
        if x.shape[-3] != self.in_channels:
            raise ValidationError(
                f"expected {self.in_channels} channels, got {x.shape[-3]}")
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        out = self.out_proj(self.scan_directions(x))
        return out.squeeze(0) if squeeze else out


def encode_condition(grid_latent: torch.Tensor, block: Ss2dBlock) -> torch.Tensor:
    """Embed a channels-last conditioning-grid latent with a scan block.

    Returns a channels-last map of the same spatial shape; all zeros for a
    freshly constructed block.
    """
    if grid_latent.ndim != 3:
        raise ValidationError("grid latent must be (H, W, C)")
    out = block(grid_latent.permute(2, 0, 1))
    return out.permute(1, 2, 0)


class InjectionBlock(nn.Module):
    """A frozen block plus a trainable copy gated by zero-initialized scans.

        y = F(x) + Z_out(F_c(x + Z_in(cond)))

    F is the frozen submodule; F_c starts as an exact parameter copy and
    trains; Z_in / Z_out are zero-initialized Ss2dBlocks. At construction the
    block therefore computes F(x) exactly, and gradients never reach F.
    Passing cond=None skips the conditioned branch entirely (the
    unconditional path).
    """

    def __init__(self, block: nn.Module, channels: int, cond_channels: int,
                 state_dim: int = 4, generator: torch.Generator | None = None):
        super().__init__()
        self.trainable = copy.deepcopy(block)
        self.frozen = block.requires_grad_(False)
        self.zero_in = Ss2dBlock(cond_channels, channels, state_dim, generator)
        self.zero_out = Ss2dBlock(channels, channels, state_dim, generator)

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None,
                *extra) -> torch.Tensor:
        base = self.frozen(x, *extra)
        if cond is None:
            return base
        if cond.shape[-2:] != x.shape[-2:]:
            raise ValidationError(
                f"condition spatial shape {tuple(cond.shape[-2:])} does not "
                f"match input {tuple(x.shape[-2:])}")
        branch = self.trainable(x + self.zero_in(cond), *extra)
        return base + self.zero_out(branch)


def inject(x: torch.Tensor, x_vpc: torch.Tensor | None,
           block: InjectionBlock, *extra) -> torch.Tensor:
    """Apply an injection block to channels-first features and conditioning."""
    return block(x, x_vpc, *extra)
