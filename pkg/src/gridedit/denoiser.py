"""Noise-prediction backbone.

A small frozen hourglass network (stand-in for a large pretrained denoiser)
with one zero-initialized conditioned branch injected per resolution level.
The frozen parameters are never trained; the trainable surface is the text
projection, the conditioning-grid vision encoder, and the per-level
injection blocks (trainable copies plus their zero-initialized scan gates).

All tensors here are channels-first float64; the public wrappers in
``diffusion`` handle the channels-last convention.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .ssm import InjectionBlock, Ss2dBlock


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10_000.0)
        * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm_groups(channels: int) -> int:
    for groups in (4, 2, 1):
        if channels % groups == 0:
            return groups
    return 1


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1,
                     dtype=torch.float64)


def seeded_init_(root: nn.Module, generator: torch.Generator | None) -> None:
    """Uniform fan-in init for conv/linear weights, zero biases, seeded.

    Ss2dBlock subtrees are skipped: they initialize themselves and their
    output projections must stay zero.
    """
    skip = [name for name, m in root.named_modules()
            if isinstance(m, Ss2dBlock)]
    with torch.no_grad():
        for name, m in root.named_modules():
            if any(name == p or name.startswith(p + ".") for p in skip):
                continue
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                fan_in = m.weight.shape[1] * (
                    m.weight.shape[2] * m.weight.shape[3]
                    if m.weight.ndim == 4 else 1)
                bound = 1.0 / math.sqrt(max(fan_in, 1))
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class FilmResBlock(nn.Module):
    """Residual conv block with an additive feature-wise conditioning shift."""

    def __init__(self, channels: int, emb_dim: int):
        super().__init__()
        groups = _norm_groups(channels)
        self.norm1 = nn.GroupNorm(groups, channels, dtype=torch.float64)
        self.conv1 = _conv(channels, channels)
        self.film = nn.Linear(emb_dim, channels, dtype=torch.float64)
        self.norm2 = nn.GroupNorm(groups, channels, dtype=torch.float64)
        self.conv2 = _conv(channels, channels)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.film(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class ConditionedDenoiser(nn.Module):
    """Frozen hourglass denoiser with injected conditioning branches.

    forward(x, t, text_embed, cond) -> predicted noise, same shape as x.
    x, cond: (B, C, H, W); t: (B,) integer steps; text_embed: (B, text_dim).
    cond=None runs the unconditional (frozen + text) path only.
    """

    def __init__(self, cfg: ModelConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        chs = [cfg.base_channels * 2 ** l for l in range(cfg.levels)]

        # frozen backbone; the conditioned branches are injected at the
        # middle block and at each decoder level (shortest path to the
        # output head), one site per resolution level
        self.stem = _conv(cfg.channels, chs[0])
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.emb_dim, cfg.emb_dim, dtype=torch.float64),
            nn.SiLU(),
            nn.Linear(cfg.emb_dim, cfg.emb_dim, dtype=torch.float64),
        )
        self.enc_blocks = nn.ModuleList(
            [FilmResBlock(chs[l], cfg.emb_dim) for l in range(cfg.levels)])
        self.downs = nn.ModuleList(
            [_conv(chs[l], chs[l + 1], stride=2) for l in range(cfg.levels - 1)])
        mid_raw = FilmResBlock(chs[-1], cfg.emb_dim)
        self.ups = nn.ModuleList(
            [nn.ConvTranspose2d(chs[l + 1], chs[l], kernel_size=4, stride=2,
                                padding=1, dtype=torch.float64)
             for l in range(cfg.levels - 1)])
        dec_raw = [FilmResBlock(chs[l], cfg.emb_dim)
                   for l in range(cfg.levels - 1)]
        self.head = _conv(chs[0], cfg.channels)

        # trainable text conditioning and conditioning-grid vision encoder
        self.text_proj = nn.Linear(cfg.text_dim, cfg.emb_dim, bias=False,
                                   dtype=torch.float64)
        self.cond_stem = nn.Conv2d(cfg.channels, cfg.cond_channels, 3,
                                   padding=1, bias=False, dtype=torch.float64)

        # seed all plain conv/linear weights before copies are taken
        seeded_init_(self, generator)
        seeded_init_(mid_raw, generator)
        for tmp in dec_raw:
            seeded_init_(tmp, generator)

        self.cond_encoder = Ss2dBlock(cfg.cond_channels, cfg.cond_channels,
                                      cfg.state_dim, generator)
        self.mid = InjectionBlock(mid_raw, chs[-1], cfg.cond_channels,
                                  cfg.state_dim, generator)
        self.dec_blocks = nn.ModuleList(
            [InjectionBlock(dec_raw[l], chs[l], cfg.cond_channels,
                            cfg.state_dim, generator)
             for l in range(cfg.levels - 1)])

        for module in (self.stem, self.time_mlp, self.enc_blocks, self.downs,
                       self.ups, self.head):
            module.requires_grad_(False)

    def encode_condition(self, cond: torch.Tensor) -> torch.Tensor:
        """Vision-encoder embedding of the conditioning grid (zero at init)."""
        return self.cond_encoder(self.cond_stem(cond))

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                text_embed: torch.Tensor,
                cond: torch.Tensor | None = None) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(t, self.cfg.emb_dim))
        emb = emb + self.text_proj(text_embed)
        e_vpc = self.encode_condition(cond) if cond is not None else None

        def pooled_cond(target: torch.Tensor):
            if e_vpc is None:
                return None
            return F.adaptive_avg_pool2d(e_vpc, target.shape[-2:])

        h = self.stem(x)
        skips = []
        for level, block in enumerate(self.enc_blocks):
            h = block(h, emb)
            skips.append(h)
            if level < len(self.downs):
                h = self.downs[level](h)
        h = self.mid(h, pooled_cond(h), emb)
        for level in reversed(range(len(self.ups))):
            h = self.ups[level](h)
            h = h + skips[level]
            h = self.dec_blocks[level](h, pooled_cond(h), emb)
        return self.head(h)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if not p.requires_grad]
