"""Conditional diffusion core: noising, pseudo-output reconstruction,
noise prediction, and guided ancestral sampling over visual-prompt grids.

Public tensors are channels-last (H, W, C) in [0, 1]; an optional leading
batch dimension is accepted everywhere. The "latent" space is the pixel
space by default; a fixed 2x downsampling codec is available behind the
same interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig, config_as_dict
from .denoiser import ConditionedDenoiser
from .errors import ValidationError
from .grid import DTYPE
from .schedule import NoiseSchedule

CHECKPOINT_FORMAT_VERSION = 1


class IdentityCodec:
    """Pixel-space latent: encode/decode are the identity."""

    name = "identity"

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        return img

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return latent


class Downsample2xCodec:
    """Fixed 2x average-pool autoencoder stub (not trained)."""

    name = "downsample2x"

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        batched = img.ndim == 4
        x = img if batched else img.unsqueeze(0)
        x = F.avg_pool2d(x.permute(0, 3, 1, 2), kernel_size=2)
        x = x.permute(0, 2, 3, 1)
        return x if batched else x.squeeze(0)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        batched = latent.ndim == 4
        x = latent if batched else latent.unsqueeze(0)
        x = x.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2)
        return x if batched else x.squeeze(0)


def build_codec(name: str):
    if name == "identity":
        return IdentityCodec()
    if name == "downsample2x":
        return Downsample2xCodec()
    raise ValidationError(f"unknown latent codec: {name!r}")


@dataclass
class DenoiserState:
    """Everything needed to run the conditioned denoiser."""

    model: ConditionedDenoiser
    schedule: NoiseSchedule
    codec: IdentityCodec
    config: ModelConfig


def build_state(cfg: ModelConfig, seed: int = 0) -> DenoiserState:
    generator = torch.Generator().manual_seed(seed)
    model = ConditionedDenoiser(cfg, generator)
    return DenoiserState(
        model=model,
        schedule=NoiseSchedule.cosine(cfg.schedule_steps),
        codec=build_codec(cfg.latent),
        config=cfg,
    )


def _alpha_term(sched: NoiseSchedule, t, ndim: int):
    """alpha_t as a scalar (int t) or broadcastable tensor (batched t)."""
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        if not bool(((t >= 0) & (t <= sched.steps)).all()):
            raise ValidationError(f"t must lie in [0, {sched.steps}]")
        a = sched.alphas[t.long()]
        return a.reshape(-1, *([1] * (ndim - 1)))
    t = int(t)
    if not 0 <= t <= sched.steps:
        raise ValidationError(f"t must lie in [0, {sched.steps}], got {t}")
    return sched.alphas[t]


def forward_noise(x0: torch.Tensor, t, eps: torch.Tensor,
                  sched: NoiseSchedule) -> torch.Tensor:
    """Noised sample sqrt(a_t) * x0 + sqrt(1 - a_t) * eps."""
    if x0.shape != eps.shape:
        raise ValidationError(
            f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    a = _alpha_term(sched, t, x0.ndim)
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps


def reconstruct_x0(x_t: torch.Tensor, eps_hat: torch.Tensor, t,
                   sched: NoiseSchedule) -> torch.Tensor:
    """Invert forward_noise: (x_t - sqrt(1 - a_t) * eps_hat) / sqrt(a_t).

    Undefined at a_t = 0 (the pure-noise endpoint).
    """
    if x_t.shape != eps_hat.shape:
        raise ValidationError(
            f"x_t shape {tuple(x_t.shape)} != eps_hat shape {tuple(eps_hat.shape)}")
    a = _alpha_term(sched, t, x_t.ndim)
    if not bool((a > 0).all() if isinstance(a, torch.Tensor) else a > 0):
        raise ValidationError(
            "reconstruction is undefined at alpha_t = 0 (t = T)")
    return (x_t - torch.sqrt(1.0 - a) * eps_hat) / torch.sqrt(a)


def _as_batched(x: torch.Tensor, ndim: int) -> tuple[torch.Tensor, bool]:
    if x.ndim == ndim:
        return x.unsqueeze(0), True
    if x.ndim == ndim + 1:
        return x, False
    raise ValidationError(f"unexpected tensor rank {x.ndim}")


def predict_noise(state: DenoiserState, x_t: torch.Tensor, t,
                  text_embed: torch.Tensor,
                  cond_grid: torch.Tensor | None = None) -> torch.Tensor:
    """Predicted noise for a grid latent; cond_grid is the conditioning grid
    in pixel space (or None for the unconditional path)."""
    x, squeeze = _as_batched(x_t, 3)
    batch = x.shape[0]
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        t_vec = t.long()
    else:
        t_vec = torch.full((batch,), int(t), dtype=torch.long)
    if not bool(((t_vec >= 0) & (t_vec <= state.schedule.steps)).all()):
        raise ValidationError(f"t must lie in [0, {state.schedule.steps}]")
    text, _ = (text_embed.unsqueeze(0), True) if text_embed.ndim == 1 \
        else (text_embed, False)
    if text.shape[0] != batch:
        text = text.expand(batch, -1)
    cond_nchw = None
    if cond_grid is not None:
        cond, _ = _as_batched(cond_grid, 3)
        cond_lat = state.codec.encode(cond)
        if cond_lat.shape[0] != batch:
            cond_lat = cond_lat.expand(batch, -1, -1, -1)
        cond_nchw = cond_lat.permute(0, 3, 1, 2)
    eps = state.model(x.permute(0, 3, 1, 2), t_vec, text, cond_nchw)
    eps = eps.permute(0, 2, 3, 1)
    return eps.squeeze(0) if squeeze else eps


def _timestep_path(total: int, steps: int) -> list[int]:
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if steps > total:
        raise ValidationError(f"steps must be <= schedule steps ({total})")
    ts = np.unique(np.round(np.linspace(total, 0, steps + 1)).astype(int))[::-1]
    return [int(v) for v in ts]


def sample_batch(state: DenoiserState, cond_grids: torch.Tensor,
                 text_embeds: torch.Tensor, seeds: list,
                 guidance_scale: float | None = None,
                 steps: int | None = None, eta: float = 1.0,
                 reclamp_known: bool = True) -> torch.Tensor:
    """Sample one grid per record, deterministically per record seed.

    Per-record noise comes from an independent numpy generator, so results
    do not depend on how records are batched together.
    """
    sched = state.schedule
    guidance = state.config.guidance_scale if guidance_scale is None else guidance_scale
    path = _timestep_path(sched.steps, steps if steps is not None else sched.steps)
    batch = cond_grids.shape[0]
    rngs = [np.random.default_rng(seed) for seed in seeds]
    if len(rngs) != batch:
        raise ValidationError("one seed per record is required")

    cond_lat = state.codec.encode(cond_grids)
    lat_shape = tuple(cond_lat.shape[1:])
    known_h, known_w = lat_shape[0] // 2, lat_shape[1] // 2

    def draw(shape):
        return torch.stack([
            torch.from_numpy(rng.standard_normal(shape)).to(DTYPE)
            for rng in rngs])

    x = draw(lat_shape)
    empty_text = torch.zeros_like(text_embeds)
    cond_nchw = cond_lat.permute(0, 3, 1, 2)

    with torch.no_grad():
        for t_cur, t_next in zip(path[:-1], path[1:]):
            t_vec = torch.full((batch,), t_cur, dtype=torch.long)
            x_nchw = x.permute(0, 3, 1, 2)
            eps_c = state.model(x_nchw, t_vec, text_embeds, cond_nchw)
            eps_u = state.model(x_nchw, t_vec, empty_text, None)
            eps = (eps_u + guidance * (eps_c - eps_u)).permute(0, 2, 3, 1)

            a_cur = sched.alpha(t_cur)
            a_next = sched.alpha(t_next)
            if a_cur > 0.0:
                x0_hat = ((x - (1.0 - a_cur) ** 0.5 * eps) / a_cur ** 0.5)
                x0_hat = x0_hat.clamp(0.0, 1.0)
                var = (1.0 - a_next) / (1.0 - a_cur) * (1.0 - a_cur / a_next)
                sigma = eta * max(var, 0.0) ** 0.5
                dir_coef = max(1.0 - a_next - sigma ** 2, 0.0) ** 0.5
                x = a_next ** 0.5 * x0_hat + dir_coef * eps
                if sigma > 0.0:
                    x = x + sigma * draw(lat_shape)
            else:
                # singular first step from pure noise: no x0 estimate exists
                # at alpha = 0, so keep only the predicted-noise direction
                x = (1.0 - a_next) ** 0.5 * eps

            if reclamp_known:
                noised = a_next ** 0.5 * cond_lat
                if a_next < 1.0:
                    noised = noised + (1.0 - a_next) ** 0.5 * draw(lat_shape)
                x[:, :known_h, :, :] = noised[:, :known_h, :, :]
                x[:, known_h:, :known_w, :] = noised[:, known_h:, :known_w, :]

    return state.codec.decode(x).clamp(0.0, 1.0)


def sample(state: DenoiserState, cond_grid: torch.Tensor,
           text_embed: torch.Tensor, guidance_scale: float | None = None,
           steps: int | None = None, seed: int = 0, eta: float = 1.0,
           reclamp_known: bool = True) -> torch.Tensor:
    """Sample a full grid; the bottom-right quadrant is the edited query."""
    out = sample_batch(state, cond_grid.unsqueeze(0), text_embed.unsqueeze(0),
                       [seed], guidance_scale=guidance_scale, steps=steps,
                       eta=eta, reclamp_known=reclamp_known)
    return out.squeeze(0)


def save_checkpoint(path: str | Path, state: DenoiserState,
                    optimizer: torch.optim.Optimizer | None = None,
                    step: int = 0, train_config: dict | None = None,
                    seed: int | None = None) -> Path:
    """Versioned checkpoint container; schema in docs/checkpoint_format.md."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": config_as_dict(state.config),
        "schedule_alphas": state.schedule.alphas,
        "model_state": state.model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer else None,
        "step": step,
        "train_config": train_config,
        "seed": seed,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[DenoiserState, dict]:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version: {version}")
    cfg = ModelConfig(**payload["model_config"])
    model = ConditionedDenoiser(cfg)
    model.load_state_dict(payload["model_state"])
    state = DenoiserState(
        model=model,
        schedule=NoiseSchedule(alphas=payload["schedule_alphas"]),
        codec=build_codec(cfg.latent),
        config=cfg,
    )
    return state, payload
