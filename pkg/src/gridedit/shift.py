"""Editing-shift matching.

A grid's editing shift is the averaged embedding-space difference between
its pre-edit and post-edit images:

    shift = ( e(in_0) - e(out_0) + e(in_1) - e(out_1) ) / 2

It captures what the edit does independently of image content. The matching
loss is one minus the cosine similarity between the shift of the
reconstructed pseudo-output grid and the shift of the ground-truth grid.
"""

from __future__ import annotations

import torch

from .diffusion import reconstruct_x0
from .errors import ValidationError
from .grid import decompose
from .providers import Embedder
from .schedule import NoiseSchedule

NORM_EPS = 1e-8


def editing_shift(quadrants, emb: Embedder) -> torch.Tensor:
    """Shift vector of four quadrant images in layout order
    (in_0, out_0, in_1, out_1)."""
    if len(quadrants) != 4:
        raise ValidationError("expected exactly four quadrant images")
    e = [emb.embed_image(q) for q in quadrants]
    dims = {tuple(v.shape) for v in e}
    if len(dims) != 1:
        raise ValidationError(f"embedder returned mixed dimensions: {dims}")
    # per-pair differences first, so swapping in/out roles negates the
    # shift bit-exactly
    return ((e[0] - e[1]) + (e[2] - e[3])) / 2.0


def editing_shift_loss(pseudo: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """1 - cos(pseudo, truth), in [0, 2].

    Degenerate directions: if both norms fall below NORM_EPS the vectors
    carry no direction and the loss is 0; if only one does, the loss is 1.
    """
    if pseudo.shape != truth.shape:
        raise ValidationError(
            f"shift dimensions differ: {tuple(pseudo.shape)} vs {tuple(truth.shape)}")
    norm_p = torch.linalg.vector_norm(pseudo)
    norm_t = torch.linalg.vector_norm(truth)
    small_p = norm_p.item() < NORM_EPS
    small_t = norm_t.item() < NORM_EPS
    if small_p and small_t:
        return torch.zeros((), dtype=pseudo.dtype)
    if small_p or small_t:
        return torch.ones((), dtype=pseudo.dtype)
    return 1.0 - (pseudo * truth).sum() / (norm_p * norm_t)


def grid_shift(grid: torch.Tensor, emb: Embedder) -> torch.Tensor:
    """Editing shift of a full grid (decomposed in layout order)."""
    return editing_shift(decompose(grid), emb)


def training_shift_loss(predicted_eps: torch.Tensor, x_t: torch.Tensor,
                        t: int, truth_grid: torch.Tensor,
                        sched: NoiseSchedule, emb: Embedder,
                        codec=None) -> torch.Tensor:
    """Shift-matching loss of the pseudo output reconstructed from a noise
    prediction, against the ground-truth grid. Requires alpha_t > 0."""
    pseudo_lat = reconstruct_x0(x_t, predicted_eps, t, sched)
    pseudo = codec.decode(pseudo_lat) if codec is not None else pseudo_lat
    pseudo = pseudo.clamp(0.0, 1.0)
    return editing_shift_loss(grid_shift(pseudo, emb),
                              grid_shift(truth_grid, emb))
