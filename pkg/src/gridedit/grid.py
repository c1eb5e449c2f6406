"""2x2 visual-prompt image grids.

A grid packs four equally sized images into one image of twice the side
length, with a fixed quadrant layout:

    top-left      example input   (q0)
    top-right     example output  (q1)
    bottom-left   query input     (q2)
    bottom-right  query output    (q3)

Training grids carry the ground-truth edit in q3; conditioning grids carry
a uniform grey there, marking the slot the model has to fill in.

Images are channels-last float64 tensors with values in [0, 1].
"""

from __future__ import annotations

import torch

from .errors import ValidationError

DTYPE = torch.float64

DEFAULT_GREY = 0.5

QUADRANT_NAMES = ("top-left", "top-right", "bottom-left", "bottom-right")


def _check_image(img: torch.Tensor, name: str) -> None:
    if not isinstance(img, torch.Tensor) or img.ndim != 3:
        raise ValidationError(f"{name} must be an (H, W, C) tensor")


def compose(q_tl: torch.Tensor, q_tr: torch.Tensor, q_bl: torch.Tensor,
            q_br: torch.Tensor) -> torch.Tensor:
    """Assemble four equally shaped images into one 2x2 grid."""
    quads = (q_tl, q_tr, q_bl, q_br)
    _check_image(quads[0], "quadrant q0 (top-left)")
    ref = tuple(quads[0].shape)
    for i, q in enumerate(quads[1:], start=1):
        name = f"quadrant q{i} ({QUADRANT_NAMES[i]})"
        _check_image(q, name)
        if tuple(q.shape) != ref:
            raise ValidationError(
                f"{name} has shape {tuple(q.shape)}, expected {ref}")
    top = torch.cat([q_tl, q_tr], dim=1)
    bottom = torch.cat([q_bl, q_br], dim=1)
    return torch.cat([top, bottom], dim=0)


def decompose(grid: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor,
                                           torch.Tensor, torch.Tensor]:
    """Split a grid back into its four quadrants, in layout order."""
    _check_image(grid, "grid")
    height, width = grid.shape[0], grid.shape[1]
    if height % 2 != 0 or width % 2 != 0:
        raise ValidationError(
            f"grid dimensions must be even, got {height}x{width}")
    h, w = height // 2, width // 2
    return grid[:h, :w], grid[:h, w:], grid[h:, :w], grid[h:, w:]


def mask_query(grid: torch.Tensor, grey: float = DEFAULT_GREY) -> torch.Tensor:
    """Return a copy of the grid with the bottom-right quadrant set to `grey`."""
    if not 0.0 <= grey <= 1.0:
        raise ValidationError(f"grey must lie in [0, 1], got {grey}")
    _check_image(grid, "grid")
    height, width = grid.shape[0], grid.shape[1]
    if height % 2 != 0 or width % 2 != 0:
        raise ValidationError(
            f"grid dimensions must be even, got {height}x{width}")
    out = grid.clone()
    out[height // 2:, width // 2:] = grey
    return out


def mask_example(grid: torch.Tensor, grey: float = DEFAULT_GREY) -> torch.Tensor:
    """Return a copy of the grid with the example row (q0, q1) set to `grey`.

    Used by instruction dropout to blank the visual instruction while keeping
    the query input intact.
    """
    if not 0.0 <= grey <= 1.0:
        raise ValidationError(f"grey must lie in [0, 1], got {grey}")
    _check_image(grid, "grid")
    height = grid.shape[0]
    if height % 2 != 0 or grid.shape[1] % 2 != 0:
        raise ValidationError(
            f"grid dimensions must be even, got {height}x{grid.shape[1]}")
    out = grid.clone()
    out[:height // 2, :] = grey
    return out


def bottom_right(grid: torch.Tensor) -> torch.Tensor:
    """The query-output quadrant (the edited result in a sampled grid)."""
    return decompose(grid)[3]
