"""8-bit PNG I/O for float images.

Pixel values map linearly between [0, 1] floats and [0, 255] bytes. Grids are
written with the suffix ``_grid.png`` and quadrants with ``_q{0..3}.png``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import ValidationError
from .grid import DTYPE, compose, decompose


def to_uint8(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().clamp(0.0, 1.0).numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr.astype(np.float64) / 255.0).to(DTYPE)


def write_png(path: str | Path, img: torch.Tensor) -> Path:
    path = Path(path)
    if img.ndim != 3:
        raise ValidationError(f"expected (H, W, C) image, got shape {tuple(img.shape)}")
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        pil = PILImage.fromarray(arr, mode="RGB")
    else:
        raise ValidationError(f"unsupported channel count {arr.shape[2]}")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
    return path


def read_png(path: str | Path) -> torch.Tensor:
    with PILImage.open(path) as pil:
        arr = np.asarray(pil)
    return from_uint8(arr)


def write_grid(stem: str | Path, grid: torch.Tensor) -> Path:
    """Write ``<stem>_grid.png``."""
    return write_png(Path(str(stem) + "_grid.png"), grid)


def read_grid(stem: str | Path) -> torch.Tensor:
    return read_png(Path(str(stem) + "_grid.png"))


def write_quadrants(stem: str | Path, grid: torch.Tensor) -> list[Path]:
    """Write the four quadrants of a grid as ``<stem>_q{0..3}.png``."""
    paths = []
    for i, quad in enumerate(decompose(grid)):
        paths.append(write_png(Path(f"{stem}_q{i}.png"), quad))
    return paths


def read_quadrants(stem: str | Path) -> torch.Tensor:
    """Read ``<stem>_q{0..3}.png`` back into a composed grid."""
    quads = [read_png(Path(f"{stem}_q{i}.png")) for i in range(4)]
    return compose(*quads)
