"""Selective area matching: masked reconstruction penalty on detail-critical
segment classes (people, creatures, ...).

The mask is built from the ground-truth grid: segment it, keep the classes
whose category is selected, and mark their pixels. The loss is the squared
error restricted to the mask, divided by the total pixel count N (not the
masked count), read literally from its definition; a mask-normalized variant
is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ValidationError
from .grid import DTYPE
from .providers import InstructionUnifier, Segmenter


@dataclass
class SelectiveMask:
    mask: torch.Tensor                 # (H, W) float64 with values in {0, 1}
    source_classes: tuple[str, ...]    # class names that produced the mask

    def __post_init__(self):
        values = torch.unique(self.mask)
        if not bool(((values == 0) | (values == 1)).all()):
            raise ValidationError("mask entries must be 0 or 1")


def build_mask(truth_grid: torch.Tensor, seg: Segmenter,
               uni: InstructionUnifier, selected) -> SelectiveMask:
    """Binary mask over the grid pixels whose segment class is selected."""
    label_map, classes = seg.segment(truth_grid)
    declared = {label for label, _ in classes}
    present = {int(v) for v in torch.unique(label_map)}
    if not present <= declared:
        raise ValidationError(
            f"segmenter returned labels {sorted(present - declared)} "
            "missing from its class table")
    names = [name for _, name in classes]
    kept = uni.filter_classes(names, list(selected))
    kept_ids = {label for label, name in classes if name in kept}
    mask = torch.zeros(truth_grid.shape[:2], dtype=DTYPE)
    for label in kept_ids:
        mask[label_map == label] = 1.0
    return SelectiveMask(mask=mask, source_classes=tuple(kept))


def selective_area_loss(pseudo_grid: torch.Tensor, truth_grid: torch.Tensor,
                        mask: SelectiveMask | torch.Tensor,
                        normalize_by_mask: bool = False) -> torch.Tensor:
    """Masked mean-squared error, divided by total pixel count N and averaged
    over channels. With an all-ones mask this is the plain grid MSE."""
    m = mask.mask if isinstance(mask, SelectiveMask) else mask
    if pseudo_grid.shape != truth_grid.shape:
        raise ValidationError(
            f"grid shapes differ: {tuple(pseudo_grid.shape)} vs {tuple(truth_grid.shape)}")
    if m.shape != pseudo_grid.shape[:2]:
        raise ValidationError(
            f"mask shape {tuple(m.shape)} does not match grid {tuple(pseudo_grid.shape[:2])}")
    sq = ((pseudo_grid - truth_grid) ** 2 * m[:, :, None]).sum()
    channels = pseudo_grid.shape[2]
    if normalize_by_mask:
        selected = m.sum()
        if selected.item() == 0:
            return torch.zeros((), dtype=pseudo_grid.dtype)
        return sq / (selected * channels)
    total_pixels = m.shape[0] * m.shape[1]
    return sq / (total_pixels * channels)
