"""Noise schedule for the diffusion process.

The schedule stores the signal level alpha_t for t = 0..T, with alpha_0 = 1
(no noise), alpha_T = 0 (pure noise), strictly decreasing in between. The
noised sample at step t is sqrt(alpha_t) * x0 + sqrt(1 - alpha_t) * eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ValidationError
from .grid import DTYPE


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: torch.Tensor  # shape (T + 1,)

    def __post_init__(self):
        a = self.alphas
        if a.ndim != 1 or a.numel() < 2:
            raise ValidationError("schedule needs at least two alpha values")
        if a[0].item() != 1.0:
            raise ValidationError(f"alpha_0 must be 1, got {a[0].item()}")
        if a[-1].item() != 0.0:
            raise ValidationError(f"alpha_T must be 0, got {a[-1].item()}")
        if not bool((a[1:] < a[:-1]).all()):
            raise ValidationError("alphas must be strictly decreasing")

    @property
    def steps(self) -> int:
        """T, the index of the final (pure-noise) step."""
        return self.alphas.numel() - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise ValidationError(f"t must lie in [0, {self.steps}], got {t}")
        return self.alphas[t].item()

    @classmethod
    def cosine(cls, steps: int = 50) -> "NoiseSchedule":
        """Strictly decreasing cosine-squared ramp, endpoints pinned to 1 and 0."""
        if steps < 1:
            raise ValidationError("steps must be >= 1")
        u = torch.linspace(0.0, 1.0, steps + 1, dtype=DTYPE)
        alphas = torch.cos(u * (math.pi / 2.0)) ** 2
        alphas[0] = 1.0
        alphas[-1] = 0.0
        return cls(alphas=alphas)
