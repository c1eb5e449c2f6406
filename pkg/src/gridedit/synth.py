"""Procedural paired-editing scene synthesis.

Scenes are a single colored figure (square / circle / triangle) on a colored
background, described by a tiny caption grammar:

    "a {size} {color} {shape} on a {background} background"

Edits are scripted attribute transforms (recolor the figure, recolor the
background, resize the figure), so every generated pair has a known,
ground-truth editing direction. Figure colors land in the segmenter's
person / face / animal bins and background colors in its scenery bins,
which gives selective-area masks known coverage.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .grid import DTYPE
from .providers import COLOR_TABLE

FIGURE_COLORS = ("crimson", "salmon", "olive")
BACKGROUND_COLORS = ("navy", "sky", "lime")
SHAPES = ("square", "circle", "triangle")
SIZES = ("small", "large")
RADIUS_FRACTIONS = {"small": 0.16, "large": 0.26}

_CAPTION_RE = re.compile(
    r"^a (small|large) ([a-z]+) (square|circle|triangle) on a ([a-z]+) background$")


@dataclass(frozen=True)
class Scene:
    size: str
    color: str
    shape: str
    background: str


def caption(scene: Scene) -> str:
    return (f"a {scene.size} {scene.color} {scene.shape} "
            f"on a {scene.background} background")


def parse_caption(text: str) -> Scene:
    match = _CAPTION_RE.match(text.strip().lower())
    if not match:
        raise ValidationError(f"caption does not match the scene grammar: {text!r}")
    size, color, shape, background = match.groups()
    if color not in COLOR_TABLE or background not in COLOR_TABLE:
        raise ValidationError(f"unknown color in caption: {text!r}")
    return Scene(size=size, color=color, shape=shape, background=background)


def _figure_mask(shape: str, side: int, cx: float, cy: float,
                 radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= radius
    if shape == "circle":
        return dx ** 2 + dy ** 2 <= radius ** 2
    if shape == "triangle":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)
    raise ValidationError(f"unknown shape: {shape!r}")


def render_scene(scene: Scene, side: int, center: tuple[float, float],
                 rng: np.random.Generator,
                 noise_amplitude: float = 0.02) -> torch.Tensor:
    """Render one scene to a (side, side, 3) image in [0, 1]."""
    img = np.empty((side, side, 3), dtype=np.float64)
    img[:] = COLOR_TABLE[scene.background]
    radius = RADIUS_FRACTIONS[scene.size] * side
    mask = _figure_mask(scene.shape, side, center[0], center[1], radius)
    img[mask] = COLOR_TABLE[scene.color]
    img += rng.uniform(-noise_amplitude, noise_amplitude, img.shape)
    return torch.from_numpy(np.clip(img, 0.0, 1.0)).to(DTYPE)


@dataclass
class ProceduralPairSynthesizer:
    """Renders an editing pair from a caption pair with shared geometry."""

    image_size: int = 32
    noise_amplitude: float = 0.02

    def synthesize(self, caption_in: str, caption_out: str,
                   rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        scene_in = parse_caption(caption_in)
        scene_out = parse_caption(caption_out)
        side = self.image_size
        jx, jy = rng.uniform(-0.12, 0.12, size=2)
        center = (side * (0.5 + jx), side * (0.5 + jy))
        img_in = render_scene(scene_in, side, center, rng, self.noise_amplitude)
        img_out = render_scene(scene_out, side, center, rng, self.noise_amplitude)
        return img_in, img_out


def _instruction_templates(subject: str, target: str) -> list[str]:
    # one synonym class: all three unify to "change {subject} to {target}"
    return [
        f"turn {subject} into {target}",
        f"make {subject} {target}",
        f"change {subject} to {target}",
    ]


@dataclass
class ProceduralPromptGenerator:
    """Seeded generator of editing-instruction groups over the scene grammar."""

    captions_per_group: int = 5

    def generate_group(self, rng: np.random.Generator) -> tuple[str, list[tuple[str, str]], str]:
        """Returns (raw instruction, caption pairs, edit family)."""
        family = str(rng.choice(["recolor", "background", "resize"]))
        n = self.captions_per_group
        if family == "recolor":
            shape = str(rng.choice(SHAPES))
            a, b = (str(c) for c in rng.choice(FIGURE_COLORS, 2, replace=False))
            subject, target = f"the {a} {shape}", f"a {b} {shape}"
            combos = [(s, bg) for s in SIZES for bg in BACKGROUND_COLORS]
            picks = _pick(combos, n, rng)
            pairs = [(caption(Scene(s, a, shape, bg)),
                      caption(Scene(s, b, shape, bg))) for s, bg in picks]
        elif family == "background":
            a, b = (str(c) for c in rng.choice(BACKGROUND_COLORS, 2, replace=False))
            subject, target = f"the {a} background", f"a {b} background"
            combos = [(s, c, sh) for s in SIZES for c in FIGURE_COLORS
                      for sh in SHAPES]
            picks = _pick(combos, n, rng)
            pairs = [(caption(Scene(s, c, sh, a)),
                      caption(Scene(s, c, sh, b))) for s, c, sh in picks]
        else:
            shape = str(rng.choice(SHAPES))
            color = str(rng.choice(FIGURE_COLORS))
            subject = f"the small {color} {shape}"
            target = f"a large {color} {shape}"
            picks = _pick(list(BACKGROUND_COLORS), n, rng)
            pairs = [(caption(Scene("small", color, shape, bg)),
                      caption(Scene("large", color, shape, bg))) for bg in picks]
        templates = _instruction_templates(subject, target)
        instruction = templates[int(rng.integers(len(templates)))]
        return instruction, pairs, family


def _pick(options: list, count: int, rng: np.random.Generator) -> list:
    replace = count > len(options)
    idx = rng.choice(len(options), size=count, replace=replace)
    return [options[int(i)] for i in idx]
