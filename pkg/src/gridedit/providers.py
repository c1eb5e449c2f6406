"""Pluggable embedding, segmentation, and instruction-unification providers.

The core pipeline only talks to the three small interfaces below. The mock
implementations shipped here are deterministic and cheap, so the whole test
suite runs without any large pretrained model. Real-model adapters can be
plugged in through config values of the form ``external:<module>:<factory>``.
"""

from __future__ import annotations

import hashlib
import importlib
import re
from abc import ABC, abstractmethod

import numpy as np
import torch

from .errors import ValidationError
from .grid import DTYPE

STD_EPS = 1e-12  # inside the sqrt, keeps gradients finite on constant images


class Embedder(ABC):
    """Deterministic image/text embedder with a shared output dimension."""

    dim: int

    @abstractmethod
    def embed_image(self, img: torch.Tensor) -> torch.Tensor: ...

    @abstractmethod
    def embed_text(self, text: str) -> torch.Tensor: ...


class Segmenter(ABC):
    """Panoptic-style segmenter: label map plus (id, class name) table."""

    @abstractmethod
    def segment(self, img: torch.Tensor) -> tuple[torch.Tensor, list[tuple[int, str]]]: ...


class InstructionUnifier(ABC):
    """Canonicalizes editing instructions; filters class names by category."""

    @abstractmethod
    def unify(self, instruction: str) -> str: ...

    @abstractmethod
    def filter_classes(self, class_names: list[str],
                       selected_categories: list[str]) -> list[str]: ...


# --------------------------------------------------------------------------
# mock embedder

# color vocabulary shared with the procedural scene renderer; chosen so every
# color lands in a distinct segmentation bin (dominant channel x brightness)
COLOR_TABLE: dict[str, tuple[float, float, float]] = {
    "crimson": (0.55, 0.08, 0.08),
    "salmon": (0.95, 0.45, 0.40),
    "olive": (0.30, 0.45, 0.10),
    "lime": (0.55, 0.95, 0.45),
    "navy": (0.10, 0.12, 0.45),
    "sky": (0.45, 0.70, 0.95),
}

# nominal figure-area fraction per size word, mirrored by the renderer
SIZE_FRACTIONS = {"small": 0.10, "large": 0.25}
DEFAULT_FRACTION = 0.15

_HASH_SCALE = 0.01


def _quadrants(img: torch.Tensor):
    h, w = img.shape[0] // 2, img.shape[1] // 2
    return img[:h, :w], img[:h, w:], img[h:, :w], img[h:, w:]


def _token_hash_vector(tokens: list[str], dim: int) -> np.ndarray:
    digest = hashlib.sha256(" ".join(tokens).encode()).digest()
    seed = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(seed).standard_normal(dim)


class MockEmbedder(Embedder):
    """Quadrant-statistics embedder.

    Images embed as per-quadrant, per-channel (mean, std) pairs in layout
    order, dimension 2 * C * 4. Text embeds into the same space: color and
    size words predict the statistics of a canonical figure-on-background
    scene, plus a small content-hash component that keeps distinct strings
    distinct. Identical strings always embed identically, which is what the
    instruction-unification path relies on.
    """

    def __init__(self, channels: int = 3):
        self.channels = channels
        self.dim = 2 * channels * 4

    def embed_image(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 3 or img.shape[2] != self.channels:
            raise ValidationError(
                f"expected (H, W, {self.channels}) image, got {tuple(img.shape)}")
        parts = []
        for quad in _quadrants(img):
            flat = quad.reshape(-1, self.channels)
            mean = flat.mean(dim=0)
            std = torch.sqrt(((flat - mean) ** 2).mean(dim=0) + STD_EPS)
            parts.append(torch.stack([mean, std], dim=1).reshape(-1))
        return torch.cat(parts)

    def embed_text(self, text: str) -> torch.Tensor:
        tokens = re.findall(r"[a-z]+", text.lower())
        if not tokens:
            return torch.zeros(self.dim, dtype=DTYPE)
        vec = _HASH_SCALE * _token_hash_vector(tokens, self.dim)
        if self.channels == 3:
            colors = [t for t in tokens if t in COLOR_TABLE]
            fg = np.array(COLOR_TABLE[colors[0]]) if colors else None
            bg = np.array(COLOR_TABLE[colors[-1]]) if len(colors) >= 2 else None
            frac = DEFAULT_FRACTION
            for word, value in SIZE_FRACTIONS.items():
                if word in tokens:
                    frac = value
                    break
            if fg is not None:
                base = bg if bg is not None else np.full(3, 0.5)
                mean = (1.0 - frac) * base + frac * fg
                std = np.sqrt(frac * (1.0 - frac)) * np.abs(fg - base)
                stats = np.stack([mean, std], axis=1).reshape(-1)
                vec = vec + np.tile(stats, 4)
        return torch.from_numpy(vec).to(DTYPE)


# --------------------------------------------------------------------------
# mock segmenter

# bin = dominant channel x brightness band; fixed class-name table for RGB
SEGMENT_CLASS_TABLE = {
    0: "person",      # red-dominant, dark
    1: "face",        # red-dominant, bright
    2: "animal",      # green-dominant, dark
    3: "plant",       # green-dominant, bright
    4: "background",  # blue-dominant, dark
    5: "sky",         # blue-dominant, bright
}


class MockSegmenter(Segmenter):
    """Color-quantization segmenter.

    Each pixel is binned by its dominant channel and by whether its mean
    intensity reaches 0.5, giving at most 2 * C labels. For RGB images the
    bins map to the fixed class-name table above; other channel counts get
    generic names. Returns the label map and the classes actually present.
    """

    def segment(self, img: torch.Tensor) -> tuple[torch.Tensor, list[tuple[int, str]]]:
        if img.ndim != 3:
            raise ValidationError("expected an (H, W, C) image")
        channels = img.shape[2]
        dominant = img.argmax(dim=2)
        bright = (img.mean(dim=2) >= 0.5).long()
        label_map = dominant * 2 + bright
        present = sorted(int(v) for v in torch.unique(label_map))
        classes = []
        for label in present:
            if channels == 3 and label in SEGMENT_CLASS_TABLE:
                classes.append((label, SEGMENT_CLASS_TABLE[label]))
            else:
                classes.append((label, f"bin_{label}"))
        return label_map, classes


# --------------------------------------------------------------------------
# mock unifier

# ordered rewrite table; every right-hand side is a fixed point of the table,
# so unification is idempotent. more specific patterns come first.
REWRITE_RULES: list[tuple[str, str]] = [
    (r"^turn (.+) into (.+)$", r"change \1 to \2"),
    (r"^make (.+) into (.+)$", r"change \1 to \2"),
    (r"^transform (.+) into (.+)$", r"change \1 to \2"),
    (r"^convert (.+) into (.+)$", r"change \1 to \2"),
    (r"^convert (.+) to (.+)$", r"change \1 to \2"),
    (r"^replace (.+) with (.+)$", r"change \1 to \2"),
    (r"^swap (.+) for (.+)$", r"change \1 to \2"),
    (r"^make (.+?) (a|an) (.+)$", r"change \1 to \2 \3"),
]

# class name -> coarse category used by selective-area filtering
CLASS_CATEGORIES = {
    "person": "human",
    "face": "human",
    "animal": "creature",
    "plant": "vegetation",
    "background": "scenery",
    "sky": "scenery",
}

ALL_CATEGORIES = tuple(sorted(set(CLASS_CATEGORIES.values())))

# instruction sets that collapse to one canonical form under MockUnifier;
# used by the unification-invariance tests
PARAPHRASE_GROUPS: list[tuple[str, ...]] = [
    ("turn the crimson square into a salmon square",
     "make the crimson square a salmon square",
     "change the crimson square to a salmon square"),
    ("turn the navy background into a sky background",
     "make the navy background a sky background"),
    ("convert the olive circle to a crimson circle",
     "replace the olive circle with a crimson circle"),
    ("Turn the small olive triangle into a large olive triangle.",
     "make the small olive triangle a large olive triangle"),
]


class MockUnifier(InstructionUnifier):
    """Rule-table canonicalizer: lowercase, collapse whitespace, strip
    trailing punctuation, then rewrite known synonym patterns to the
    imperative 'change X to Y' form. Idempotent by construction."""

    def unify(self, instruction: str) -> str:
        if not instruction or not instruction.strip():
            raise ValidationError("instruction must be a non-empty string")
        text = re.sub(r"\s+", " ", instruction.strip().lower())
        text = text.rstrip(".!?").strip()
        for pattern, replacement in REWRITE_RULES:
            new, count = re.subn(pattern, replacement, text)
            if count:
                return new
        return text

    def filter_classes(self, class_names: list[str],
                       selected_categories: list[str]) -> list[str]:
        selected = set(selected_categories)
        return [name for name in class_names
                if CLASS_CATEGORIES.get(name) in selected]


# --------------------------------------------------------------------------
# provider selection

_MOCKS = {
    "embedder": MockEmbedder,
    "segmenter": MockSegmenter,
    "unifier": MockUnifier,
}


def _build_provider(kind: str, spec: str):
    if spec == "mock":
        return _MOCKS[kind]()
    if spec.startswith("external:"):
        target = spec[len("external:"):]
        if ":" not in target:
            raise ValidationError(
                f"external provider must be 'external:<module>:<factory>', got {spec!r}")
        module_name, factory_name = target.rsplit(":", 1)
        module = importlib.import_module(module_name)
        factory = getattr(module, factory_name)
        return factory()
    raise ValidationError(f"unknown {kind} provider: {spec!r}")


def build_providers(cfg) -> tuple[Embedder, Segmenter, InstructionUnifier]:
    """Instantiate the three providers from a ProviderConfig."""
    return (
        _build_provider("embedder", cfg.embedder),
        _build_provider("segmenter", cfg.segmenter),
        _build_provider("unifier", cfg.unifier),
    )
