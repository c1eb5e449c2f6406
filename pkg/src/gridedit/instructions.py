"""Language instruction unification: training-time augmentation and the
mandatory inference-time canonicalization path.

During training, a seeded half of each batch swaps its raw instruction for
the unified form, so the model sees both phrasings of the same edit. At
inference every instruction is unified before it reaches the model, which
collapses paraphrases to one embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .providers import InstructionUnifier

# incremented on every inference-path unification; lets tests assert the
# inference path never bypasses unification
inference_unify_count = 0


@dataclass(frozen=True)
class InstructionRecord:
    raw: str
    unified: str | None = None
    used_unified: bool = False

    @property
    def text(self) -> str:
        return self.unified if self.used_unified and self.unified else self.raw


def augment_batch(batch: list[InstructionRecord], uni: InstructionUnifier,
                  rng_seed, fraction: float = 0.5) -> list[InstructionRecord]:
    """Return the batch with a seeded floor(fraction * n) subset unified."""
    if not batch:
        raise ValidationError("batch must be non-empty")
    rng = np.random.default_rng(rng_seed)
    count = int(len(batch) * fraction)
    chosen = set(rng.choice(len(batch), size=count, replace=False).tolist())
    out = []
    for i, record in enumerate(batch):
        if i in chosen:
            out.append(replace(record, unified=uni.unify(record.raw),
                               used_unified=True))
        else:
            out.append(record)
    return out


def unify_for_inference(instruction: str, uni: InstructionUnifier) -> str:
    """Canonicalize an instruction on the inference path (always applied)."""
    global inference_unify_count
    if not instruction or not instruction.strip():
        raise ValidationError("instruction must be a non-empty string")
    inference_unify_count += 1
    return uni.unify(instruction)
