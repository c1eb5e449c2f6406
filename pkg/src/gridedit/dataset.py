"""Two-phase paired-editing dataset pipeline.

Phase 1 (generation): produce instruction groups (one instruction, several
caption pairs), then synthesize K image-pair candidates per caption pair and
keep the candidate with the best directional-similarity score. Groups that
end up with fewer than two valid pairs are dropped.

Phase 2 (processing): split groups 80/20 into train/eval, then pack training
records by picking two distinct pairs of one group into a 2x2 grid (ground
truth) plus its grey-masked conditioning grid.

Everything is seeded and file output is byte-reproducible: the manifest is
sorted-key JSON lines, images are 8-bit PNGs.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import DatasetConfig, config_as_dict
from .errors import ValidationError
from .grid import compose, mask_query
from .metrics import directional_similarity
from .pngio import read_png, write_png
from .providers import Embedder, InstructionUnifier, Segmenter
from .selective import build_mask
from .synth import ProceduralPairSynthesizer, ProceduralPromptGenerator

logger = logging.getLogger("gridedit.dataset")

MANIFEST_NAME = "manifest.jsonl"
META_NAME = "dataset_meta.json"
SPLITS = ("train", "in", "ood")


@dataclass
class EditGroup:
    group_id: str
    instruction: str
    caption_pairs: list[tuple[str, str]]
    image_pairs: list[tuple[torch.Tensor, torch.Tensor]] = field(default_factory=list)
    family: str = ""


@dataclass
class PackedRecord:
    record_id: str
    group_id: str
    split: str
    instruction: str
    family: str
    example_idx: int
    query_idx: int
    example_caption_in: str
    example_caption_out: str
    caption_in: str
    caption_out: str
    train_grid: torch.Tensor
    cond_grid: torch.Tensor
    pack_seed: tuple[int, ...]


def generate_groups(n_groups: int, promptgen, seed) -> list[EditGroup]:
    """Phase-1 step 1: caption-only instruction groups. Generator failures
    skip the group with a log entry."""
    if n_groups < 1:
        raise ValidationError("n_groups must be >= 1")
    base = _seed_tuple(seed)
    groups = []
    for i in range(n_groups):
        rng = np.random.default_rng([*base, 0, i])
        try:
            instruction, pairs, family = promptgen.generate_group(rng)
        except Exception:
            logger.warning("prompt generator failed for group %d; skipped", i,
                           exc_info=True)
            continue
        groups.append(EditGroup(group_id=f"g{i:04d}", instruction=instruction,
                                caption_pairs=list(pairs), family=family))
    return groups


def synthesize_pairs(group: EditGroup, synth, candidates: int, emb: Embedder,
                     seed) -> EditGroup | None:
    """Phase-1 step 2: best-of-K image synthesis per caption pair.

    Keeps the candidate maximizing directional similarity; drops pairs with
    no valid candidate, and returns None if fewer than two pairs survive.
    """
    if candidates < 1:
        raise ValidationError("candidates must be >= 1")
    base = _seed_tuple(seed)
    kept_caps, kept_imgs = [], []
    for j, (cap_in, cap_out) in enumerate(group.caption_pairs):
        best, best_score = None, -math.inf
        for k in range(candidates):
            rng = np.random.default_rng([*base, j, k])
            try:
                img_in, img_out = synth.synthesize(cap_in, cap_out, rng)
            except Exception:
                logger.warning("synthesizer failed (%s pair %d cand %d)",
                               group.group_id, j, k, exc_info=True)
                continue
            if not (_valid_image(img_in) and _valid_image(img_out)):
                logger.warning("invalid candidate (%s pair %d cand %d)",
                               group.group_id, j, k)
                continue
            score = directional_similarity(img_in, img_out, cap_in, cap_out, emb)
            if math.isfinite(score) and score > best_score:
                best, best_score = (img_in, img_out), score
        if best is None:
            logger.warning("all candidates invalid for %s pair %d; pair dropped",
                           group.group_id, j)
            continue
        kept_caps.append((cap_in, cap_out))
        kept_imgs.append(best)
    if len(kept_imgs) < 2:
        logger.warning("group %s has %d valid pairs (< 2); group dropped",
                       group.group_id, len(kept_imgs))
        return None
    return dataclasses.replace(group, caption_pairs=kept_caps,
                               image_pairs=kept_imgs)


def pack_training_grids(groups: list[EditGroup], seed, packs_per_group: int = 1,
                        grey: float = 0.5, split: str = "train") -> list[PackedRecord]:
    """Phase 2: pick two distinct pairs per record and pack them into a
    ground-truth grid plus its masked conditioning grid."""
    base = _seed_tuple(seed)
    records = []
    for gi, group in enumerate(groups):
        if len(group.image_pairs) < 2:
            logger.warning("group %s has < 2 pairs; skipped in packing",
                           group.group_id)
            continue
        for r in range(packs_per_group):
            pack_seed = (*base, gi, r)
            rng = np.random.default_rng(list(pack_seed))
            ex, q = (int(v) for v in
                     rng.choice(len(group.image_pairs), size=2, replace=False))
            in_ex, out_ex = group.image_pairs[ex]
            in_q, out_q = group.image_pairs[q]
            train_grid = compose(in_ex, out_ex, in_q, out_q)
            records.append(PackedRecord(
                record_id=f"{split}_{group.group_id}_{r}",
                group_id=group.group_id,
                split=split,
                instruction=group.instruction,
                family=group.family,
                example_idx=ex,
                query_idx=q,
                example_caption_in=group.caption_pairs[ex][0],
                example_caption_out=group.caption_pairs[ex][1],
                caption_in=group.caption_pairs[q][0],
                caption_out=group.caption_pairs[q][1],
                train_grid=train_grid,
                cond_grid=mask_query(train_grid, grey),
                pack_seed=pack_seed,
            ))
    return records


def run_pipeline(cfg: DatasetConfig, out_dir: str | Path,
                 emb: Embedder, seg: Segmenter, uni: InstructionUnifier,
                 promptgen=None, synth=None) -> dict:
    """Run the full pipeline and write pairs, packed grids, masks, the
    manifest, and the meta file. Returns a summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    promptgen = promptgen or ProceduralPromptGenerator(cfg.captions_per_group)
    synth = synth or ProceduralPairSynthesizer(cfg.image_size)

    groups = generate_groups(cfg.n_groups, promptgen, cfg.seed)
    kept: list[EditGroup] = []
    for gi, group in enumerate(groups):
        result = synthesize_pairs(group, synth, cfg.candidates_per_pair, emb,
                                  seed=(cfg.seed, 1, gi))
        if result is not None:
            kept.append(result)
    if len(kept) < 2:
        raise ValidationError(
            f"only {len(kept)} groups survived synthesis; need at least 2")

    # 80/20 split by group, never by pair
    perm = np.random.default_rng([cfg.seed, 2]).permutation(len(kept))
    n_train = int(len(kept) * cfg.train_fraction)
    n_train = max(1, min(n_train, len(kept) - 1))
    train_groups = [kept[i] for i in sorted(perm[:n_train])]
    eval_groups = [kept[i] for i in sorted(perm[n_train:])]

    records = []
    records += pack_training_grids(train_groups, (cfg.seed, 3),
                                   cfg.packs_per_group, cfg.grey, split="train")
    records += pack_training_grids(train_groups, (cfg.seed, 4),
                                   cfg.indomain_packs_per_group, cfg.grey,
                                   split="in")
    records += pack_training_grids(eval_groups, (cfg.seed, 5),
                                   cfg.ood_packs_per_group, cfg.grey,
                                   split="ood")

    pair_count = 0
    for group in kept:
        pair_dir = out / "pairs" / group.group_id
        for j, (img_in, img_out) in enumerate(group.image_pairs):
            write_png(pair_dir / f"p{j}_in.png", img_in)
            write_png(pair_dir / f"p{j}_out.png", img_out)
            pair_count += 1

    rows = []
    for record in records:
        stem = out / "packed" / record.record_id
        write_png(Path(f"{stem}_train_grid.png"), record.train_grid)
        write_png(Path(f"{stem}_cond_grid.png"), record.cond_grid)
        mask = build_mask(record.train_grid, seg, uni, cfg.selected_classes)
        write_png(Path(f"{stem}_mask.png"), mask.mask[:, :, None])
        pair_dir = f"pairs/{record.group_id}"
        rows.append({
            "record_id": record.record_id,
            "group_id": record.group_id,
            "split": record.split,
            "instruction": record.instruction,
            "instruction_unified": uni.unify(record.instruction),
            "family": record.family,
            "example_caption_in": record.example_caption_in,
            "example_caption_out": record.example_caption_out,
            "caption_in": record.caption_in,
            "caption_out": record.caption_out,
            "example_in": f"{pair_dir}/p{record.example_idx}_in.png",
            "example_out": f"{pair_dir}/p{record.example_idx}_out.png",
            "query_in": f"{pair_dir}/p{record.query_idx}_in.png",
            "query_out": f"{pair_dir}/p{record.query_idx}_out.png",
            "train_grid": f"packed/{record.record_id}_train_grid.png",
            "cond_grid": f"packed/{record.record_id}_cond_grid.png",
            "mask": f"packed/{record.record_id}_mask.png",
            "mask_classes": list(mask.source_classes),
            "pack_seed": list(record.pack_seed),
        })

    manifest_path = out / MANIFEST_NAME
    with manifest_path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    summary = {
        "groups_requested": cfg.n_groups,
        "groups_kept": len(kept),
        "pairs_kept": pair_count,
        "train_groups": [g.group_id for g in train_groups],
        "eval_groups": [g.group_id for g in eval_groups],
        "records": {split: sum(1 for r in records if r.split == split)
                    for split in SPLITS},
        "manifest": MANIFEST_NAME,
    }
    (out / META_NAME).write_text(
        json.dumps({"config": config_as_dict(cfg), "summary": summary},
                   sort_keys=True, indent=2) + "\n")
    return {**summary, "manifest": str(manifest_path)}


def load_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    if not rows:
        raise ValidationError(f"manifest {path} contains no records")
    return rows


def load_record_images(row: dict, manifest_path: str | Path):
    """Resolve and load a manifest row's grids and mask."""
    root = Path(manifest_path).parent
    train_grid = read_png(root / row["train_grid"])
    cond_grid = read_png(root / row["cond_grid"])
    mask = read_png(root / row["mask"])[:, :, 0]
    return train_grid, cond_grid, mask


def _valid_image(img: torch.Tensor) -> bool:
    return bool(torch.isfinite(img).all()) and \
        float(img.min()) >= 0.0 and float(img.max()) <= 1.0


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(v) for v in seed)
