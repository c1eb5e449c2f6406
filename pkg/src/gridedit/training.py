"""Joint training loop: diffusion noise-matching plus the editing-shift and
selective-area auxiliary losses, with instruction-unification augmentation
and instruction dropout.

All per-step randomness is derived from (seed, step), so runs are fully
reproducible and resuming from a checkpoint continues bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, config_as_dict
from .dataset import load_manifest, load_record_images
from .diffusion import (DenoiserState, build_state, forward_noise,
                        load_checkpoint, predict_noise, reconstruct_x0,
                        save_checkpoint)
from .errors import ValidationError
from .grid import DTYPE, mask_example
from .instructions import InstructionRecord, augment_batch
from .providers import Embedder
from .selective import selective_area_loss
from .shift import editing_shift_loss, grid_shift

REPORT_NAME = "report.jsonl"
CURVE_NAME = "loss_curve.png"
CONFIG_NAME = "resolved_config.json"
CHECKPOINT_NAME = "checkpoint.pt"


class NonFiniteLossError(RuntimeError):
    """A training loss became NaN/inf; carries the offending record ids."""

    def __init__(self, message: str, record_ids: list[str], losses: dict):
        super().__init__(message)
        self.record_ids = record_ids
        self.losses = losses


@dataclass
class TrainRecord:
    record_id: str
    group_id: str
    instruction: InstructionRecord
    train_grid: torch.Tensor
    cond_grid: torch.Tensor
    mask: torch.Tensor
    caption_in: str = ""
    caption_out: str = ""
    text_override: str | None = None  # set by dropout

    @property
    def text(self) -> str:
        if self.text_override is not None:
            return self.text_override
        return self.instruction.text


@dataclass
class TrainSession:
    state: DenoiserState
    optimizer: torch.optim.Optimizer
    step: int = 0


@dataclass
class TrainReport:
    steps: list[dict]
    checkpoint_path: Path
    intermediate_checkpoints: list[Path]
    out_dir: Path


def apply_dropout(record: TrainRecord, drop_fraction: float,
                  rng: np.random.Generator, grey: float = 0.5,
                  exclusive: bool = True) -> TrainRecord:
    """With probability drop_fraction, blank one conditioning modality:
    either the instruction text or the conditioning grid's example row.

    Exclusive mode drops exactly one of the two; otherwise a third of drop
    events blank both.
    """
    if not 0.0 <= drop_fraction <= 1.0:
        raise ValidationError("drop_fraction must lie in [0, 1]")
    if rng.random() >= drop_fraction:
        return record
    u = rng.random()
    if exclusive:
        drop_text, drop_visual = (u < 0.5), (u >= 0.5)
    else:
        drop_text, drop_visual = (u < 2 / 3), (u >= 1 / 3)
    out = record
    if drop_text:
        out = replace(out, text_override="")
    if drop_visual:
        out = replace(out, cond_grid=mask_example(out.cond_grid, grey))
    return out


def compute_batch_losses(state: DenoiserState, records: list[TrainRecord],
                         cfg: TrainConfig, emb: Embedder,
                         rng: np.random.Generator | None = None,
                         t: torch.Tensor | None = None,
                         eps: torch.Tensor | None = None,
                         eps_hat_override: torch.Tensor | None = None):
    """Total weighted loss over a batch plus the unweighted parts.

    Timesteps are drawn from [1, T-1] so the pseudo-output reconstruction is
    always defined. Pass t/eps explicitly for deterministic re-evaluation.
    """
    sched = state.schedule
    if sched.steps < 2:
        raise ValidationError("training needs a schedule with at least 2 steps")
    codec = state.codec
    x0 = torch.stack([codec.encode(r.train_grid) for r in records])
    if t is None:
        t = torch.from_numpy(rng.integers(1, sched.steps, size=len(records)))
    if eps is None:
        eps = torch.from_numpy(rng.standard_normal(x0.shape)).to(DTYPE)
    x_t = forward_noise(x0, t, eps, sched)
    text = torch.stack([emb.embed_text(r.text) for r in records])
    cond = torch.stack([r.cond_grid for r in records])
    eps_hat = eps_hat_override
    if eps_hat is None:
        eps_hat = predict_noise(state, x_t, t, text, cond)

    l_diff = ((eps_hat - eps) ** 2).mean()
    zero = torch.zeros((), dtype=DTYPE)
    l_es = zero
    l_sam = zero
    if cfg.lambda_es > 0.0 or cfg.lambda_sam > 0.0:
        pseudo = codec.decode(reconstruct_x0(x_t, eps_hat, t, sched))
        pseudo = pseudo.clamp(0.0, 1.0)
        if cfg.lambda_es > 0.0:
            terms = [editing_shift_loss(grid_shift(pseudo[i], emb),
                                        grid_shift(r.train_grid, emb))
                     for i, r in enumerate(records)]
            l_es = torch.stack(terms).mean()
        if cfg.lambda_sam > 0.0:
            terms = [selective_area_loss(pseudo[i], r.train_grid, r.mask,
                                         cfg.sam_normalize_by_mask)
                     for i, r in enumerate(records)]
            l_sam = torch.stack(terms).mean()
    total = l_diff + cfg.lambda_es * l_es + cfg.lambda_sam * l_sam
    parts = {"l_diff": l_diff.item(), "l_es": l_es.item(),
             "l_sam": l_sam.item(), "total": total.item()}
    return total, parts


def train_step(session: TrainSession, records: list[TrainRecord],
               cfg: TrainConfig, rng: np.random.Generator,
               emb: Embedder) -> dict:
    """One optimizer update on the trainable parameters only."""
    total, parts = compute_batch_losses(session.state, records, cfg, emb, rng)
    if not torch.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss at step {session.step}: {parts}",
            record_ids=[r.record_id for r in records], losses=parts)
    session.optimizer.zero_grad(set_to_none=True)
    total.backward()
    session.optimizer.step()
    session.step += 1
    return parts


def records_from_manifest(manifest_path: str | Path, split: str = "train"
                          ) -> list[TrainRecord]:
    rows = [r for r in load_manifest(manifest_path) if r["split"] == split]
    if not rows:
        raise ValidationError(f"manifest has no '{split}' records")
    records = []
    for row in rows:
        train_grid, cond_grid, mask = load_record_images(row, manifest_path)
        records.append(TrainRecord(
            record_id=row["record_id"],
            group_id=row["group_id"],
            instruction=InstructionRecord(raw=row["instruction"]),
            train_grid=train_grid,
            cond_grid=cond_grid,
            mask=mask,
            caption_in=row["caption_in"],
            caption_out=row["caption_out"],
        ))
    return records


def build_session(cfg: TrainConfig, resume_from: str | Path | None = None
                  ) -> TrainSession:
    if resume_from is None:
        state = build_state(cfg.model, cfg.seed)
        optimizer = torch.optim.AdamW(state.model.trainable_parameters(),
                                      lr=cfg.learning_rate,
                                      weight_decay=cfg.weight_decay)
        return TrainSession(state=state, optimizer=optimizer, step=0)
    state, payload = load_checkpoint(resume_from)
    optimizer = torch.optim.AdamW(state.model.trainable_parameters(),
                                  lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)
    if payload.get("optimizer_state"):
        optimizer.load_state_dict(payload["optimizer_state"])
    return TrainSession(state=state, optimizer=optimizer,
                        step=int(payload.get("step", 0)))


def train(manifest_path: str | Path, cfg: TrainConfig, out_dir: str | Path,
          providers, resume_from: str | Path | None = None) -> TrainReport:
    """Run cfg.steps training steps over the manifest's train split."""
    emb, seg, uni = providers
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = records_from_manifest(manifest_path)
    session = build_session(cfg, resume_from)

    (out / CONFIG_NAME).write_text(
        json.dumps(config_as_dict(cfg), sort_keys=True, indent=2) + "\n")

    report_rows: list[dict] = []
    intermediates: list[Path] = []
    for step in range(session.step, cfg.steps):
        step_rng = np.random.default_rng([cfg.seed, 10, step])
        idx = step_rng.integers(0, len(records), size=cfg.batch_size)
        batch = [records[int(i)] for i in idx]
        instrs = augment_batch([r.instruction for r in batch], uni,
                               rng_seed=[cfg.seed, 11, step],
                               fraction=cfg.liu_fraction)
        batch = [replace(r, instruction=ins)
                 for r, ins in zip(batch, instrs)]
        batch = [apply_dropout(r, cfg.drop_fraction, step_rng,
                               grey=cfg.model.grey,
                               exclusive=cfg.drop_exclusive)
                 for r in batch]
        try:
            parts = train_step(session, batch, cfg, step_rng, emb)
        except NonFiniteLossError as err:
            dump = {"step": step, "record_ids": err.record_ids,
                    "losses": err.losses}
            (out / "diagnostic_dump.json").write_text(
                json.dumps(dump, sort_keys=True, indent=2) + "\n")
            raise
        report_rows.append({"step": step, **parts})
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 \
                and (step + 1) < cfg.steps:
            path = save_checkpoint(out / f"checkpoint_step{step + 1:06d}.pt",
                                   session.state, session.optimizer,
                                   step=session.step,
                                   train_config=config_as_dict(cfg),
                                   seed=cfg.seed)
            intermediates.append(path)

    final = save_checkpoint(out / CHECKPOINT_NAME, session.state,
                            session.optimizer, step=session.step,
                            train_config=config_as_dict(cfg), seed=cfg.seed)
    with (out / REPORT_NAME).open("w") as fh:
        for row in report_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_loss_curve(out / CURVE_NAME, report_rows)
    return TrainReport(steps=report_rows, checkpoint_path=final,
                       intermediate_checkpoints=intermediates, out_dir=out)


def _write_loss_curve(path: Path, rows: list[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    if rows:
        steps = [r["step"] for r in rows]
        for key in ("total", "l_diff", "l_es", "l_sam"):
            ax.plot(steps, [r[key] for r in rows], label=key)
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
