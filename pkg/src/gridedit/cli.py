"""Command-line entry point: dataset generation, training, editing, and
evaluation. Exit codes: 0 success, 1 internal error, 2 usage/validation."""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import torch

from . import dataset as dataset_mod
from .config import (DatasetConfig, ProviderConfig, TrainConfig,
                     config_as_dict, dataset_config_from_mapping,
                     read_flat_config, train_config_from_mapping)
from .diffusion import load_checkpoint, sample
from .errors import ValidationError
from .evaluation import evaluate_split
from .grid import bottom_right, compose, mask_query
from .instructions import unify_for_inference
from .pngio import read_png, write_grid, write_png
from .providers import build_providers
from .training import train


def _log_config(label: str, cfg_dict: dict, out_dir: Path | None = None) -> None:
    line = json.dumps({label: cfg_dict}, sort_keys=True)
    print(f"resolved_config {line}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(
            json.dumps(cfg_dict, sort_keys=True, indent=2) + "\n")


def _cmd_dataset(args) -> int:
    mapping = read_flat_config(args.config) if args.config else {}
    if args.groups is not None:
        mapping["n_groups"] = args.groups
    if args.seed is not None:
        mapping["seed"] = args.seed
    cfg, provider_cfg = dataset_config_from_mapping(mapping)
    out = Path(args.out)
    _log_config("dataset", {**config_as_dict(cfg),
                            "providers": config_as_dict(provider_cfg)}, out)
    emb, seg, uni = build_providers(provider_cfg)
    summary = dataset_mod.run_pipeline(cfg, out, emb, seg, uni)
    print(f"groups kept: {summary['groups_kept']} / {summary['groups_requested']}")
    print(f"image pairs: {summary['pairs_kept']}")
    print(f"packed records: {summary['records']}")
    print(f"manifest: {summary['manifest']}")
    return 0


def _cmd_train(args) -> int:
    mapping = read_flat_config(args.config) if args.config else {}
    if args.steps is not None:
        mapping["steps"] = args.steps
    if args.seed is not None:
        mapping["seed"] = args.seed
    cfg, provider_cfg = train_config_from_mapping(mapping)
    out = Path(args.out)
    _log_config("train", {**config_as_dict(cfg),
                          "providers": config_as_dict(provider_cfg)}, out)
    providers = build_providers(provider_cfg)
    report = train(args.manifest, cfg, out, providers,
                   resume_from=args.resume)
    if report.steps:
        last = report.steps[-1]
        print(f"final losses: total={last['total']:.6f} "
              f"l_diff={last['l_diff']:.6f} l_es={last['l_es']:.6f} "
              f"l_sam={last['l_sam']:.6f}")
    print(f"checkpoint: {report.checkpoint_path}")
    return 0


def _cmd_edit(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    example_in = read_png(args.example_in)
    example_out = read_png(args.example_out)
    query_in = read_png(args.query_in)
    provider_cfg = ProviderConfig()
    if args.config:
        mapping = read_flat_config(args.config)
        provider_cfg = ProviderConfig(**mapping)
    emb, _, uni = build_providers(provider_cfg)
    if emb.dim != state.config.text_dim:
        raise ValidationError(
            f"embedder dimension {emb.dim} != model text dimension "
            f"{state.config.text_dim}")
    _log_config("edit", {
        "checkpoint": str(args.checkpoint), "seed": args.seed,
        "steps": args.steps, "guidance_scale": args.guidance_scale,
        "instruction": args.instruction,
        "providers": config_as_dict(provider_cfg)})

    unified = unify_for_inference(args.instruction, uni)
    text = emb.embed_text(unified)
    grey = state.config.grey
    placeholder = torch.full_like(query_in, grey)
    cond = mask_query(compose(example_in, example_out, query_in, placeholder),
                      grey)
    grid = sample(state, cond, text, guidance_scale=args.guidance_scale,
                  steps=args.steps, seed=args.seed)
    out_path = write_png(args.out, bottom_right(grid))
    if args.save_grid:
        write_grid(str(Path(args.out).with_suffix("")), grid)
    print(f"unified instruction: {unified}")
    print(f"edited image: {out_path}")
    return 0


def _cmd_evaluate(args) -> int:
    provider_cfg = ProviderConfig()
    if args.config:
        mapping = read_flat_config(args.config)
        provider_cfg = ProviderConfig(**mapping)
    emb, _, uni = build_providers(provider_cfg)
    _log_config("evaluate", {
        "checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
        "split": args.split, "seed": args.seed,
        "providers": config_as_dict(provider_cfg)})
    report = evaluate_split(args.checkpoint, args.manifest, args.split, emb,
                            uni, seed=args.seed, steps=args.steps)
    path = report.write(args.out)
    print(f"records: {len(report.records)}")
    print(f"directional_similarity: {report.directional_similarity:.6f}")
    print(f"feature_distance: {report.feature_distance:.6f}")
    print(f"masked_mse: {report.masked_mse:.6f}")
    print(f"report: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridedit",
        description="Visual-prompt grid image editing: dataset, train, edit, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a paired-editing dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("edit", help="edit a query image from one example pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--example-in", required=True)
    p.add_argument("--example-out", required=True)
    p.add_argument("--query-in", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance-scale", type=float, default=None)
    p.add_argument("--save-grid", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("in", "ood"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


def main() -> None:
    sys.exit(run())
