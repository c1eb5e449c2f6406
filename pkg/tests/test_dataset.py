import json

import numpy as np
import pytest
import torch

import gridedit.dataset as dataset_mod
from gridedit.config import DatasetConfig
from gridedit.dataset import (EditGroup, generate_groups, load_manifest,
                              load_record_images, pack_training_grids,
                              run_pipeline, synthesize_pairs)
from gridedit.errors import ValidationError
from gridedit.grid import decompose
from gridedit.synth import (ProceduralPairSynthesizer,
                            ProceduralPromptGenerator, Scene, caption,
                            parse_caption)

from conftest import rand_image


# ------------------------------------------------------------------- grammar

def test_caption_roundtrip():
    scene = Scene("small", "crimson", "square", "navy")
    assert parse_caption(caption(scene)) == scene
    assert caption(scene) == "a small crimson square on a navy background"


def test_parse_caption_rejects_garbage():
    with pytest.raises(ValidationError):
        parse_caption("a blue cube floating in space")
    with pytest.raises(ValidationError):
        parse_caption("a small mauve square on a navy background")


def test_renderer_is_seeded_and_in_range():
    synth = ProceduralPairSynthesizer(image_size=16)
    cap_in = "a small crimson square on a navy background"
    cap_out = "a small salmon square on a navy background"
    a = synth.synthesize(cap_in, cap_out, np.random.default_rng(5))
    b = synth.synthesize(cap_in, cap_out, np.random.default_rng(5))
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    for img in a:
        assert img.shape == (16, 16, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0
    # the edit changes the figure, not the whole scene
    assert not torch.equal(a[0], a[1])


# -------------------------------------------------------------------- groups

def test_generate_groups_counts_and_determinism():
    gen = ProceduralPromptGenerator(captions_per_group=5)
    groups = generate_groups(3, gen, seed=9)
    assert len(groups) == 3
    for g in groups:
        assert len(g.caption_pairs) == 5
        assert g.instruction
    again = generate_groups(3, gen, seed=9)
    assert [g.instruction for g in groups] == [g.instruction for g in again]
    assert [g.caption_pairs for g in groups] == [g.caption_pairs for g in again]


def test_generate_groups_validation():
    gen = ProceduralPromptGenerator()
    with pytest.raises(ValidationError):
        generate_groups(0, gen, seed=0)


def test_generate_groups_skips_failing_generator(caplog):
    class FlakyGen:
        def __init__(self):
            self.calls = 0

        def generate_group(self, rng):
            self.calls += 1
            if self.calls % 2 == 0:
                raise RuntimeError("backend down")
            return ("turn the a into a b",
                    [("a small crimson square on a navy background",
                      "a small salmon square on a navy background")] * 2,
                    "recolor")

    groups = generate_groups(4, FlakyGen(), seed=0)
    assert len(groups) == 2


# ----------------------------------------------------------------- synthesis

def demo_group(n_pairs=3):
    pairs = [("a small crimson square on a navy background",
              "a small salmon square on a navy background")] * n_pairs
    return EditGroup(group_id="g0000",
                     instruction="turn the crimson square into a salmon square",
                     caption_pairs=pairs, family="recolor")


def test_synthesize_single_candidate_kept(providers):
    emb, _, _ = providers
    synth = ProceduralPairSynthesizer(image_size=8)
    out = synthesize_pairs(demo_group(2), synth, candidates=1, emb=emb, seed=1)
    assert out is not None
    assert len(out.image_pairs) == 2


def test_synthesize_argmax_oracle(providers, monkeypatch):
    emb, _, _ = providers
    chosen = []

    class StubSynth:
        def synthesize(self, cap_in, cap_out, rng):
            marker = float(rng.integers(0, 1000)) / 1000.0
            img = torch.full((4, 4, 3), marker, dtype=torch.float64)
            return img, img

    scores = iter([0.1, 0.9, 0.4] * 10)

    def fake_dirsim(in_img, out_img, cap_in, cap_out, emb_):
        score = next(scores)
        chosen.append((in_img[0, 0, 0].item(), score))
        return score

    monkeypatch.setattr(dataset_mod, "directional_similarity", fake_dirsim)
    out = synthesize_pairs(demo_group(2), StubSynth(), candidates=3, emb=emb,
                           seed=2)
    # argmax keeps the candidate scored 0.9, i.e. the second of each triple
    assert out is not None
    assert out.image_pairs[0][0][0, 0, 0].item() == chosen[1][0]
    assert out.image_pairs[1][0][0, 0, 0].item() == chosen[4][0]


def test_synthesize_drops_invalid_pairs_and_small_groups(providers):
    emb, _, _ = providers

    class BrokenSynth:
        def synthesize(self, cap_in, cap_out, rng):
            raise RuntimeError("render failure")

    assert synthesize_pairs(demo_group(3), BrokenSynth(), 2, emb, seed=0) is None

    class HalfBrokenSynth:
        def __init__(self):
            self.calls = 0

        def synthesize(self, cap_in, cap_out, rng):
            self.calls += 1
            if self.calls <= 2:  # all candidates of the first pair fail
                return torch.full((4, 4, 3), float("nan"),
                                  dtype=torch.float64), \
                    torch.zeros(4, 4, 3, dtype=torch.float64)
            img = torch.full((4, 4, 3), 0.25, dtype=torch.float64)
            return img, img * 0.5

    out = synthesize_pairs(demo_group(3), HalfBrokenSynth(), 2, emb, seed=0)
    assert out is not None
    assert len(out.image_pairs) == 2  # first pair dropped, two survive


def test_synthesize_validation(providers):
    emb, _, _ = providers
    with pytest.raises(ValidationError):
        synthesize_pairs(demo_group(), ProceduralPairSynthesizer(8), 0, emb, 0)


# ------------------------------------------------------------------- packing

def synthesized_group(n_pairs=3, seed=0):
    emb_pairs = []
    caps = []
    for j in range(n_pairs):
        g = torch.Generator().manual_seed(seed * 100 + j)
        img_in = torch.rand(4, 4, 3, generator=g, dtype=torch.float64)
        img_out = torch.rand(4, 4, 3, generator=g, dtype=torch.float64)
        emb_pairs.append((img_in, img_out))
        caps.append((f"cap in {j}", f"cap out {j}"))
    return EditGroup(group_id=f"g{seed:04d}", instruction="change the a to a b",
                     caption_pairs=caps, image_pairs=emb_pairs, family="recolor")


def test_pack_two_pair_group_uses_both():
    group = synthesized_group(2)
    records = pack_training_grids([group], seed=3, packs_per_group=1)
    assert len(records) == 1
    rec = records[0]
    assert {rec.example_idx, rec.query_idx} == {0, 1}
    quads = decompose(rec.train_grid)
    assert torch.equal(quads[0], group.image_pairs[rec.example_idx][0])
    assert torch.equal(quads[1], group.image_pairs[rec.example_idx][1])
    assert torch.equal(quads[2], group.image_pairs[rec.query_idx][0])
    assert torch.equal(quads[3], group.image_pairs[rec.query_idx][1])


def test_pack_pairs_always_distinct():
    group = synthesized_group(4)
    for seed in range(10):
        for rec in pack_training_grids([group], seed=seed, packs_per_group=3):
            assert rec.example_idx != rec.query_idx


def test_pack_cond_grid_masks_query_output():
    group = synthesized_group(3)
    rec = pack_training_grids([group], seed=1, grey=0.5)[0]
    h, w = rec.train_grid.shape[0] // 2, rec.train_grid.shape[1] // 2
    assert torch.equal(rec.cond_grid[h:, w:],
                       torch.full((h, w, 3), 0.5, dtype=torch.float64))
    assert torch.equal(rec.cond_grid[:h, :], rec.train_grid[:h, :])
    assert torch.equal(rec.cond_grid[h:, :w], rec.train_grid[h:, :w])


def test_pack_skips_small_groups():
    small = synthesized_group(1)
    ok = synthesized_group(2, seed=1)
    records = pack_training_grids([small, ok], seed=0)
    assert {r.group_id for r in records} == {ok.group_id}


# ------------------------------------------------------------------ pipeline

def test_pipeline_outputs_and_integrity(tiny_dataset):
    summary = tiny_dataset["summary"]
    manifest = tiny_dataset["manifest"]
    rows = load_manifest(manifest)
    assert summary["groups_kept"] >= 2
    # every surviving group contributed at least two pairs
    assert summary["pairs_kept"] >= 2 * summary["groups_kept"]
    # split disjointness by group
    train_groups = {r["group_id"] for r in rows if r["split"] == "train"}
    ood_groups = {r["group_id"] for r in rows if r["split"] == "ood"}
    assert train_groups and ood_groups
    assert not train_groups & ood_groups
    in_groups = {r["group_id"] for r in rows if r["split"] == "in"}
    assert in_groups <= train_groups
    # record images load and agree with the grid layout
    row = rows[0]
    train_grid, cond_grid, mask = load_record_images(row, manifest)
    assert train_grid.shape == (16, 16, 3)
    assert cond_grid.shape == (16, 16, 3)
    assert mask.shape == (16, 16)
    assert set(torch.unique(mask).tolist()) <= {0.0, 1.0}
    assert torch.equal(cond_grid[:8, :], train_grid[:8, :])


def test_pipeline_determinism_byte_identical(tmp_path, providers):
    emb, seg, uni = providers
    cfg = DatasetConfig(n_groups=4, image_size=8, seed=21,
                        candidates_per_pair=2)
    run_pipeline(cfg, tmp_path / "a", emb, seg, uni)
    run_pipeline(cfg, tmp_path / "b", emb, seg, uni)
    a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
    b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert a == b
    meta_a = (tmp_path / "a" / "dataset_meta.json").read_bytes()
    meta_b = (tmp_path / "b" / "dataset_meta.json").read_bytes()
    assert meta_a == meta_b
    for rel in json.loads(a.splitlines()[0])["train_grid"].split():
        assert (tmp_path / "a" / rel).read_bytes() == \
            (tmp_path / "b" / rel).read_bytes()


def test_pipeline_different_seed_differs(tmp_path, providers):
    emb, seg, uni = providers
    cfg_a = DatasetConfig(n_groups=4, image_size=8, seed=1,
                          candidates_per_pair=2)
    cfg_b = DatasetConfig(n_groups=4, image_size=8, seed=2,
                          candidates_per_pair=2)
    run_pipeline(cfg_a, tmp_path / "a", emb, seg, uni)
    run_pipeline(cfg_b, tmp_path / "b", emb, seg, uni)
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() != \
        (tmp_path / "b" / "manifest.jsonl").read_bytes()


def test_manifest_contains_unified_instruction(tiny_dataset, providers):
    _, _, uni = providers
    rows = load_manifest(tiny_dataset["manifest"])
    for row in rows:
        assert row["instruction_unified"] == uni.unify(row["instruction"])


def test_load_manifest_empty_error(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text("")
    with pytest.raises(ValidationError):
        load_manifest(path)
