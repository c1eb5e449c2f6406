import numpy as np
import pytest
import torch

from gridedit.config import DatasetConfig, ModelConfig, TrainConfig
from gridedit.dataset import run_pipeline
from gridedit.providers import MockEmbedder, MockSegmenter, MockUnifier


@pytest.fixture(scope="session")
def providers():
    return MockEmbedder(), MockSegmenter(), MockUnifier()


@pytest.fixture(scope="session")
def tiny_model_config():
    # small enough for finite differences, large enough to exercise levels
    return ModelConfig(base_channels=4, levels=2, emb_dim=8, cond_channels=2,
                       state_dim=2, text_dim=24, schedule_steps=10)


@pytest.fixture(scope="session")
def tiny_train_config(tiny_model_config):
    return TrainConfig(steps=4, batch_size=2, seed=3, checkpoint_every=0,
                       model=tiny_model_config)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, providers):
    """A small but complete dataset: 6 groups of 8x8 images (16x16 grids)."""
    emb, seg, uni = providers
    out = tmp_path_factory.mktemp("tiny_ds")
    cfg = DatasetConfig(n_groups=6, image_size=8, seed=11,
                        candidates_per_pair=2, packs_per_group=2,
                        indomain_packs_per_group=1, ood_packs_per_group=2)
    summary = run_pipeline(cfg, out, emb, seg, uni)
    return {"dir": out, "manifest": out / "manifest.jsonl",
            "summary": summary, "config": cfg}


def rand_image(h, w, c=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(h, w, c, generator=g, dtype=torch.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
