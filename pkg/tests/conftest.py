import numpy as np
import pytest
import torch

from pastegan.config import overfit_config, tiny_config
from pastegan.data import SyntheticSceneSpec, generate_synthetic_dataset
from pastegan.scenegraph import Vocab


@pytest.fixture(scope="session")
def toy_vocab():
    return Vocab.create(["boat", "river", "sky", "person"], ["on", "near", "under"])


@pytest.fixture(scope="session")
def shapes_spec():
    return SyntheticSceneSpec(seed=11)


@pytest.fixture(scope="session")
def shapes_vocab(shapes_spec):
    return shapes_spec.vocab()


@pytest.fixture(scope="session")
def small_dataset(shapes_spec):
    return generate_synthetic_dataset(shapes_spec, 12)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Train the committed overfit preset once per session.

    Several tests (the overfit acceptance criteria, object-level control,
    trained-model behaviors) share this run. Takes some minutes on CPU.
    """
    from pastegan.trainer import fit

    root = tmp_path_factory.mktemp("overfit_home")
    config = overfit_config()
    fit(config, out_root=root)
    return root / "runs" / config.name


@pytest.fixture(scope="session")
def tiny_trained_setup():
    """A tiny bundle + tank trained for a handful of steps; cheap shared
    state for contract tests that need a working artifact but not quality."""
    from pastegan.data import tank_sources
    from pastegan.memory_tank import build_tank
    from pastegan.pipeline import ModelBundle, RunArtifacts
    from pastegan.trainer import (TrainModels, build_optimizers, collate_batch,
                                  pretrain_selector, train_step)

    cfg = tiny_config()
    spec = SyntheticSceneSpec(image_size=cfg.image_size, crop_size=cfg.crop_size, seed=3)
    ds = generate_synthetic_dataset(spec, 8)
    vocab = spec.vocab()
    torch.manual_seed(cfg.seed)
    bundle = ModelBundle(cfg, vocab)
    pretrain_selector(bundle, ds, vocab, cfg)
    tank = build_tank(tank_sources(ds), bundle.selector(), vocab, cfg.crop_size)
    models = TrainModels(bundle=bundle, tank=tank,
                         noise_rng=torch.Generator().manual_seed(0))
    opts = build_optimizers(bundle, cfg)
    for i in range(2):
        batch = collate_batch(ds[i * 4:(i + 1) * 4], vocab)
        train_step(batch, models, opts, cfg)
    bundle.eval()
    return {"config": cfg, "vocab": vocab, "dataset": ds, "bundle": bundle,
            "tank": tank, "artifacts": RunArtifacts(bundle=bundle, tank=tank)}
