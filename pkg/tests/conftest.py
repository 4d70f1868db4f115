import pytest

from recamera.dataset import Dataset, DatasetConfig, render_dataset
from recamera.model import ModelConfig
from recamera.scenegen import SceneConfig
from recamera.train import TrainConfig, train

TINY_MODEL = ModelConfig(dim=48, depth=1, heads=2, patch=4)

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def tiny_dataset_config(**kw):
    base = dict(n_scenes=10, n_cameras=3, width=16, height=16, scene=SceneConfig(frames=4))
    base.update(kw)
    return DatasetConfig(**base)


@pytest.fixture(scope="session")
def tiny_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_ds")
    render_dataset(root, tiny_dataset_config())
    return Dataset(root)


@pytest.fixture(scope="session")
def tiny_base(tiny_ds, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_base")
    cfg = TrainConfig(stage="pretrain_base", steps=5, batch_size=2, lr=1e-3, model=TINY_MODEL,
                      dataset=str(tiny_ds.root), val_batches=1)
    return train(cfg, out, tiny_ds)["checkpoint"]


@pytest.fixture
def ft_config(tiny_ds, tiny_base):
    return TrainConfig(stage="recam_finetune", steps=10, batch_size=2, lr=1e-3, model=TINY_MODEL,
                       dataset=str(tiny_ds.root), base_checkpoint=tiny_base, val_batches=1)
