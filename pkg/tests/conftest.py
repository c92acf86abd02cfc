from __future__ import annotations

import numpy as np
import pytest

from guidedwm.config import RunConfig, load_config
from guidedwm.pipeline import prepare


def small_config(root) -> RunConfig:
    cfg = load_config(overrides=[
        f"paths.data={root}/data", f"paths.cache={root}/cache", f"paths.out={root}/runs",
        "dataset.n_train=24", "dataset.n_val=8", "dataset.n_test=8", "dataset.n_calibration=16",
        "optim.steps=20", "optim.eval_every=10", "optim.batch_size=4",
    ])
    return cfg.validate()


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A tiny generated dataset and cache shared by the harness tests."""
    root = tmp_path_factory.mktemp("small")
    cfg = small_config(root)
    data = prepare(cfg)
    return cfg, data


@pytest.fixture
def rng():
    return np.random.default_rng(0)
