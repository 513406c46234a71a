import os
from collections import OrderedDict

import numpy as np
import pytest

from gdt_libs.config import ModelConfig, config_from_dict, load_config_dict
from gdt_libs.gdt_model import param_init
from gdt_libs.tensor_engine import Tensor, precision

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    with precision("float64"):
        yield


def tiny_model(**overrides) -> ModelConfig:
    fields = dict(variant="encoder-decoder", image_size=8, channels_in=3, patch=4, dim=16, heads=2,
                  depth=2, mlp_ratio=2, vocab=26, context_len=6, max_group=4)
    fields.update(overrides)
    return ModelConfig(**fields).validate()


def random_params(cfg: ModelConfig, seed: int = 0, scale: float = 0.2) -> "OrderedDict[str, Tensor]":
    """Initialised parameters with every tensor (gates and output layer included) made non-zero."""
    params = param_init(cfg, seed)
    r = np.random.default_rng(seed + 1)
    for p in params.values():
        p.data = (p.data + scale * r.standard_normal(p.shape)).astype(p.data.dtype)
    return params


def tiny_run_config(**sections):
    """Small but complete run config for trainer tests."""
    data = load_config_dict()
    data["model"].update(image_size=16, patch=4, dim=16, heads=2, depth=1, mlp_ratio=2, max_group=2)
    data["diffusion"].update(train_steps=20)
    data["train"].update(steps=3, warmup_steps=1, token_budget=80, checkpoint_every=0, log_every=1)
    data["finetune"].update(steps=2, eval_groups=2)
    data["sample"].update(steps=2)
    data["eval"].update(groups=3, metrics=["consistency", "adherence"])
    data["data"].update(corpus_size=64)
    for name, values in sections.items():
        data[name].update(values)
    return config_from_dict(data)


@pytest.fixture
def run_config():
    return tiny_run_config
