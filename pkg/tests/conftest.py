import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pointroute.model import ModelConfig, init_params

DATA_DIR = Path(__file__).parent.parent / "data"


@pytest.fixture(scope="session")
def berlin52_path() -> Path:
    return DATA_DIR / "berlin52.tsp"


@pytest.fixture(scope="session")
def berlin52_opt_tour_path() -> Path:
    return DATA_DIR / "berlin52.opt.tour"


@pytest.fixture(scope="session")
def tiny_config() -> ModelConfig:
    return ModelConfig(d=16, n_t=2, heads=4, H=2, d_k=8, C=10.0)


@pytest.fixture()
def tiny_store(tiny_config):
    return init_params(tiny_config, seed=1234)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
