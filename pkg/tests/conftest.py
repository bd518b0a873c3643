import numpy as np
import pytest

from prostasim.config import default_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(seed=777, mode="both", replicates=2):
    """A 2-phantom, 4-target config that runs in well under a second."""
    cfg = default_config()
    cfg.seed = seed
    cfg.n_phantoms = 2
    cfg.targets_per_phantom = 4
    cfg.n_seed_replicates = replicates
    cfg.mode = mode
    cfg.zone_quotas = {
        "apex": 4,
        "base": 4,
        "left": 3,
        "center": 2,
        "right": 3,
        "anterior": 4,
        "posterior": 4,
    }
    return cfg
