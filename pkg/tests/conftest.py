import numpy as np
import pytest

from failgen.config import RunConfig, config_from_dict


@pytest.fixture(scope="session")
def cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def world(cfg):
    return cfg.world


@pytest.fixture(scope="session")
def boosted_cfg() -> RunConfig:
    """Desk-scale config: noise boosted so failures appear at 1e-3..1e-2."""
    return config_from_dict({"world": {"noise_scale": 0.006}})


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    """Very small model/loop for fast end-to-end tests."""
    return config_from_dict({
        "world": {"noise_scale": 0.006},
        "diffusion": {"steps_k": 20, "base_width": 8},
        "trainer": {"batch_n": 32, "max_stages": 3, "epochs_per_stage": 5},
        "cem": {"batch_n": 32, "max_stages": 3},
    })


def assert_allclose(a, b, **kw):
    np.testing.assert_allclose(a, b, **kw)
