import numpy as np
import pytest

from leapts.model import LeapTS, ModelConfig


def toy_config(**kw) -> ModelConfig:
    base = dict(
        look_back=24,
        horizon=8,
        n_variates=2,
        hidden_dim=8,
        summary_dim=4,
        control_dim=4,
        enc_hidden=(16,),
        field_hidden=8,
        seed=3,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def toy_model() -> LeapTS:
    return LeapTS(toy_config())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
