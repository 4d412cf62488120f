"""Shared fixtures: tiny configurations, a toy split and the synthetic dataset."""

import numpy as np
import pytest

from seqrec.config.settings import get_settings
from seqrec.core.autodiff import current_tape
from seqrec.core.encoder import init_params
from seqrec.models.config import AugmentConfig, LossWeights, ModelConfig, RunConfig, TrainConfig
from seqrec.services.data_service import DataService, generate_synthetic


@pytest.fixture(autouse=True)
def clean_tape():
    current_tape().reset()
    yield
    current_tape().reset()


@pytest.fixture(autouse=True)
def quiet_progress(monkeypatch):
    monkeypatch.setenv("SEQREC_PROGRESS", "false")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def tiny_model_config():
    return ModelConfig(embed_dim=8, num_heads=2, num_blocks=2, max_len=8)


@pytest.fixture
def tiny_run_config(tiny_model_config):
    return RunConfig(
        model=tiny_model_config,
        augment=AugmentConfig(),
        train=TrainConfig(batch_size=16, max_epochs=2, patience=5),
        loss=LossWeights(lambda_=0.1),
        seed=3,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params(tiny_model_config):
    return init_params(tiny_model_config, num_items=10, rng=np.random.default_rng(7))


@pytest.fixture(scope="session")
def synthetic_interactions():
    return generate_synthetic(users=60, items=12, noise=0.1, min_length=6, max_length=10, seed=5)


@pytest.fixture
def synthetic_split(synthetic_interactions):
    return DataService().preprocess(synthetic_interactions).split
