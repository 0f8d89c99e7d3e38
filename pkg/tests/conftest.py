import numpy as np
import pytest

from services.harness import ExperimentConfig
from services.pilot import build_measurement_model, generate_pilots


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return ExperimentConfig(
        n=32,
        k=2,
        training_length=100,
        bit_depth_grid=[2, 3],
        snr_grid_db=[0.0, 10.0],
        trials=3,
        rip_samples=50,
    )


@pytest.fixture
def siso_model():
    pilots = generate_pilots(1, 128, 32, seed=7)
    return build_measurement_model(pilots, nt=1, nr=1, n=32)
