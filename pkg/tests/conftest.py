import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from boolkernel.datasets import make_data
from boolkernel.models import TransformerDescriptor, build_teacher
from boolkernel.training import train_teacher

settings.register_profile("default", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DESK_SEED = 0
DESK_CHARS = 10_000
DESK_TEACHER_EPOCHS = 4


@pytest.fixture(scope="session")
def char_data():
    return make_data("char_lm", DESK_SEED, DESK_CHARS)


@pytest.fixture(scope="session")
def desk_teacher(char_data):
    """Tiny transformer trained once per session on the embedded corpus."""
    model = build_teacher(TransformerDescriptor(), DESK_SEED)
    train_teacher(model, char_data, DESK_TEACHER_EPOCHS, lr=3e-3, batch_size=8, seed=DESK_SEED)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
