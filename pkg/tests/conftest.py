import numpy as np
import pytest

from flowmolab.model import Architecture, ToyVelocityModel
from flowmolab.rng import Rng


@pytest.fixture
def rng():
    return Rng(20240817)


@pytest.fixture
def small_model():
    arch = Architecture(in_channels=2, hidden=6, temb_width=4, cemb_width=4,
                        vocab=2)
    return ToyVelocityModel.initialize(arch, seed=7)


def random_latent(rng, shape=(4, 5, 5, 2)):
    return rng.normal(shape)
