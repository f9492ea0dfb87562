import numpy as np
import pytest
import torch
from hypothesis import settings

from app.models.episode import N_ACTIONS
from app.models.image import ImageGray
from app.models.network import Architecture
from app.services.image import save_image
from app.services.network import build_network

settings.register_profile("fast", max_examples=25, deadline=None)
settings.load_profile("fast")


class FixedActionPolicy:
    """Puts all probability on one action at every pixel."""

    def __init__(self, action: int):
        self.action = action

    def evaluate(self, states):
        states = np.asarray(states)
        probs = np.zeros((states.shape[0], N_ACTIONS) + states.shape[1:])
        probs[:, self.action] = 1.0
        return probs, np.zeros(states.shape)


class UniformPolicy:
    def evaluate(self, states):
        states = np.asarray(states)
        probs = np.full((states.shape[0], N_ACTIONS) + states.shape[1:], 1.0 / N_ACTIONS)
        return probs, np.zeros(states.shape)


def smooth_image(size: int = 48, seed: int = 0) -> ImageGray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 128 + 40 * np.sin(2 * np.pi * xx * rng.uniform(1, 2)) + 30 * np.cos(2 * np.pi * yy * rng.uniform(1, 2))
    img[size // 4:size // 2, size // 4:size // 2] += 40
    return ImageGray(np.clip(img, 0, 255))


@pytest.fixture
def tiny_net():
    return build_network(Architecture.tiny(), seed=0, dtype=torch.float64)


@pytest.fixture
def identity_policy():
    # action 13 is the zero residual
    return FixedActionPolicy(13)


@pytest.fixture
def image_dir(tmp_path):
    directory = tmp_path / "images"
    for i in range(3):
        save_image(smooth_image(48, seed=i), directory / f"img_{i}.pgm")
    return directory
