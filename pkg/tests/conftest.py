import numpy as np
import pytest

from trailnet.scenegen import TrailWorld, WorldParams, generate_world


def straight_world(seed: int = 1000, y: float = 200.0) -> TrailWorld:
    """A single straight east-west trail through the middle, no rocks or branches."""
    xs = np.arange(20.0, 381.0, 5.0)
    control = np.column_stack([xs, np.full_like(xs, y)])
    params = WorldParams(branches=0, obstacles=0)
    return TrailWorld(seed, params, control, [], np.zeros((0, 4)))


@pytest.fixture(scope="session")
def world42():
    return generate_world(42)


@pytest.fixture(scope="session")
def flat_world():
    return straight_world()
