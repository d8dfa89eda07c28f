from pathlib import Path

import numpy as np
import pytest

from utils.policy import PpoConfig, train
from utils.simcore import SimConfig
from utils.terrain import DEFAULT_CLASSES, QUADRANT_CLASSES, Region, TerrainClass, WorldSpec, generate_world

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"

SLICK = TerrainClass(20, "slick", (0.5, 0.5), (0.1, 0.1), ((184, 200, 208), (160, 180, 192), (216, 228, 234)), 1.5)
GRIPPY = TerrainClass(21, "grippy", (2.5, 2.5), (0.3, 0.3), ((106, 90, 60), (84, 72, 46), (138, 122, 86)), 9.0)


def two_class_spec(size_cells=32, seed=3):
    half = size_cells * 0.25 / 2
    full = size_cells * 0.25
    regions = (Region.rect(SLICK, 0, 0, half, full), Region.rect(GRIPPY, half, 0, full, full))
    return WorldSpec("two_class", size_cells, size_cells, regions, 0.25, seed)


def quadrant_spec(size_cells=48, seed=7):
    h = size_cells * 0.25 / 2
    f = size_cells * 0.25
    q = QUADRANT_CLASSES
    regions = (Region.rect(q["ice"], 0, 0, h, h), Region.rect(q["quad_gravel"], h, 0, f, h),
               Region.rect(q["brick"], 0, h, h, f), Region.rect(q["meadow"], h, h, f, f))
    return WorldSpec("quadrants", size_cells, size_cells, regions, 0.25, seed)


def default_class_spec(size_cells=48, seed=5):
    h = size_cells * 0.25 / 2
    f = size_cells * 0.25
    c = DEFAULT_CLASSES
    regions = (Region.rect(c["grass"], 0, 0, h, h), Region.rect(c["pavement"], h, 0, f, h),
               Region.rect(c["dirt"], 0, h, h, f), Region.rect(c["gravel"], h, h, f, f))
    return WorldSpec("mixed", size_cells, size_cells, regions, 0.25, seed)


@pytest.fixture(scope="session")
def two_class_grid():
    return generate_world(two_class_spec())


@pytest.fixture(scope="session")
def quadrant_grid():
    return generate_world(quadrant_spec())


@pytest.fixture(scope="session")
def mixed_grid():
    return generate_world(default_class_spec())


@pytest.fixture(scope="session")
def tiny_ppo():
    return PpoConfig(num_envs=8, iterations=2, policy_hidden=(16, 16), value_hidden=(16, 16),
                     estimator_hidden=(16, 16), log_every=1)


@pytest.fixture(scope="session")
def tiny_checkpoint(two_class_grid, tiny_ppo):
    ckpt, _ = train("active-se", [two_class_grid], tiny_ppo, sim=SimConfig(), seed=0)
    return ckpt


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
