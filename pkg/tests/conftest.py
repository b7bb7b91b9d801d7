import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ipp3d.belief import GpHyperparams
from ipp3d.groundtruth import generate_field
from ipp3d.roadmap import build_roadmap
from ipp3d.sensor import SensorConfig


@pytest.fixture(scope="session")
def small_field():
    """4x4 field used by most belief and roadmap tests."""
    return generate_field(4, 4, seed=11)


@pytest.fixture(scope="session")
def small_roadmap(small_field):
    return build_roadmap(small_field, altitudes=[8.0, 14.0], k=4, k_pe=3)


@pytest.fixture(scope="session")
def default_gp():
    return GpHyperparams()


@pytest.fixture(scope="session")
def default_sensor():
    return SensorConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
