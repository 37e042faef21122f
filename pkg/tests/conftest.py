import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_gen import (  # noqa: E402
    make_hop,
    make_pace,
    make_sidestep,
    make_trot,
    mini_robot,
)


@pytest.fixture(scope="session")
def mini():
    return mini_robot()


@pytest.fixture(scope="session")
def bigger():
    return mini_robot(name="bigger", scale=1.13, mass=17.3)


@pytest.fixture(scope="session")
def trot(mini):
    return make_trot(mini, cycles=2)


@pytest.fixture(scope="session")
def hop(mini):
    return make_hop(mini)


@pytest.fixture(scope="session")
def pace(mini):
    return make_pace(mini)


@pytest.fixture(scope="session")
def sidestep(mini):
    return make_sidestep(mini)
