import pytest

from candidate import enumerate_candidate_space
from helpers import BASES, RESOLUTIONS, config_path
from world import load_world


@pytest.fixture(scope="session")
def world():
    return load_world(config_path("worlds/two_phase.json"))


@pytest.fixture(scope="session")
def candidate_cache():
    return {}


@pytest.fixture(scope="session")
def space(world, candidate_cache):
    return enumerate_candidate_space(world, BASES, world.target_names, RESOLUTIONS, cache=candidate_cache)
