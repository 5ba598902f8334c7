import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from probkit import NormalizationError
from world import (
    WorldSpecError, ZeroProbabilityObservationError, build_world, draw_observations, load_world, posterior_target,
    sample_observations,
)
from helpers import config_path, load_doc


def _tiny_spec(**overrides):
    spec = {
        "name": "tiny",
        "latents": [{"name": "z", "size": 2}],
        "joint": [0.5, 0.5],
        "targets": [{"name": "Y", "table": [0, 1]}],
        "obs_size": 3,
        "obs_channel": [0.8, 0.2, 0.0,
                        0.2, 0.8, 0.0],
    }
    spec.update(overrides)
    return spec


def test_shipped_world_loads(world):
    assert world.name == "two_phase"
    assert world.target_names == ("A", "B", "parity")
    assert_allclose(world.obs_marginal.probs, [0.25] * 4, atol=1e-15)
    for target in world.target_names:
        assert abs(world.target_joint(target).probs.sum() - 1.0) <= 1e-12


def test_shipped_posteriors(world):
    assert_allclose(posterior_target(world, "A", 0).probs, [0.9, 0.1], atol=1e-12)
    assert_allclose(posterior_target(world, "B", 3).probs, [0.1, 0.9], atol=1e-12)
    assert_allclose(posterior_target(world, "parity", 0).probs, [0.82, 0.18], atol=1e-12)


def test_information_about_each_target(world):
    expected = math.log(2) + 0.9 * math.log(0.9) + 0.1 * math.log(0.1)
    assert world.information("A") == pytest.approx(expected, abs=1e-12)
    assert world.information("B") == pytest.approx(expected, abs=1e-12)


def test_posterior_sums_to_one_everywhere(world):
    for target in world.target_names:
        for o in range(world.obs_size):
            assert abs(posterior_target(world, target, o).probs.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("name", ["worlds/two_phase.json", "worlds/mismatch.json"])
def test_posteriors_average_back_to_the_prior(name):
    w = load_world(config_path(name))
    p_o = w.obs_marginal.probs
    for target in w.target_names:
        mixed = sum(p_o[o] * posterior_target(w, target, o).probs for o in range(w.obs_size))
        assert_allclose(mixed, w.prior(target).probs, rtol=0, atol=1e-12)


def test_zero_probability_observation():
    w = build_world(_tiny_spec())
    with pytest.raises(ZeroProbabilityObservationError):
        posterior_target(w, "Y", 2)
    assert_allclose(w.posterior_table("Y")[2], [0.5, 0.5])


def test_sampling_never_emits_impossible_observations():
    w = build_world(_tiny_spec())
    seq = sample_observations(w, 2000, seed=3)
    assert 2 not in seq.symbols
    assert len(seq) == 2000
    assert seq.world_id == "tiny"


def test_sampling_is_seeded(world):
    assert sample_observations(world, 50, 4).symbols == sample_observations(world, 50, 4).symbols
    assert sample_observations(world, 50, 4).symbols != sample_observations(world, 50, 5).symbols


def test_empirical_frequencies(world):
    rng = np.random.default_rng(0)
    draws = draw_observations(world, rng, 20000)
    freq = np.bincount(draws, minlength=4) / 20000
    assert_allclose(freq, world.obs_marginal.probs, atol=0.02)


def test_channel_row_off_by_a_tenth_names_the_row():
    spec = _tiny_spec(obs_channel=[0.8, 0.2, 0.0, 0.2, 0.7, 0.0])
    with pytest.raises(NormalizationError) as err:
        build_world(spec)
    assert err.value.path == "$.obs_channel[1]"


def test_schema_errors_carry_paths():
    with pytest.raises(WorldSpecError) as err:
        build_world(_tiny_spec(latents=[]))
    assert err.value.path == "$.latents"
    with pytest.raises(WorldSpecError) as err:
        build_world(_tiny_spec(targets=[{"name": "Y", "table": [0, 1.5]}]))
    assert err.value.path == "$.targets[0].table[1]"
    with pytest.raises(WorldSpecError):
        build_world(_tiny_spec(joint=[0.5, 0.25, 0.25]))


def test_shipped_world_document_round_trips(world):
    again = build_world(load_doc("worlds/two_phase.json"))
    for target in world.target_names:
        assert np.array_equal(again.target_joints[target], world.target_joints[target])
