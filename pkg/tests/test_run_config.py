import json
import math
import os

import pytest

from canonical_json import dumps
from helpers import CONFIGS, config_path, config_with, load_doc
from probkit import NormalizationError
from run_config import (
    ConfigError, ConfigReferenceError, SchemaError, config_from_dict, parse_config, resolve_seed, with_seed,
)

SHIPPED = ("two_agent.json", "h1.json", "h2.json", "h3.json", "h4.json")


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_parse(name):
    cfg = parse_config(config_path(name))
    assert cfg.source == config_path(name)
    assert len(cfg.phase_keys) == 24 or cfg.world.name == "mismatch"
    assert len(cfg.agents) == 2


@pytest.mark.parametrize("name", SHIPPED)
def test_expanded_form_is_a_fixed_point(name):
    cfg = parse_config(config_path(name))
    doc = cfg.to_dict()
    assert config_from_dict(doc).to_dict() == doc
    text = dumps(doc)
    assert dumps(config_from_dict(json.loads(text)).to_dict()) == text


def test_profile_file_and_inline_fields_merge():
    def tweak(doc):
        doc["agents"][0]["c_err"] = 0.25

    alpha = config_with("two_agent.json", tweak).agent("alpha")
    assert alpha.state.theta.r["B/first/coarse"] == 2.0
    assert alpha.state.theta.r["B/first/fine"] == 0.0
    assert set(alpha.state.q.c_err.values()) == {0.25}
    assert alpha.settings.plan_utility == {"Report": 0.2, "Align": 0.3}


def test_more_specific_patterns_win():
    def tables(doc):
        doc["agents"][0]["r"] = {"A/first/fine": 3.0, "*/*/*": 1.0, "A/*/*": 2.0}

    r = config_with("two_agent.json", tables).agent("alpha").state.theta.r
    assert r["A/first/fine"] == 3.0
    assert r["A/first/coarse"] == 2.0
    assert r["B/first/fine"] == 1.0


def test_infinite_feasibility_cap_round_trips():
    cfg = config_with("two_agent.json")
    assert math.isinf(cfg.agent("alpha").settings.feasibility_cap)
    assert '"feasibility_cap":"inf"' in dumps(cfg.to_dict())


def test_channel_row_error_carries_the_config_path():
    def broken(doc):
        world = load_doc("worlds/two_phase.json")
        world["obs_channel"][4] -= 0.1
        doc["world"] = world

    with pytest.raises(NormalizationError) as err:
        config_with("two_agent.json", broken)
    assert err.value.path == "$.world.obs_channel[1]"


@pytest.mark.parametrize("edit, error, path", [
    (lambda d: d["labeling"]["domains"].update(nope="empirical"), ConfigReferenceError, "$.labeling.domains.nope"),
    (lambda d: d["agents"][0].update(r={"A/nope/fine": 1.0}), ConfigReferenceError, "$.agents[0].r.A/nope/fine"),
    (lambda d: d["agents"][0].update(r={"A/fine": 1.0}), SchemaError, "$.agents[0].r.A/fine"),
    (lambda d: d["agents"][0].update(chi_op={"C": 1.0}), ConfigReferenceError, "$.agents[0].chi_op.C"),
    (lambda d: d["agents"][0].update(force_plan="Dance"), ConfigReferenceError, "$.agents[0].force_plan"),
    (lambda d: d["agents"][0].update(sigma=1.5), SchemaError, "$.agents[0].sigma"),
    (lambda d: d["agents"][1].update(id="alpha"), SchemaError, "$.agents[1].id"),
    (lambda d: d["engine"].update(steps=-1), SchemaError, "$.engine.steps"),
    (lambda d: d["engine"].update(align_mode="random"), SchemaError, "$.engine.align_mode"),
    (lambda d: d["engine"].update(ib={"tolerance": 0}), SchemaError, "$.engine.ib.tolerance"),
    (lambda d: d["bases"][0].update(map=[0, 1, 2]), SchemaError, "$.bases[0].map"),
    (lambda d: d.update(hypothesis={"id": "H9"}), SchemaError, "$.hypothesis.id"),
    (lambda d: d.update(hypothesis={"id": "H2", "sender": "zed"}), ConfigReferenceError, "$.hypothesis.sender"),
    (lambda d: d.update(rd={"source": "C"}), ConfigReferenceError, "$.rd.source"),
])
def test_config_errors_name_their_path(edit, error, path):
    with pytest.raises(error) as err:
        config_with("two_agent.json", edit)
    assert err.value.path == path
    assert isinstance(err.value, ConfigError)


def test_missing_world_file():
    with pytest.raises(OSError):
        config_with("two_agent.json", lambda d: d.update(world="worlds/missing.json"))


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"name": ', encoding="utf-8")
    with pytest.raises(SchemaError):
        parse_config(str(path))


def test_absolute_references_from_another_directory(tmp_path):
    doc = load_doc("two_agent.json")
    doc["world"] = os.path.join(CONFIGS, "worlds", "two_phase.json")
    doc["agents"] = [{"id": "solo", "profile": os.path.join(CONFIGS, "agents", "explorer.json")}]
    path = tmp_path / "elsewhere.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    cfg = parse_config(str(path))
    assert cfg.agent("solo").settings.obs_cost == 0.1


def test_seed_precedence():
    assert resolve_seed(7) == 7
    assert resolve_seed(7, env="11") == 11
    assert resolve_seed(7, flag=3, env="11") == 3
    assert resolve_seed(7, env="") == 7
    with pytest.raises(ConfigError):
        resolve_seed(7, env="seven")
    assert with_seed(config_with("two_agent.json"), 99).seed == 99
