import copy
import json
import os

import pytest

from candidate import ConditioningBasis, Resolution
from run_config import config_from_dict

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(REPO, "configs")
GOLDENS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "goldens")

BASES = (
    ConditioningBasis("identity", (0, 1, 2, 3)),
    ConditioningBasis("first", (0, 0, 1, 1)),
    ConditioningBasis("second", (0, 1, 0, 1)),
    ConditioningBasis("parity", (0, 1, 1, 0)),
)
RESOLUTIONS = (
    Resolution("fine", 4, 50.0, "fine"),
    Resolution("coarse", 2, 50.0, "coarse"),
)
LABELING = {
    "domains": {"identity": "empirical", "first": "structural", "second": "existential", "parity": "ideational"},
    "directions": {"fine": "stabilizing", "coarse": "explorative"},
}


def config_path(name):
    return os.path.join(CONFIGS, name)


def load_doc(name):
    with open(config_path(name), "r", encoding="utf-8") as f:
        return json.load(f)


def config_with(name, edit=None):
    """Shipped config, optionally edited as a dict before validation."""
    doc = copy.deepcopy(load_doc(name))
    if edit is not None:
        edit(doc)
    return config_from_dict(doc, CONFIGS)


def _golden_path(name):
    path = os.path.join(GOLDENS, name)
    if not os.path.exists(path) and os.environ.get("UPDATE_GOLDENS") != "1":
        pytest.fail(f"golden {name} is missing; run the tests once with UPDATE_GOLDENS=1 to freeze it")
    return path


def check_golden(name, text):
    """Compare against tests/goldens/<name>; UPDATE_GOLDENS=1 rewrites it instead."""
    path = _golden_path(name)
    if os.environ.get("UPDATE_GOLDENS") == "1":
        os.makedirs(GOLDENS, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        return
    with open(path, "r", encoding="utf-8", newline="") as f:
        assert f.read() == text


def load_golden(name):
    with open(_golden_path(name), "r", encoding="utf-8") as f:
        return json.load(f)

