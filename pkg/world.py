"""
world.py

Synthetic discrete worlds: named latent variables with an exact joint,
estimation targets as deterministic functions of the latents, and an
observation channel from the latent tuple to an observation alphabet.

World description (JSON):
  {"name": "two_phase",
   "latents": [{"name": "a", "size": 2}, ...],
   "joint": [...],                    # flat, row-major over the latent tuple
   "targets": [{"name": "A", "table": [...]}, ...],
   "obs_size": 4,
   "obs_channel": [...]}              # flat, one row of obs_size per latent state

Usage examples:
  w = load_world("configs/worlds/two_phase.json")
  seq = sample_observations(w, 100, seed=7)
  posterior_target(w, "A", seq.symbols[0])
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from probkit import Dist, JointDist, NormalizationError, mutual_information

logger = logging.getLogger(__name__)


class WorldSpecError(ValueError):
    """World description does not match the schema."""

    def __init__(self, message, path="$"):
        self.path = path
        super().__init__(f"{path}: {message}")


class ZeroProbabilityObservationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class World:
    name: str
    latent_names: tuple
    latent_sizes: tuple
    joint: Dist                  # over the flattened latent product
    targets: dict                # target name -> target value per latent state
    target_sizes: dict
    obs_channel: np.ndarray      # latent states x observations
    obs_size: int
    obs_marginal: Dist
    target_joints: dict          # target name -> p(O, Y) as observations x target values
    spec: dict

    @property
    def target_names(self):
        return tuple(self.targets)

    @property
    def n_states(self):
        return self.joint.probs.size

    def target_joint(self, target):
        return JointDist(self._joint_table(target), "O", target)

    def prior(self, target):
        return Dist(self._joint_table(target).sum(axis=0))

    def posterior_table(self, target):
        """p(Y|o) for every observation; zero-probability observations get the prior."""
        table = self._joint_table(target)
        p_o = table.sum(axis=1)
        post = np.tile(table.sum(axis=0), (self.obs_size, 1))
        live = p_o > 0
        post[live] = table[live] / p_o[live, None]
        return post

    def information(self, target):
        """I(Y;O) in nats."""
        return mutual_information(self._joint_table(target))

    def _joint_table(self, target):
        try:
            return self.target_joints[target]
        except KeyError:
            raise ValueError(f"unknown target '{target}' in world '{self.name}'") from None


@dataclass(frozen=True)
class ObservationSequence:
    symbols: tuple
    seed: int
    world_id: str

    def __len__(self):
        return len(self.symbols)


## -------------------------------------------------------------- ##
## Building worlds from their JSON description ##

def _int(value, path, minimum=0):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise WorldSpecError("expected an integer", path)
    if isinstance(value, float) and not value.is_integer():
        raise WorldSpecError(f"expected an integer, got {value}", path)
    if value < minimum:
        raise WorldSpecError(f"must be >= {minimum}", path)
    return int(value)


def _number_list(value, length, path):
    if not isinstance(value, list):
        raise WorldSpecError("expected an array", path)
    if len(value) != length:
        raise WorldSpecError(f"expected {length} entries, got {len(value)}", path)
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise WorldSpecError("expected a number", f"{path}[{i}]")
    return value


def build_world(spec, path="$"):
    """Validate a world description and precompute every induced joint."""
    if not isinstance(spec, dict):
        raise WorldSpecError("expected an object", path)

    latents = spec.get("latents")
    if not isinstance(latents, list) or not latents:
        raise WorldSpecError("needs a non-empty 'latents' array", f"{path}.latents")
    names, sizes = [], []
    for i, lat in enumerate(latents):
        where = f"{path}.latents[{i}]"
        if not isinstance(lat, dict) or not isinstance(lat.get("name"), str) or not lat["name"]:
            raise WorldSpecError("latent needs a string 'name'", where)
        if lat["name"] in names:
            raise WorldSpecError(f"duplicate latent '{lat['name']}'", f"{where}.name")
        names.append(lat["name"])
        sizes.append(_int(lat.get("size"), f"{where}.size", minimum=1))
    n_states = math.prod(sizes)

    joint = Dist.normalized(_number_list(spec.get("joint"), n_states, f"{path}.joint"), f"{path}.joint")

    obs_size = _int(spec.get("obs_size"), f"{path}.obs_size", minimum=1)
    flat = _number_list(spec.get("obs_channel"), n_states * obs_size, f"{path}.obs_channel")
    rows = [Dist.normalized(flat[i * obs_size:(i + 1) * obs_size], f"{path}.obs_channel[{i}]").probs
            for i in range(n_states)]
    channel = np.array(rows)

    target_list = spec.get("targets")
    if not isinstance(target_list, list) or not target_list:
        raise WorldSpecError("needs a non-empty 'targets' array", f"{path}.targets")
    targets, target_sizes = {}, {}
    for i, tgt in enumerate(target_list):
        where = f"{path}.targets[{i}]"
        if not isinstance(tgt, dict) or not isinstance(tgt.get("name"), str) or not tgt["name"]:
            raise WorldSpecError("target needs a string 'name'", where)
        if tgt["name"] in targets:
            raise WorldSpecError(f"duplicate target '{tgt['name']}'", f"{where}.name")
        table = _number_list(tgt.get("table"), n_states, f"{where}.table")
        values = np.array([_int(v, f"{where}.table[{k}]") for k, v in enumerate(table)], dtype=int)
        size = values.max() + 1
        if "size" in tgt:
            size = _int(tgt["size"], f"{where}.size", minimum=1)
            if values.max() >= size:
                raise WorldSpecError(f"table value {values.max()} outside size {size}", f"{where}.table")
        values.setflags(write=False)
        targets[tgt["name"]] = values
        target_sizes[tgt["name"]] = int(size)

    state_obs = JointDist(joint.probs[:, None] * channel, "Z", "O").probs
    p_o = state_obs.sum(axis=0)
    obs_marginal = Dist(p_o / p_o.sum())
    target_joints = {}
    for name, values in targets.items():
        onehot = np.eye(target_sizes[name])[values]
        table = state_obs.T @ onehot
        table.setflags(write=False)
        target_joints[name] = table

    channel.setflags(write=False)
    world = World(
        name=str(spec.get("name", "world")),
        latent_names=tuple(names),
        latent_sizes=tuple(sizes),
        joint=joint,
        targets=targets,
        target_sizes=target_sizes,
        obs_channel=channel,
        obs_size=obs_size,
        obs_marginal=obs_marginal,
        target_joints=target_joints,
        spec=spec,
    )
    logger.debug("[world] built '%s': %d latent states, %d observations, targets %s",
                 world.name, n_states, obs_size, list(targets))
    return world


def load_world(path):
    with open(path, "r", encoding="utf-8") as f:
        return build_world(json.load(f))


## -------------------------------------------------------------- ##
## Sampling and posteriors ##

def _cdf(w):
    p = w.obs_marginal.probs
    cdf = np.cumsum(p)
    last = int(np.flatnonzero(p > 0)[-1])
    cdf[last:] = 1.0
    return cdf


def draw_observations(w, rng, n=1):
    """Inverse-CDF draws from the observation marginal with a numpy Generator."""
    u = rng.random(n)
    return [int(i) for i in np.searchsorted(_cdf(w), u, side="right")]


def sample_observations(w, n, seed):
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    return ObservationSequence(tuple(draw_observations(w, rng, n)), seed, w.name)


def posterior_target(w, target, o):
    """Exact p(Y|o) by summing the joint over latent states."""
    table = w._joint_table(target)
    if not 0 <= o < w.obs_size:
        raise ValueError(f"observation {o} outside alphabet of size {w.obs_size}")
    row = table[o]
    if row.sum() <= 0:
        raise ZeroProbabilityObservationError(f"observation {o} has zero probability in '{w.name}'")
    return Dist(row / row.sum())


__all__ = [
    "World", "ObservationSequence", "WorldSpecError", "ZeroProbabilityObservationError",
    "NormalizationError", "build_world", "load_world", "sample_observations",
    "draw_observations", "posterior_target",
]
