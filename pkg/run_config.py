"""
run_config.py

Run configuration: one JSON file naming the world, the basis / resolution /
label registries, engine settings, agents and an optional hypothesis.

  {"name": "two_agent", "seed": 7,
   "world": "worlds/two_phase.json",                 # or an inline world object
   "bases": [{"id": "identity", "map": [0, 1, 2, 3]}, ...],
   "resolutions": [{"id": "fine", "cardinality": 4, "beta": 50, "horizon": "fine"}, ...],
   "labeling": {"domains": {"identity": "empirical", ...}, "directions": {...}},
   "engine": {"steps": 50, "epsilon": 0.05, "delta": 0.01, "align_mode": "exhaustive",
              "exhaustive_cap": 6, "ib": {"tolerance": 1e-9, "max_iters": 10000, "restarts": 1}},
   "agents": [{"id": "alpha", "profile": "profiles/te_dominant.json", "c_err": 0.5}, ...],
   "hypothesis": {"id": "H1", "threshold": 0.5},
   "rd": {"source": "observations", "distortion": "hamming"}}

Profile tables (r, e, s, c_err, eta, sigma) are a scalar for every phase point
or an object keyed "target/basis/resolution"; a "*" segment matches every
value, more specific keys win, missing keys take the default. Relative paths
resolve against the directory of the file that names them.

Usage examples:
  cfg = parse_config("configs/two_agent.json")
  cfg = with_seed(cfg, resolve_seed(cfg.seed, args.seed, os.environ.get("MIM_SEED")))
  canonical_json.dumps(cfg.to_dict())
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

from agent import (
    PLAN_KINDS, Agent, AgentSettings, Firing, Formation, OperatingProfile, PlanCosts,
    PlanWeights, Plasticity, ProfileState, ScoreWeights, COST_FIELDS, DEFAULT_KAPPA,
)
from align import ALIGN_MODES, DEFAULT_DELTA, EXHAUSTIVE_CAP
from candidate import DEFAULT_EPSILON, DIRECTIONS, DOMAINS, HORIZONS, ConditioningBasis, Labeling, Resolution, phase_key
from probkit import IBOptions, NormalizationError
from world import WorldSpecError, build_world

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
SEED_ENV = "MIM_SEED"
HYPOTHESES = ("H1", "H2", "H3", "H4")
TABLE_DEFAULTS = {"r": 0.0, "e": 0.0, "s": 0.0, "c_err": 1.0, "eta": 0.5, "sigma": 0.0}
# --------------------------------


class ConfigError(ValueError):
    """Config problem located by a JSON path."""

    def __init__(self, message, path="$"):
        self.path = path
        super().__init__(f"{path}: {message}")


class SchemaError(ConfigError):
    pass


class ConfigReferenceError(ConfigError):
    pass


CONFIG_ERRORS = (ConfigError, NormalizationError, WorldSpecError)


@dataclass(frozen=True)
class EngineSettings:
    steps: int = 0
    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_DELTA
    align_mode: str = "exhaustive"
    exhaustive_cap: int = EXHAUSTIVE_CAP
    ib: IBOptions = field(default_factory=IBOptions)

    def to_dict(self):
        return {"steps": self.steps, "epsilon": self.epsilon, "delta": self.delta,
                "align_mode": self.align_mode, "exhaustive_cap": self.exhaustive_cap,
                "ib": self.ib.to_dict()}


@dataclass(frozen=True, eq=False)
class RunConfig:
    name: str
    seed: int
    world: object                 # world.World
    bases: tuple
    resolutions: tuple
    labeling: Labeling
    engine: EngineSettings
    agents: tuple                 # agent.Agent, in file order
    hypothesis: dict = None
    rd: dict = None
    source: str = None

    @property
    def phase_keys(self):
        return [phase_key(t, b.id, r.id) for t in self.world.target_names
                for b in self.bases for r in self.resolutions]

    def agent(self, agent_id):
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise ConfigReferenceError(f"no agent '{agent_id}'", "$.agents")

    def to_dict(self):
        """Fully expanded form; parsing it again gives the same dict."""
        doc = {
            "name": self.name,
            "seed": self.seed,
            "world": self.world.spec,
            "bases": [{"id": b.id, "map": list(b.map)} for b in self.bases],
            "resolutions": [{"id": r.id, "cardinality": r.cardinality, "beta": r.beta,
                             "horizon": r.horizon_tag} for r in self.resolutions],
            "labeling": self.labeling.to_dict(),
            "engine": self.engine.to_dict(),
            "agents": [_agent_to_dict(a) for a in self.agents],
        }
        if self.hypothesis is not None:
            doc["hypothesis"] = dict(self.hypothesis)
        if self.rd is not None:
            doc["rd"] = dict(self.rd)
        return doc


## -------------------------------------------------------------- ##
## Scalar readers ##

def _number(value, path, minimum=None, allow_inf=False):
    if allow_inf and value in ("inf", "Infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("expected a number", path)
    value = float(value)
    if not math.isfinite(value) and not allow_inf:
        raise SchemaError("expected a finite number", path)
    if minimum is not None and value < minimum:
        raise SchemaError(f"must be >= {minimum}", path)
    return value


def _integer(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
        raise SchemaError("expected an integer", path)
    value = int(value)
    if minimum is not None and value < minimum:
        raise SchemaError(f"must be >= {minimum}", path)
    return value


def _string(value, path):
    if not isinstance(value, str) or not value:
        raise SchemaError("expected a non-empty string", path)
    return value


def _object(value, path):
    if not isinstance(value, dict):
        raise SchemaError("expected an object", path)
    return value


def _array(value, path, non_empty=True):
    if not isinstance(value, list) or (non_empty and not value):
        raise SchemaError("expected a non-empty array" if non_empty else "expected an array", path)
    return value


def _read_json(path, where):
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON in {path}: {e}", where) from e


## -------------------------------------------------------------- ##
## Registries ##

def _bases(doc, obs_size):
    out = []
    for i, item in enumerate(_array(doc, "$.bases")):
        where = f"$.bases[{i}]"
        _object(item, where)
        bid = _string(item.get("id"), f"{where}.id")
        if any(b.id == bid for b in out):
            raise SchemaError(f"duplicate basis '{bid}'", f"{where}.id")
        mapping = [_integer(v, f"{where}.map[{k}]", 0) for k, v in enumerate(_array(item.get("map"), f"{where}.map"))]
        basis = ConditioningBasis(bid, tuple(mapping))
        try:
            basis.check(obs_size)
        except ValueError as e:
            raise SchemaError(str(e), f"{where}.map") from None
        out.append(basis)
    return tuple(out)


def _resolutions(doc):
    out = []
    for i, item in enumerate(_array(doc, "$.resolutions")):
        where = f"$.resolutions[{i}]"
        _object(item, where)
        rid = _string(item.get("id"), f"{where}.id")
        if any(r.id == rid for r in out):
            raise SchemaError(f"duplicate resolution '{rid}'", f"{where}.id")
        horizon = item.get("horizon", "fine")
        if horizon not in HORIZONS:
            raise SchemaError(f"horizon must be one of {list(HORIZONS)}", f"{where}.horizon")
        out.append(Resolution(
            rid,
            _integer(item.get("cardinality"), f"{where}.cardinality", 1),
            _number(item.get("beta"), f"{where}.beta", 0.0),
            horizon,
        ))
    return tuple(out)


def _labeling(doc, bases):
    if doc is None:
        raise SchemaError("missing labeling", "$.labeling")
    _object(doc, "$.labeling")
    domains = _object(doc.get("domains", {}), "$.labeling.domains")
    ids = {b.id for b in bases}
    for bid, domain in domains.items():
        if bid not in ids:
            raise ConfigReferenceError(f"unknown basis '{bid}'", f"$.labeling.domains.{bid}")
        if domain not in DOMAINS:
            raise SchemaError(f"domain must be one of {list(DOMAINS)}", f"$.labeling.domains.{bid}")
    for bid in sorted(ids - set(domains)):
        logger.warning("[config] basis '%s' has no domain label", bid)
    directions = _object(doc.get("directions", {}), "$.labeling.directions")
    for tag, direction in directions.items():
        if tag not in HORIZONS or direction not in DIRECTIONS:
            raise SchemaError(f"direction entry {tag}: {direction} not allowed", f"$.labeling.directions.{tag}")
    return Labeling.from_dict({"domains": domains, "directions": directions})


def _engine(doc):
    doc = _object(doc if doc is not None else {}, "$.engine")
    ib = _object(doc.get("ib", {}), "$.engine.ib")
    defaults = IBOptions()
    mode = doc.get("align_mode", "exhaustive")
    if mode not in ALIGN_MODES:
        raise SchemaError(f"align_mode must be one of {list(ALIGN_MODES)}", "$.engine.align_mode")
    if _number(ib.get("tolerance", defaults.tolerance), "$.engine.ib.tolerance") <= 0:
        raise SchemaError("must be positive", "$.engine.ib.tolerance")
    return EngineSettings(
        steps=_integer(doc.get("steps", 0), "$.engine.steps", 0),
        epsilon=_number(doc.get("epsilon", DEFAULT_EPSILON), "$.engine.epsilon", 0.0),
        delta=_number(doc.get("delta", DEFAULT_DELTA), "$.engine.delta", 0.0),
        align_mode=mode,
        exhaustive_cap=_integer(doc.get("exhaustive_cap", EXHAUSTIVE_CAP), "$.engine.exhaustive_cap", 1),
        ib=IBOptions(
            tolerance=_number(ib.get("tolerance", defaults.tolerance), "$.engine.ib.tolerance", 0.0),
            max_iters=_integer(ib.get("max_iters", defaults.max_iters), "$.engine.ib.max_iters", 1),
            restarts=_integer(ib.get("restarts", defaults.restarts), "$.engine.ib.restarts", 1),
        ),
    )


## -------------------------------------------------------------- ##
## Agents ##

def _phase_table(value, name, keys, targets, bases, resolutions, where, minimum=None):
    """Scalar or pattern-keyed object -> full table over keys."""
    default = TABLE_DEFAULTS[name]
    if value is None:
        return {k: default for k in keys}
    if not isinstance(value, dict):
        v = _number(value, where, minimum)
        return {k: v for k in keys}

    registries = (set(targets), {b.id for b in bases}, {r.id for r in resolutions})
    kinds = ("target", "basis", "resolution")
    patterns = []
    for pattern, raw in value.items():
        parts = pattern.split("/")
        if len(parts) != 3:
            raise SchemaError("keys look like 'target/basis/resolution'", f"{where}.{pattern}")
        for part, known, kind in zip(parts, registries, kinds):
            if part != "*" and part not in known:
                raise ConfigReferenceError(f"unknown {kind} '{part}'", f"{where}.{pattern}")
        patterns.append((-parts.count("*"), pattern, parts, _number(raw, f"{where}.{pattern}", minimum)))

    table = {k: default for k in keys}
    for _, _, parts, v in sorted(patterns):
        for k in keys:
            if all(p in ("*", s) for p, s in zip(parts, k.split("/"))):
                table[k] = v
    return table


def _weights(cls, doc, where):
    doc = _object(doc if doc is not None else {}, where)
    names = cls.__dataclass_fields__
    for k in doc:
        if k not in names:
            raise SchemaError(f"unknown field '{k}'", f"{where}.{k}")
    return cls(**{k: _number(v, f"{where}.{k}") for k, v in doc.items()})


def _per_kind(doc, where, parse):
    doc = _object(doc if doc is not None else {}, where)
    out = {}
    for kind, v in doc.items():
        if kind not in PLAN_KINDS:
            raise ConfigReferenceError(f"unknown plan kind '{kind}'", f"{where}.{kind}")
        out[kind] = parse(v, f"{where}.{kind}")
    return out


def _costs(v, where):
    _object(v, where)
    for k in v:
        if k not in COST_FIELDS:
            raise SchemaError(f"unknown cost field '{k}'", f"{where}.{k}")
    return PlanCosts(**{k: _number(x, f"{where}.{k}", 0.0) for k, x in v.items()})


def _agent(item, i, base_dir, keys, targets, bases, resolutions, engine):
    where = f"$.agents[{i}]"
    _object(item, where)
    doc = {}
    if "profile" in item:
        ref = _string(item["profile"], f"{where}.profile")
        profile = _object(_read_json(os.path.join(base_dir, ref), f"{where}.profile"), f"{where}.profile")
        doc.update(profile)
    doc.update({k: v for k, v in item.items() if k != "profile"})
    aid = _string(doc.get("id"), f"{where}.id")

    tables = {name: _phase_table(doc.get(name), name, keys, targets, bases, resolutions, f"{where}.{name}",
                                 None if name == "r" else 0.0)
              for name in TABLE_DEFAULTS}
    if any(v > 1.0 for v in tables["sigma"].values()):
        raise SchemaError("sigma must lie in [0, 1]", f"{where}.sigma")

    chi = doc.get("chi_op")
    if chi is None:
        chi = {t: 1.0 for t in targets}
    _object(chi, f"{where}.chi_op")
    for t, v in chi.items():
        if t not in targets:
            raise ConfigReferenceError(f"unknown target '{t}'", f"{where}.chi_op.{t}")
    chi = {t: _number(v, f"{where}.chi_op.{t}", 0.0) for t, v in chi.items()}

    plasticity = _object(doc.get("plasticity", {}), f"{where}.plasticity")
    try:
        lam = Plasticity(**{k: _number(v, f"{where}.plasticity.{k}") for k, v in plasticity.items()})
    except (TypeError, ValueError) as e:
        raise SchemaError(str(e), f"{where}.plasticity") from None

    force = doc.get("force_plan")
    if force is not None and force not in PLAN_KINDS:
        raise ConfigReferenceError(f"unknown plan kind '{force}'", f"{where}.force_plan")

    state = ProfileState(
        theta=OperatingProfile(tables["r"], tables["e"], tables["s"]),
        lam=lam,
        q=Firing(tables["c_err"], tables["eta"]),
        zeta=Formation(chi, engine.ib, _integer(doc.get("kappa", DEFAULT_KAPPA), f"{where}.kappa", 1)),
        sigma=tables["sigma"],
    )
    settings = AgentSettings(
        score=_weights(ScoreWeights, doc.get("score_weights"), f"{where}.score_weights"),
        plan=_weights(PlanWeights, doc.get("plan_weights"), f"{where}.plan_weights"),
        foreground_temperature=_number(doc.get("foreground_temperature", 1.0), f"{where}.foreground_temperature", 0.0),
        plan_temperature=_number(doc.get("plan_temperature", 1.0), f"{where}.plan_temperature", 0.0),
        queue_capacity=_integer(doc.get("queue_capacity", 3), f"{where}.queue_capacity", 0),
        feasibility_cap=_number(doc.get("feasibility_cap", math.inf), f"{where}.feasibility_cap", 0.0, allow_inf=True),
        plan_costs=_per_kind(doc.get("plan_costs"), f"{where}.plan_costs", _costs),
        plan_utility=_per_kind(doc.get("plan_utility"), f"{where}.plan_utility", _number),
        utility_feedback=_per_kind(doc.get("utility_feedback"), f"{where}.utility_feedback", _number),
        sensitization_threshold=_number(doc.get("sensitization_threshold", 1.0), f"{where}.sensitization_threshold", 0.0),
        adapt_eta=bool(doc.get("adapt_eta", False)),
        obs_cost=_number(doc.get("obs_cost", 0.0), f"{where}.obs_cost", 0.0),
        force_plan=force,
    )
    return Agent(aid, state, settings)


def _agent_to_dict(a):
    st, s = a.state, a.settings
    return {
        "id": a.id,
        "r": dict(st.theta.r), "e": dict(st.theta.e), "s": dict(st.theta.s),
        "c_err": dict(st.q.c_err), "eta": dict(st.q.eta_thresh), "sigma": dict(st.sigma),
        "chi_op": dict(st.zeta.chi_op),
        "kappa": st.zeta.kappa,
        "plasticity": {"lr_r": st.lam.lr_r, "lr_sigma": st.lam.lr_sigma, "lr_eta": st.lam.lr_eta},
        "score_weights": vars(s.score).copy(),
        "plan_weights": vars(s.plan).copy(),
        "foreground_temperature": s.foreground_temperature,
        "plan_temperature": s.plan_temperature,
        "queue_capacity": s.queue_capacity,
        "feasibility_cap": s.feasibility_cap,
        "plan_costs": {k: c.to_dict() for k, c in s.plan_costs.items()},
        "plan_utility": dict(s.plan_utility),
        "utility_feedback": dict(s.utility_feedback),
        "sensitization_threshold": s.sensitization_threshold,
        "adapt_eta": s.adapt_eta,
        "obs_cost": s.obs_cost,
        "force_plan": s.force_plan,
    }


def _hypothesis(doc, agent_ids):
    if doc is None:
        return None
    _object(doc, "$.hypothesis")
    hid = doc.get("id")
    if hid not in HYPOTHESES:
        raise SchemaError(f"id must be one of {list(HYPOTHESES)}", "$.hypothesis.id")
    out = dict(doc)
    out["threshold"] = _number(doc.get("threshold", 0.0), "$.hypothesis.threshold")
    for role in ("sender", "receiver"):
        if role in doc and doc[role] not in agent_ids:
            raise ConfigReferenceError(f"unknown agent '{doc[role]}'", f"$.hypothesis.{role}")
    return out


def _rd(doc, world):
    if doc is None:
        return None
    _object(doc, "$.rd")
    source = doc.get("source", "observations")
    if source != "observations" and source not in world.target_names:
        raise ConfigReferenceError(f"unknown rd source '{source}'", "$.rd.source")
    distortion = doc.get("distortion", "hamming")
    if distortion != "hamming":
        rows = _array(distortion, "$.rd.distortion")
        for i, row in enumerate(rows):
            for j, v in enumerate(_array(row, f"$.rd.distortion[{i}]")):
                _number(v, f"$.rd.distortion[{i}][{j}]", 0.0)
    return {"source": source, "distortion": distortion}


## -------------------------------------------------------------- ##
## Entry points ##

def config_from_dict(doc, base_dir="."):
    """Validate a parsed config document; the first problem raises with its JSON path."""
    _object(doc, "$")
    world_doc = doc.get("world")
    if isinstance(world_doc, str):
        world_doc = _read_json(os.path.join(base_dir, world_doc), "$.world")
    if world_doc is None:
        raise SchemaError("missing world", "$.world")
    world = build_world(world_doc, "$.world")

    bases = _bases(doc.get("bases"), world.obs_size)
    resolutions = _resolutions(doc.get("resolutions"))
    labeling = _labeling(doc.get("labeling"), bases)
    engine = _engine(doc.get("engine"))
    if engine.align_mode == "exhaustive":
        too_big = [r.id for r in resolutions if r.cardinality > engine.exhaustive_cap]
        if too_big:
            logger.warning("[config] resolutions %s exceed the exhaustive cap; aligning from them will fail", too_big)

    keys = [phase_key(t, b.id, r.id) for t in world.target_names for b in bases for r in resolutions]
    agents = []
    for i, item in enumerate(_array(doc.get("agents", []), "$.agents", non_empty=False)):
        a = _agent(item, i, base_dir, keys, world.target_names, bases, resolutions, engine)
        if any(x.id == a.id for x in agents):
            raise SchemaError(f"duplicate agent '{a.id}'", f"$.agents[{i}].id")
        agents.append(a)

    name = doc.get("name", "run")
    seed = _integer(doc.get("seed", 0), "$.seed", 0)
    return RunConfig(
        name=_string(name, "$.name"),
        seed=seed,
        world=world,
        bases=bases,
        resolutions=resolutions,
        labeling=labeling,
        engine=engine,
        agents=tuple(agents),
        hypothesis=_hypothesis(doc.get("hypothesis"), {a.id for a in agents}),
        rd=_rd(doc.get("rd"), world),
    )


def parse_config(path):
    doc = _read_json(path, "$")
    cfg = config_from_dict(doc, os.path.dirname(os.path.abspath(path)))
    logger.info("[config] parsed '%s' from %s: %d agents, %d phase points",
                cfg.name, path, len(cfg.agents), len(cfg.phase_keys))
    return replace(cfg, source=path)


def resolve_seed(config_seed, flag=None, env=None):
    """--seed flag, then the MIM_SEED environment value, then the config seed."""
    if flag is not None:
        return int(flag)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got '{env}'") from None
    return config_seed


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
