"""
agent.py

One agent's processing step, pure functions over values:

  errors -> foreground (softmax over admissible candidates) -> error intensity
  -> plans with costs -> priorities -> selected plan + working-memory queue
  -> feedback update of the profile state

Profile tables are dicts keyed by phase key "target/basis/resolution".
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from probkit import Dist, IBOptions, kl_divergence
from world import posterior_target

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
PLAN_KINDS = ("Report", "Suspend", "Reinterpret", "Explore", "Act", "Align")
BASE_PLAN_KINDS = PLAN_KINDS[:5]
COST_FIELDS = ("body", "time", "skill", "coop", "comm")
ACTION_KINDS = ("Act", "Explore")
REFLECTION_KINDS = ("Reinterpret", "Suspend")
SENSITIZATION_THRESHOLD = 1.0   # c_err at or above this turns failures into s growth
DEFAULT_KAPPA = 8
# --------------------------------


class EmptyAdmissibleSpaceError(ValueError):
    pass


class NoFeasiblePlanError(ValueError):
    pass


## -------------------------------------------------------------- ##
## Profile state ##

def _check_range(table, name, lo=0.0, hi=math.inf):
    for key, value in table.items():
        if not (lo <= value <= hi) or math.isnan(value):
            raise ValueError(f"{name}[{key}] = {value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class OperatingProfile:
    r: dict
    e: dict
    s: dict

    def __post_init__(self):
        if not (set(self.r) == set(self.e) == set(self.s)):
            raise ValueError("r, e and s must cover the same phase points")
        _check_range(self.e, "e")
        _check_range(self.s, "s")


@dataclass(frozen=True)
class Plasticity:
    lr_r: float = 0.1
    lr_sigma: float = 0.1
    lr_eta: float = 0.0

    def __post_init__(self):
        _check_range({"lr_r": self.lr_r, "lr_sigma": self.lr_sigma, "lr_eta": self.lr_eta}, "lambda", 0.0, 1.0)


@dataclass(frozen=True)
class Firing:
    c_err: dict
    eta_thresh: dict

    def __post_init__(self):
        _check_range(self.c_err, "c_err")
        _check_range(self.eta_thresh, "eta_thresh")


@dataclass(frozen=True)
class Formation:
    chi_op: dict                                   # target -> inclusion weight
    tau: IBOptions = field(default_factory=IBOptions)
    kappa: int = DEFAULT_KAPPA

    def __post_init__(self):
        _check_range(self.chi_op, "chi_op")
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")

    def includes(self, target):
        return self.chi_op.get(target, 0.0) > 0


@dataclass(frozen=True)
class ProfileState:
    theta: OperatingProfile
    lam: Plasticity
    q: Firing
    zeta: Formation
    sigma: dict

    def __post_init__(self):
        _check_range(self.sigma, "sigma", 0.0, 1.0)

    @classmethod
    def constant(cls, keys, targets, r=0.0, e=0.0, s=0.0, c_err=1.0, eta=0.5, sigma=0.0,
                 lam=None, tau=None, kappa=DEFAULT_KAPPA):
        table = lambda v: {k: float(v) for k in keys}
        return cls(
            theta=OperatingProfile(table(r), table(e), table(s)),
            lam=lam or Plasticity(),
            q=Firing(table(c_err), table(eta)),
            zeta=Formation({t: 1.0 for t in targets}, tau or IBOptions(), kappa),
            sigma=table(sigma),
        )

    def to_dict(self):
        return {
            "theta": {"r": dict(self.theta.r), "e": dict(self.theta.e), "s": dict(self.theta.s)},
            "lambda": {"lr_r": self.lam.lr_r, "lr_sigma": self.lam.lr_sigma, "lr_eta": self.lam.lr_eta},
            "q": {"c_err": dict(self.q.c_err), "eta": dict(self.q.eta_thresh)},
            "zeta": {"chi_op": dict(self.zeta.chi_op), "tau": self.zeta.tau.to_dict(), "kappa": self.zeta.kappa},
            "sigma": dict(self.sigma),
        }


@dataclass(frozen=True)
class ScoreWeights:
    w_e: float = 1.0
    w_s: float = 1.0
    w_L: float = 1.0
    w_sigma: float = 0.0


@dataclass(frozen=True)
class PlanWeights:
    a1: float = 1.0
    a2: float = 1.0
    a3: float = 0.0
    a4: float = 0.0
    a5: float = 0.0
    a6: float = 1.0


@dataclass(frozen=True)
class PlanCosts:
    body: float = 0.0
    time: float = 0.0
    skill: float = 0.0
    coop: float = 0.0
    comm: float = 0.0

    def __post_init__(self):
        _check_range({f: getattr(self, f) for f in COST_FIELDS}, "cost")

    @property
    def c_act(self):
        # first-order additive form
        return self.body + self.time + self.skill + self.coop + self.comm

    def to_dict(self):
        return {f: getattr(self, f) for f in COST_FIELDS}


@dataclass(frozen=True)
class AgentSettings:
    score: ScoreWeights = field(default_factory=ScoreWeights)
    plan: PlanWeights = field(default_factory=PlanWeights)
    foreground_temperature: float = 1.0
    plan_temperature: float = 1.0
    queue_capacity: int = 3
    feasibility_cap: float = math.inf
    plan_costs: dict = field(default_factory=dict)      # kind -> PlanCosts
    plan_utility: dict = field(default_factory=dict)    # kind -> U
    utility_feedback: dict = field(default_factory=dict)  # kind -> dU
    sensitization_threshold: float = SENSITIZATION_THRESHOLD
    adapt_eta: bool = False
    obs_cost: float = 0.0
    force_plan: str = None

    def __post_init__(self):
        if self.foreground_temperature < 0 or self.plan_temperature < 0:
            raise ValueError("temperatures must be non-negative")
        if self.queue_capacity < 0:
            raise ValueError("queue capacity must be non-negative")
        if self.force_plan is not None and self.force_plan not in PLAN_KINDS:
            raise ValueError(f"unknown plan kind '{self.force_plan}'")

    def costs(self, kind):
        return self.plan_costs.get(kind, PlanCosts())


@dataclass(frozen=True)
class Agent:
    id: str
    state: ProfileState
    settings: AgentSettings = field(default_factory=AgentSettings)

    def with_state(self, state):
        return replace(self, state=state)


## -------------------------------------------------------------- ##
## Errors, foregrounding, intensity ##

@dataclass(frozen=True, eq=False)
class PostOperatingState:
    fired: str
    keys: tuple          # admissible candidates the softmax ran over
    pi: Dist
    scores: tuple
    intensity: float
    crossed: bool
    direction: dict

    def to_dict(self):
        return {
            "fired": self.fired,
            "pi": {k: float(p) for k, p in zip(self.keys, self.pi.probs)},
            "intensity": self.intensity,
            "crossed": self.crossed,
        }


def prediction_error(w, c, o):
    """KL(p(Y|o) || decoder-induced p(Y|o)) at one observation."""
    return kl_divergence(posterior_target(w, c.target, o), c.predictive[o])


def foreground_score(agent, key, error):
    st, wts = agent.state, agent.settings.score
    return (st.theta.r[key] + wts.w_e * st.theta.e[key] - wts.w_s * st.theta.s[key]
            + wts.w_L * error + wts.w_sigma * st.sigma[key])


def _sample(probs, rng):
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def foreground(agent, space, errors, temperature=None, seed=None, masked_bases=()):
    """
    Raise one admissible candidate to processing.

    errors maps candidate keys to pointwise prediction errors. Temperature 0
    takes the first maximum in enumeration order instead of sampling. seed may
    be an int or a numpy Generator. Candidates on a masked basis or on a target
    with zero inclusion weight are skipped.
    """
    temperature = agent.settings.foreground_temperature if temperature is None else temperature
    pool = [c for c in space.admissible()
            if agent.state.zeta.includes(c.target) and c.basis.id not in masked_bases]
    if not pool:
        raise EmptyAdmissibleSpaceError(f"agent '{agent.id}' has no admissible candidate to foreground")
    keys = tuple(c.key for c in pool)
    scores = np.array([foreground_score(agent, k, errors.get(k, 0.0)) for k in keys])

    if temperature == 0:
        probs = np.zeros(len(keys))
        probs[int(np.argmax(scores))] = 1.0
        fired = keys[int(np.argmax(scores))]
    else:
        probs = softmax(scores / temperature)
        probs = probs / probs.sum()
        fired = keys[_sample(probs, np.random.default_rng(seed))]

    intensity, crossed = error_intensity(agent, fired, errors.get(fired, 0.0))
    return PostOperatingState(
        fired=fired,
        keys=keys,
        pi=Dist(probs),
        scores=tuple(float(s) for s in scores),
        intensity=intensity,
        crossed=crossed,
        direction=foregrounding_direction(agent, space, errors),
    )


def error_intensity(agent, key, L):
    intensity = agent.state.q.c_err[key] * L
    return intensity, intensity > agent.state.q.eta_thresh[key]


def foregrounding_direction(agent, space, errors):
    """v(x) = w_L*error(x) + e(x) - s(x) on every phase point of the space."""
    st, w_L = agent.state, agent.settings.score.w_L
    return {key: w_L * errors.get(key, 0.0) + st.theta.e[key] - st.theta.s[key] for key in space.keys}


## -------------------------------------------------------------- ##
## Plans ##

@dataclass(frozen=True)
class Plan:
    kind: str
    candidate: str
    peer: str = None
    costs: PlanCosts = field(default_factory=PlanCosts)

    def __post_init__(self):
        if self.kind not in PLAN_KINDS:
            raise ValueError(f"unknown plan kind '{self.kind}'")
        if (self.kind == "Align") != (self.peer is not None):
            raise ValueError("Align plans, and only Align plans, name a peer")

    @property
    def c_act(self):
        return self.costs.c_act

    def sort_key(self):
        return (PLAN_KINDS.index(self.kind), self.candidate, self.peer or "")

    def to_dict(self):
        return {"kind": self.kind, "candidate": self.candidate, "peer": self.peer, "c_act": self.c_act}


@dataclass(frozen=True)
class PlanContext:
    expected_dL: float = 0.0
    U: float = 0.0
    C_comp: float = 0.0
    C_obs: float = 0.0
    horizon_tag: str = "fine"


@dataclass(frozen=True)
class PlanQueue:
    entries: tuple      # (Plan, priority) pairs
    capacity: int

    def to_dict(self):
        return [{"plan": p.to_dict(), "priority": pr} for p, pr in self.entries]


@dataclass(frozen=True)
class Feedback:
    dL: float = 0.0
    dU: float = 0.0
    dC_act: float = 0.0
    dC_coop: float = 0.0
    dPhi: float = 0.0

    def __post_init__(self):
        for name in ("dL", "dU", "dC_act", "dC_coop", "dPhi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"feedback {name} must be finite")

    def to_dict(self):
        return {"dL": self.dL, "dU": self.dU, "dC_act": self.dC_act, "dC_coop": self.dC_coop, "dPhi": self.dPhi}


def generate_plans(agent, post, peers):
    plans = [Plan(kind, post.fired, None, agent.settings.costs(kind)) for kind in BASE_PLAN_KINDS]
    plans += [Plan("Align", post.fired, peer, agent.settings.costs("Align")) for peer in peers]
    return plans


def feasible_plans(agent, plans):
    return [p for p in plans if p.c_act <= agent.settings.feasibility_cap]


def horizon_bonus(horizon_tag, kind):
    if horizon_tag == "fine":
        return 1.0 if kind in ACTION_KINDS else 0.0
    return 1.0 if kind in REFLECTION_KINDS else 0.0


def plan_priority(agent, plan, ctx):
    a = agent.settings.plan
    return (a.a1 * ctx.expected_dL + a.a2 * ctx.U - a.a3 * ctx.C_comp - a.a4 * ctx.C_obs
            - a.a5 * plan.c_act + a.a6 * horizon_bonus(ctx.horizon_tag, plan.kind))


def select_plan(agent, plans, priorities, temperature=None, seed=None):
    """
    Pick one plan by softmax over priorities; the rest of the feasible plans
    enter the queue by priority up to capacity.
    """
    temperature = agent.settings.plan_temperature if temperature is None else temperature
    cap = agent.settings.feasibility_cap
    pairs = [(p, float(pr)) for p, pr in zip(plans, priorities) if p.c_act <= cap]
    if agent.settings.force_plan is not None:
        pairs = [(p, pr) for p, pr in pairs if p.kind == agent.settings.force_plan]
    if not pairs:
        raise NoFeasiblePlanError(f"agent '{agent.id}' has no feasible plan")

    ranked = sorted(range(len(pairs)), key=lambda i: (-pairs[i][1], pairs[i][0].sort_key()))
    if temperature == 0:
        chosen = ranked[0]
    else:
        probs = softmax(np.array([pr for _, pr in pairs]) / temperature)
        chosen = _sample(probs / probs.sum(), np.random.default_rng(seed))

    rest = [pairs[i] for i in ranked if i != chosen]
    queue = PlanQueue(tuple(rest[:agent.settings.queue_capacity]), agent.settings.queue_capacity)
    return pairs[chosen][0], queue


## -------------------------------------------------------------- ##
## Feedback ##

def apply_feedback(agent, key, fb, intensity=None):
    """Update the fired phase point's entries; everything else is left as is."""
    st = agent.state
    lam = st.lam
    r, s = dict(st.theta.r), dict(st.theta.s)
    sigma, eta = dict(st.sigma), dict(st.q.eta_thresh)

    r[key] = r[key] + lam.lr_r * (-fb.dL)
    if fb.dL > 0 and st.q.c_err[key] >= agent.settings.sensitization_threshold:
        s[key] = s[key] + lam.lr_r * fb.dL
    if fb.dL <= 0:
        sigma[key] = min(1.0, sigma[key] + lam.lr_sigma * (1.0 - sigma[key]))
    if agent.settings.adapt_eta and intensity is not None:
        eta[key] = eta[key] + lam.lr_eta * (intensity - eta[key])

    return replace(
        st,
        theta=replace(st.theta, r=r, s=s),
        q=replace(st.q, eta_thresh=eta),
        sigma=sigma,
    )
