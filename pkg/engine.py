"""
engine.py

Runs the observation -> candidate -> error -> plan -> feedback loop for every
agent of a run config with seeded streams and a replayable event log.

Each tick is two-phase: every agent reads the tick-start states (the shared
observation, its own profile, peers for alignment), then all updates commit.
Agents are processed in sorted id order.

Streams:
  "world"          one observation per tick, seen by every agent
  agent id         foregrounding, plan sampling, extra observations

Usage examples:
  cfg = parse_config("configs/two_agent.json")
  record = run(cfg)
  record.digest()
  curves(record)
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from agent import (
    ACTION_KINDS, PLAN_KINDS, EmptyAdmissibleSpaceError, Feedback, PlanContext,
    apply_feedback, foreground, generate_plans, plan_priority, select_plan,
)
from align import aligned_statistic, optimize_alignment
from candidate import (
    UnlabeledPhaseError, constraint_sequence, enumerate_candidate_space, lowdim_reconstruction_error,
    pointwise_errors, population_reconstruction_error, stable_seed, variance_preservation_ratio,
)
import canonical_json
from world import draw_observations

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
ALIGN_CLASSES = ("Full", "Partial", "Severed")
POPULATION_COMPONENTS = 1
# --------------------------------


class StepError(RuntimeError):
    """A module error raised while stepping one agent."""

    def __init__(self, step, agent, cause):
        self.step, self.agent, self.cause = step, agent, cause
        super().__init__(f"step {step}, agent '{agent}': {type(cause).__name__}: {cause}")


@dataclass(frozen=True, eq=False)
class WorldModelState:
    agent: object                 # agent.Agent
    space: object                 # candidate.CandidateSpace
    errors: dict                  # candidate key -> per-observation error array
    step: int = 0
    inbox: tuple = ()

    @property
    def phase_points(self):
        return self.space.phase_points

    @property
    def pool(self):
        """Admissible candidates on targets the agent includes."""
        return [c for c in self.space.admissible() if self.agent.state.zeta.includes(c.target)]


class RunStreams:
    def __init__(self, seed):
        self.seed = seed
        self.world = np.random.default_rng(stable_seed(seed, "world"))
        self._agents = {}

    def agent(self, agent_id):
        if agent_id not in self._agents:
            self._agents[agent_id] = np.random.default_rng(stable_seed(self.seed, "agent", agent_id))
        return self._agents[agent_id]


@dataclass(frozen=True, eq=False)
class RunRecord:
    name: str
    config_digest: str
    seed: int
    steps: int
    events: tuple
    metrics: dict
    states: dict = field(default=None, repr=False)

    def to_dict(self):
        return {
            "name": self.name,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "steps": self.steps,
            "events": list(self.events),
            "metrics": self.metrics,
        }

    def digest(self):
        return canonical_json.digest(self.to_dict())


## -------------------------------------------------------------- ##
## Setup ##

def build_states(cfg, cache=None):
    """One WorldModelState per agent; candidate builds are shared through cache."""
    cache = {} if cache is None else cache
    w = cfg.world
    states = {}
    for a in cfg.agents:
        space = enumerate_candidate_space(w, cfg.bases, w.target_names, cfg.resolutions,
                                          cfg.engine.epsilon, cfg.seed, a.state.zeta.tau, cache)
        errors = {c.key: pointwise_errors(w, c) for c in space.admissible()}
        states[a.id] = WorldModelState(a, space, errors)
    return states


## -------------------------------------------------------------- ##
## One tick ##

def plan_context(agent, space, fired_key, errors, plan):
    fired = space.get(fired_key)
    L = errors[fired_key]
    expected = 0.0
    c_obs = 0.0
    if plan.kind in ACTION_KINDS:
        expected = max(0.0, L - fired.gap)
        c_obs = agent.settings.obs_cost
    elif plan.kind == "Reinterpret":
        others = [v for k, v in errors.items() if space.get(k).basis.id != fired.basis.id]
        if others:
            expected = max(0.0, L - min(others))
    return PlanContext(
        expected_dL=expected,
        U=agent.settings.plan_utility.get(plan.kind, 0.0),
        C_comp=fired.diagnostics.i_ot,
        C_obs=c_obs,
        horizon_tag=fired.resolution.horizon_tag,
    )


def _read(aid, states, w, o, streams, settings, cache):
    """Everything one agent does at a tick, against tick-start states."""
    st = states[aid]
    agent, space = st.agent, st.space
    rng = streams.agent(aid)
    errors = {c.key: float(st.errors[c.key][o]) for c in st.pool}

    post = foreground(agent, space, errors, seed=rng)
    fired = space.get(post.fired)
    L = errors[post.fired]

    peers = sorted(p for p in states if p != aid)
    plans = generate_plans(agent, post, peers)
    priorities = [plan_priority(agent, p, plan_context(agent, space, post.fired, errors, p)) for p in plans]
    plan, queue = select_plan(agent, plans, priorities, seed=rng)

    effect, report, message = {}, None, None
    dL, dPhi = 0.0, 0.0
    if plan.kind == "Report":
        effect = {"bus": fired.obs_encoder[o].tolist()}
    elif plan.kind == "Reinterpret":
        # same observation, so the fired candidate's error and dL stay put
        try:
            again = foreground(agent, space, errors, seed=rng, masked_bases=(fired.basis.id,))
            effect = {"reinterpreted": again.fired, "error": errors[again.fired]}
        except EmptyAdmissibleSpaceError:
            logger.warning("[engine] step %d, %s: nothing left to reinterpret with outside basis '%s'",
                           st.step, aid, fired.basis.id)
            effect = {"reinterpreted": None}
    elif plan.kind in ACTION_KINDS:
        o2 = draw_observations(w, rng)[0]
        new_error = float(st.errors[post.fired][o2])
        dL = new_error - L
        effect = {"extra_observation": o2, "error": new_error}
    elif plan.kind == "Align":
        peer = states[plan.peer]
        report = optimize_alignment(w, fired, agent.state.zeta.kappa, peer.agent.state, peer.space,
                                    settings.delta, settings.align_mode, settings.exhaustive_cap, cache)
        rep, delivered = aligned_statistic(fired, o, report.channel)
        dPhi = -report.delta_I
        effect = {"representation": rep.probs.tolist(), "delivered": delivered.probs.tolist()}
        message = (plan.peer, {
            "from": aid,
            "step": st.step,
            "sender_candidate": post.fired,
            "receiver_candidate": report.receiver,
            "delivered": delivered.probs.tolist(),
        })

    fb = Feedback(
        dL=dL,
        dU=agent.settings.utility_feedback.get(plan.kind, 0.0),
        dC_act=plan.c_act,
        dC_coop=plan.costs.coop,
        dPhi=dPhi,
    )
    event = {
        "step": st.step,
        "agent": aid,
        "observation": o,
        "fired": post.fired,
        "pi": post.to_dict()["pi"],
        "errors": errors,
        "c_err": agent.state.q.c_err[post.fired],
        "intensity": post.intensity,
        "crossed": post.crossed,
        "plan": plan.to_dict(),
        "priorities": [{"plan": p.to_dict(), "priority": float(pr)} for p, pr in zip(plans, priorities)],
        "queue": queue.to_dict(),
        "effect": effect,
        "feedback": fb.to_dict(),
        "alignment": report.to_dict() if report is not None else None,
        "inbox": list(st.inbox),
    }
    # Suspend holds the profile as it is
    commit = None if plan.kind == "Suspend" else (post.fired, fb, post.intensity)
    return event, commit, message


def step(states, w, streams, settings, cache=None):
    """
    Advance every agent by one tick.

    settings is the run's EngineSettings; cache memoizes alignment
    evaluations across ticks.
    """
    o = draw_observations(w, streams.world)[0]
    if not states:
        return states, []

    events, commits, outbox = [], {}, {}
    for aid in sorted(states):
        try:
            event, commit, message = _read(aid, states, w, o, streams, settings, cache)
        except (ValueError, ArithmeticError) as e:
            logger.error("[engine] step %d, agent %s failed: %s", states[aid].step, aid, e)
            raise StepError(states[aid].step, aid, e) from e
        events.append(event)
        commits[aid] = commit
        if message is not None:
            outbox.setdefault(message[0], []).append(message[1])

    new_states = {}
    for aid in sorted(states):
        st = states[aid]
        agent = st.agent
        if commits[aid] is not None:
            fired, fb, intensity = commits[aid]
            agent = agent.with_state(apply_feedback(agent, fired, fb, intensity))
        new_states[aid] = replace(st, agent=agent, step=st.step + 1, inbox=tuple(outbox.get(aid, ())))
    return new_states, events


def run(cfg, cache=None):
    states = build_states(cfg, cache)
    streams = RunStreams(cfg.seed)
    align_cache = {}
    events = []
    for _ in range(cfg.engine.steps):
        states, evs = step(states, cfg.world, streams, cfg.engine, align_cache)
        events.extend(evs)
    logger.info("[engine] %s: %d steps, %d agents, %d events", cfg.name, cfg.engine.steps, len(states), len(events))
    return RunRecord(
        name=cfg.name,
        config_digest=canonical_json.digest(cfg.to_dict()),
        seed=cfg.seed,
        steps=cfg.engine.steps,
        events=tuple(events),
        metrics=compute_metrics(cfg, states, events),
        states=states,
    )


## -------------------------------------------------------------- ##
## Metrics and curves ##

def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def _labelled_points(st, labeling):
    return [pt for pt in st.phase_points if pt.basis in labeling.domains]


def fired_histogram(events, keys):
    counts = {k: 0 for k in keys}
    for ev in events:
        counts[ev["fired"]] = counts.get(ev["fired"], 0) + 1
    total = sum(counts.values())
    return {k: (n / total if total else 0.0) for k, n in counts.items()}


def _agent_metrics(cfg, st, events):
    keys = [c.key for c in st.pool]
    aligned = [ev["alignment"] for ev in events if ev["alignment"] is not None]
    deltas = [a["delta_I"] for a in aligned]
    r = st.agent.state.theta.r
    points = _labelled_points(st, cfg.labeling)
    try:
        gamma = constraint_sequence(r, cfg.labeling, points).to_dict()
        eps_d = lowdim_reconstruction_error(r, cfg.labeling, points)
        kept = variance_preservation_ratio(r, cfg.labeling, points)
    except UnlabeledPhaseError as e:
        logger.warning("[engine] %s: no constraint sequence (%s)", st.agent.id, e)
        gamma, eps_d, kept = [], 0.0, 1.0
    return {
        "fired": fired_histogram(events, keys),
        "mean_pi": {k: _mean(ev["pi"].get(k, 0.0) for ev in events) for k in keys},
        "mean_intensity": _mean(ev["intensity"] for ev in events),
        "mean_error": _mean(ev["errors"][ev["fired"]] for ev in events),
        "crossing_rate": _mean(1.0 if ev["crossed"] else 0.0 for ev in events),
        "plans": {kind: sum(ev["plan"]["kind"] == kind for ev in events) for kind in PLAN_KINDS},
        "alignment": {
            "count": len(aligned),
            "mean_delta_I": _mean(deltas),
            "max_delta_I": max(deltas) if deltas else 0.0,
            "classes": {k: sum(a["class"] == k for a in aligned) for k in ALIGN_CLASSES},
        },
        "constraint_sequence": gamma,
        "epsilon_d": eps_d,
        "variance_preserved": kept,
        "final_r": dict(r),
        "final_sigma": dict(st.agent.state.sigma),
    }


def compute_metrics(cfg, states, events):
    per_agent = {}
    for aid in sorted(states):
        per_agent[aid] = _agent_metrics(cfg, states[aid], [ev for ev in events if ev["agent"] == aid])
    population = 0.0
    if len(states) >= 2:
        st0 = states[sorted(states)[0]]
        population = population_reconstruction_error(
            [states[aid].agent.state.theta.r for aid in sorted(states)], st0.phase_points, POPULATION_COMPONENTS)
    return {
        "steps": cfg.engine.steps,
        "agents": per_agent,
        "population_reconstruction_error": population,
    }


def curves(record):
    """(series, x, y) rows: intensity, fired error and alignment loss per agent over steps."""
    rows = []
    for ev in record.events:
        aid = ev["agent"]
        rows.append((f"intensity/{aid}", ev["step"], ev["intensity"]))
        rows.append((f"error/{aid}", ev["step"], ev["errors"][ev["fired"]]))
        if ev["alignment"] is not None:
            rows.append((f"delta_I/{aid}", ev["step"], ev["alignment"]["delta_I"]))
    rows.sort(key=lambda row: (row[0], row[1]))
    return rows
