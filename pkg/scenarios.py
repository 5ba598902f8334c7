"""
scenarios.py

Desk-scale checks of the four hypotheses, each a fixed-threshold statistic on
a run config carrying a "hypothesis" block:

  H1  foregrounding divergence: TV between two agents' fired histograms
      on one observation stream                                  pass iff >= threshold
  H2  receptivity prediction: share of probes whose processability is
      predicted from (mu, error vs eta) before simulating         pass iff > 0.5 + threshold
  H3  alignment effect: receiver error under naive index delivery minus
      receiver error under the optimized channel                  pass iff > threshold
  H4  resolution strategy: TV between two agents' action shares
      (Act, Explore) against (Reinterpret, Suspend)              pass iff >= threshold

Usage examples:
  outcome = run_hypothesis(parse_config("configs/h1.json"))
  outcome.passed, outcome.statistic
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from agent import ACTION_KINDS, REFLECTION_KINDS, foreground
from align import optimize_alignment, pointwise_receiver_error, processability, receiver_error
from candidate import stable_seed
from engine import build_states, fired_histogram, run
from world import draw_observations

logger = logging.getLogger(__name__)

# -------- CONFIGURATION --------
DEFAULT_PROBES = 200
DEFAULT_H2_TEMPERATURE = 0.25
# --------------------------------


class ConfigMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class HypothesisOutcome:
    id: str
    statistic: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"id": self.id, "statistic": self.statistic, "threshold": self.threshold,
                "pass": self.passed, "details": self.details}


def _params(cfg, hid):
    params = dict(cfg.hypothesis or {})
    if params.get("id", hid) != hid:
        logger.warning("[scenarios] config names %s, running %s", params.get("id"), hid)
    return params


def _pair(cfg, params, hid):
    if len(cfg.agents) != 2 and not ("sender" in params and "receiver" in params):
        raise ConfigMismatchError(f"{hid} needs exactly two agents, config has {len(cfg.agents)}")
    ids = [a.id for a in cfg.agents]
    return params.get("sender", ids[0]), params.get("receiver", ids[1])


def total_variation(p, q):
    keys = sorted(set(p) | set(q))
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


## -------------------------------------------------------------- ##
## H1 ##

def h1_divergence(cfg, cache=None):
    params = _params(cfg, "H1")
    if len(cfg.agents) != 2:
        raise ConfigMismatchError(f"H1 needs exactly two agents, config has {len(cfg.agents)}")
    record = run(cfg, cache)
    a, b = sorted(record.metrics["agents"])
    ha = fired_histogram([ev for ev in record.events if ev["agent"] == a], [])
    hb = fired_histogram([ev for ev in record.events if ev["agent"] == b], [])
    stat = total_variation(ha, hb)
    threshold = params.get("threshold", 0.0)
    return HypothesisOutcome("H1", stat, threshold, stat >= threshold,
                             {"histograms": {a: ha, b: hb}, "steps": record.steps, "digest": record.digest()})


## -------------------------------------------------------------- ##
## H2 ##

def _receiver_outcome(w, sender_c, kappa, receiver, st, errors, o, temperature, rng, cfg, cache):
    post = foreground(receiver, st.space, errors, temperature=temperature, seed=rng)
    report = optimize_alignment(w, sender_c, kappa, receiver.state, st.space,
                                cfg.engine.delta, cfg.engine.align_mode, cfg.engine.exhaustive_cap,
                                cache, receiver_keys={post.fired})
    err = pointwise_receiver_error(w, sender_c, st.space.get(post.fired), report.channel.mapping, o)
    ok, reason = processability(receiver.state, post.fired, err, report.mu)
    return post.fired, ok, reason, err


def h2_receptivity(cfg, cache=None, randomized=False):
    """
    Probes pair a sender candidate with an observation. The prediction takes
    the receiver's most foregrounded candidate; the simulation samples it at
    the scenario temperature. randomized replaces predictions by fair coins.
    """
    params = _params(cfg, "H2")
    sender_id, receiver_id = _pair(cfg, params, "H2")
    states = build_states(cfg, cache)
    w = cfg.world
    sender_st, receiver_st = states[sender_id], states[receiver_id]
    receiver = receiver_st.agent
    n = int(params.get("probes", DEFAULT_PROBES))
    temperature = float(params.get("temperature", DEFAULT_H2_TEMPERATURE))

    kappa = sender_st.agent.state.zeta.kappa
    align_cache = {}
    senders = sender_st.pool
    if not senders:
        raise ConfigMismatchError(f"sender '{sender_id}' has no admissible candidate")
    probe_rng = np.random.default_rng(stable_seed(cfg.seed, "H2", "probes"))
    sim_rng = np.random.default_rng(stable_seed(cfg.seed, "H2", "simulation"))
    coin_rng = np.random.default_rng(stable_seed(cfg.seed, "H2", "control"))
    observations = draw_observations(w, probe_rng, n)

    hits, predicted_yes, simulated_yes = 0, 0, 0
    for i, o in enumerate(observations):
        sender_c = senders[i % len(senders)]
        errors = {c.key: float(receiver_st.errors[c.key][o]) for c in receiver_st.pool}
        _, predicted, _, _ = _receiver_outcome(w, sender_c, kappa, receiver, receiver_st, errors, o, 0.0, None,
                                               cfg, align_cache)
        _, simulated, _, _ = _receiver_outcome(w, sender_c, kappa, receiver, receiver_st, errors, o,
                                               temperature, sim_rng, cfg, align_cache)
        if randomized:
            predicted = bool(coin_rng.random() < 0.5)
        hits += predicted == simulated
        predicted_yes += predicted
        simulated_yes += simulated

    accuracy = hits / n if n else 0.0
    margin = params.get("threshold", 0.0)
    return HypothesisOutcome("H2", accuracy, margin, accuracy > 0.5 + margin, {
        "probes": n,
        "temperature": temperature,
        "predicted_receptive": predicted_yes,
        "simulated_receptive": simulated_yes,
        "randomized": randomized,
    })


## -------------------------------------------------------------- ##
## H3 ##

def naive_mapping(sender_cardinality, receiver_cardinality):
    """Index-preserving delivery t -> t mod |T'|."""
    return tuple(t % receiver_cardinality for t in range(sender_cardinality))


def h3_alignment_effect(cfg, cache=None):
    params = _params(cfg, "H3")
    sender_id, receiver_id = _pair(cfg, params, "H3")
    states = build_states(cfg, cache)
    w = cfg.world
    sender_st, receiver_st = states[sender_id], states[receiver_id]
    kappa = sender_st.agent.state.zeta.kappa
    align_cache = {}

    rows = []
    for c in sender_st.pool:
        report = optimize_alignment(w, c, kappa, receiver_st.agent.state, receiver_st.space,
                                    cfg.engine.delta, cfg.engine.align_mode, cfg.engine.exhaustive_cap,
                                    align_cache)
        target_c = receiver_st.space.get(report.receiver)
        naive = naive_mapping(c.cardinality, target_c.cardinality)
        rows.append({
            "sender": c.key,
            "receiver": report.receiver,
            "naive_error": receiver_error(w, c, target_c, naive),
            "aligned_error": report.receiver_error,
            "delta_I": report.delta_I,
            "class": report.klass,
        })
    diffs = [r["naive_error"] - r["aligned_error"] for r in rows]
    if any(math.isnan(d) for d in diffs):
        raise ConfigMismatchError("naive and aligned delivery are both unprocessable for some sender candidate")
    stat = math.fsum(diffs) / len(diffs) if diffs else 0.0
    threshold = params.get("threshold", 0.0)
    return HypothesisOutcome("H3", stat, threshold, stat > threshold, {"pairs": rows})


## -------------------------------------------------------------- ##
## H4 ##

def action_share(plans):
    """Share of (Act, Explore) among the plans that are either actions or reflections."""
    acted = sum(plans.get(k, 0) for k in ACTION_KINDS)
    reflected = sum(plans.get(k, 0) for k in REFLECTION_KINDS)
    total = acted + reflected
    return acted / total if total else 0.0


def h4_resolution_strategy(cfg, cache=None):
    params = _params(cfg, "H4")
    if len(cfg.agents) != 2:
        raise ConfigMismatchError(f"H4 needs exactly two agents, config has {len(cfg.agents)}")
    record = run(cfg, cache)
    a, b = sorted(record.metrics["agents"])
    pa = action_share(record.metrics["agents"][a]["plans"])
    pb = action_share(record.metrics["agents"][b]["plans"])
    stat = abs(pa - pb)
    threshold = params.get("threshold", 0.0)
    return HypothesisOutcome("H4", stat, threshold, stat >= threshold, {
        "action_share": {a: pa, b: pb},
        "plans": {a: record.metrics["agents"][a]["plans"], b: record.metrics["agents"][b]["plans"]},
        "digest": record.digest(),
    })


HYPOTHESIS_RUNNERS = {
    "H1": h1_divergence,
    "H2": h2_receptivity,
    "H3": h3_alignment_effect,
    "H4": h4_resolution_strategy,
}


def run_hypothesis(cfg, hid=None, cache=None):
    hid = (hid or (cfg.hypothesis or {}).get("id") or "").upper()
    if hid not in HYPOTHESIS_RUNNERS:
        raise ConfigMismatchError(f"unknown hypothesis '{hid}'")
    outcome = HYPOTHESIS_RUNNERS[hid](cfg, cache)
    logger.info("[scenarios] %s statistic %.6g vs %.6g: %s", hid, outcome.statistic, outcome.threshold,
                "pass" if outcome.passed else "fail")
    return outcome
