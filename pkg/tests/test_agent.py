import math
from dataclasses import replace

import numpy as np
import pytest

from agent import (
    PLAN_KINDS, Agent, AgentSettings, EmptyAdmissibleSpaceError, Feedback, Formation, NoFeasiblePlanError,
    Plan, PlanContext, PlanCosts, PlanWeights, Plasticity, ProfileState, apply_feedback, error_intensity,
    feasible_plans, foreground, foregrounding_direction, generate_plans, horizon_bonus, plan_priority,
    prediction_error, select_plan,
)
from candidate import pointwise_errors
from helpers import config_with


def _agent(space, world, **kwargs):
    state = ProfileState.constant(space.keys, world.target_names, **kwargs)
    return Agent("a", state, AgentSettings())


def _zero_errors(space):
    return {k: 0.0 for k in space.admissible_keys()}


def test_prediction_error_matches_pointwise_table(world, space):
    c = space.get("A/first/coarse")
    table = pointwise_errors(world, c)
    for o in range(world.obs_size):
        assert prediction_error(world, c, o) == pytest.approx(table[o], abs=1e-12)


def test_foreground_uniform_when_scores_tie(world, space):
    post = foreground(_agent(space, world), space, _zero_errors(space), seed=1)
    assert len(post.keys) == 12
    np.testing.assert_allclose(post.pi.probs, 1 / 12, atol=1e-12)
    assert post.fired in post.keys


def test_foreground_temperature_zero_takes_the_argmax(world, space):
    agent = _agent(space, world)
    r = dict(agent.state.theta.r)
    r["B/second/coarse"] = 1.0
    agent = agent.with_state(replace(agent.state, theta=replace(agent.state.theta, r=r)))
    post = foreground(agent, space, _zero_errors(space), temperature=0.0)
    assert post.fired == "B/second/coarse"
    assert post.pi.probs.max() == 1.0


def test_foreground_score_gap_of_ten_is_nearly_certain(world, space):
    agent = _agent(space, world)
    r = dict(agent.state.theta.r)
    r["A/first/coarse"] = 10.0
    agent = agent.with_state(replace(agent.state, theta=replace(agent.state.theta, r=r), zeta=Formation({"A": 1.0})))
    post = foreground(agent, space, _zero_errors(space), temperature=1.0, seed=0, masked_bases=("identity",))
    assert post.keys == ("A/first/fine", "A/first/coarse")
    assert post.pi.probs[1] >= 0.9999
    assert post.pi.probs[1] == pytest.approx(1.0 / (1.0 + math.exp(-10.0)), abs=1e-12)


def test_foreground_skips_excluded_targets_and_masked_bases(world, space):
    agent = _agent(space, world)
    agent = agent.with_state(replace(agent.state, zeta=Formation({"A": 1.0})))
    post = foreground(agent, space, _zero_errors(space), seed=0, masked_bases=("identity",))
    assert post.keys == ("A/first/fine", "A/first/coarse")
    with pytest.raises(EmptyAdmissibleSpaceError):
        foreground(agent, space, _zero_errors(space), seed=0, masked_bases=("identity", "first"))


def test_foreground_is_seeded(world, space):
    agent = _agent(space, world)
    fired = [foreground(agent, space, _zero_errors(space), seed=s).fired for s in range(20)]
    again = [foreground(agent, space, _zero_errors(space), seed=s).fired for s in range(20)]
    assert fired == again
    assert len(set(fired)) > 1


def test_error_intensity_and_crossing(world, space):
    agent = _agent(space, world, c_err=2.0, eta=1.0)
    assert error_intensity(agent, "A/first/fine", 0.5) == (1.0, False)
    intensity, crossed = error_intensity(agent, "A/first/fine", 0.75)
    assert intensity == 1.5 and crossed


def test_zero_cost_never_crosses(world, space):
    agent = _agent(space, world, c_err=0.0, eta=0.0)
    assert error_intensity(agent, "A/first/fine", 100.0) == (0.0, False)


def test_explorer_direction_table(space):
    agent = config_with("two_agent.json").agent("beta")
    v = foregrounding_direction(agent, space, {})
    assert v["A/first/coarse"] == pytest.approx(0.75)
    assert v["A/identity/fine"] == pytest.approx(0.5)
    assert v["B/first/fine"] == pytest.approx(-0.25)
    assert v["parity/second/fine"] == pytest.approx(0.0)
    assert v["parity/parity/coarse"] == pytest.approx(1.0)
    assert set(v) == set(space.keys)


def test_direction_adds_weighted_error(space):
    agent = config_with("two_agent.json").agent("beta")
    v = foregrounding_direction(agent, space, {"A/identity/fine": 0.2})
    assert v["A/identity/fine"] == pytest.approx(0.7)


## plans ##

def test_generate_plans_names_peers_only_for_align(world, space):
    agent = _agent(space, world)
    post = foreground(agent, space, _zero_errors(space), seed=0)
    plans = generate_plans(agent, post, ["b", "c"])
    assert [p.kind for p in plans] == list(PLAN_KINDS[:5]) + ["Align", "Align"]
    assert [p.peer for p in plans if p.kind == "Align"] == ["b", "c"]
    with pytest.raises(ValueError):
        Plan("Align", "A/first/fine")
    with pytest.raises(ValueError):
        Plan("Report", "A/first/fine", peer="b")


def test_plan_priority_formula(world, space):
    agent = _agent(space, world)
    agent = replace(agent, settings=AgentSettings(plan=PlanWeights(1.0, 2.0, 0.5, 0.25, 0.1, 3.0)))
    plan = Plan("Explore", "A/first/fine", costs=PlanCosts(body=1.0, time=1.0))
    ctx = PlanContext(expected_dL=0.4, U=0.5, C_comp=0.6, C_obs=0.8, horizon_tag="fine")
    expected = 0.4 + 2.0 * 0.5 - 0.5 * 0.6 - 0.25 * 0.8 - 0.1 * 2.0 + 3.0
    assert plan_priority(agent, plan, ctx) == pytest.approx(expected)


def test_horizon_bonus():
    assert horizon_bonus("fine", "Act") == 1.0
    assert horizon_bonus("fine", "Suspend") == 0.0
    assert horizon_bonus("coarse", "Reinterpret") == 1.0
    assert horizon_bonus("coarse", "Explore") == 0.0


def _plans():
    return [Plan(kind, "A/first/fine") for kind in PLAN_KINDS[:5]]


def test_select_plan_greedy_with_queue(world, space):
    agent = replace(_agent(space, world), settings=AgentSettings(queue_capacity=2))
    chosen, queue = select_plan(agent, _plans(), [0.1, 0.5, 0.3, 0.5, 0.0], temperature=0.0)
    assert chosen.kind == "Suspend"
    assert [p.kind for p, _ in queue.entries] == ["Explore", "Reinterpret"]
    assert queue.capacity == 2


def test_select_plan_respects_feasibility_and_force(world, space):
    costly = [replace(p, costs=PlanCosts(time=5.0)) if p.kind == "Act" else p for p in _plans()]
    agent = replace(_agent(space, world), settings=AgentSettings(feasibility_cap=1.0))
    assert len(feasible_plans(agent, costly)) == 4
    chosen, _ = select_plan(agent, costly, [0.0, 0.0, 0.0, 0.0, 9.0], temperature=0.0)
    assert chosen.kind != "Act"

    forced = replace(_agent(space, world), settings=AgentSettings(force_plan="Suspend"))
    for seed in range(5):
        assert select_plan(forced, _plans(), [5, 0, 0, 0, 5], seed=seed)[0].kind == "Suspend"

    broke = replace(_agent(space, world), settings=AgentSettings(feasibility_cap=1.0, force_plan="Act"))
    with pytest.raises(NoFeasiblePlanError):
        select_plan(broke, costly, [0.0] * 5)


def test_equal_priorities_select_uniformly(world, space):
    agent = _agent(space, world)
    rng = np.random.default_rng(4)
    counts = dict.fromkeys(PLAN_KINDS[:5], 0)
    for _ in range(10000):
        counts[select_plan(agent, _plans(), [0.0] * 5, temperature=1.0, seed=rng)[0].kind] += 1
    tv = 0.5 * sum(abs(n / 10000 - 0.2) for n in counts.values())
    assert tv <= 0.02


def test_infeasible_plan_is_never_selected(world, space):
    costly = [replace(p, costs=PlanCosts(time=5.0)) if p.kind == "Act" else p for p in _plans()]
    agent = replace(_agent(space, world), settings=AgentSettings(feasibility_cap=1.0))
    rng = np.random.default_rng(9)
    for _ in range(10000):
        chosen, queue = select_plan(agent, costly, [0.0, 0.0, 0.0, 0.0, 9.0], temperature=1.0, seed=rng)
        assert chosen.kind != "Act"
        assert all(p.kind != "Act" for p, _ in queue.entries)


def test_select_plan_is_seeded(world, space):
    agent = _agent(space, world)
    picks = [select_plan(agent, _plans(), [0.0] * 5, seed=s)[0].kind for s in range(10)]
    assert picks == [select_plan(agent, _plans(), [0.0] * 5, seed=s)[0].kind for s in range(10)]


## feedback ##

def test_feedback_without_plasticity_changes_nothing(world, space):
    agent = _agent(space, world, lam=Plasticity(0.0, 0.0, 0.0))
    after = apply_feedback(agent, "A/first/fine", Feedback(dL=0.3))
    assert after.to_dict() == agent.state.to_dict()
    after = apply_feedback(agent, "A/first/fine", Feedback(dL=-0.3))
    assert after.to_dict() == agent.state.to_dict()


def test_full_sigma_step_on_success(world, space):
    agent = _agent(space, world, lam=Plasticity(0.1, 1.0, 0.0))
    after = apply_feedback(agent, "A/first/fine", Feedback(dL=-0.2))
    assert after.sigma["A/first/fine"] == 1.0
    assert after.theta.r["A/first/fine"] == pytest.approx(0.02)
    assert after.sigma["A/first/coarse"] == 0.0


def test_failure_sensitizes_only_above_threshold(world, space):
    hot = _agent(space, world, c_err=1.5)
    after = apply_feedback(hot, "A/first/fine", Feedback(dL=0.5))
    assert after.theta.s["A/first/fine"] == pytest.approx(0.05)
    assert after.theta.r["A/first/fine"] == pytest.approx(-0.05)
    assert after.sigma["A/first/fine"] == 0.0

    cool = _agent(space, world, c_err=0.5)
    assert apply_feedback(cool, "A/first/fine", Feedback(dL=0.5)).theta.s["A/first/fine"] == 0.0


def test_sigma_stays_in_unit_interval(world, space):
    agent = _agent(space, world, lam=Plasticity(0.3, 0.7, 0.0))
    rng = np.random.default_rng(2)
    for _ in range(200):
        agent = agent.with_state(apply_feedback(agent, "B/second/fine", Feedback(dL=float(rng.normal()))))
        assert 0.0 <= agent.state.sigma["B/second/fine"] <= 1.0


def test_eta_adapts_only_when_enabled(world, space):
    agent = _agent(space, world, lam=Plasticity(0.1, 0.1, 0.5), eta=1.0)
    assert apply_feedback(agent, "A/first/fine", Feedback(), 3.0).q.eta_thresh["A/first/fine"] == 1.0
    agent = replace(agent, settings=AgentSettings(adapt_eta=True))
    assert apply_feedback(agent, "A/first/fine", Feedback(), 3.0).q.eta_thresh["A/first/fine"] == 2.0


def test_feedback_must_be_finite():
    with pytest.raises(ValueError):
        Feedback(dL=math.inf)
    with pytest.raises(ValueError):
        Feedback(dPhi=math.nan)


def test_repeated_success_keeps_raising_r(world, space):
    agent = _agent(space, world)
    seen = [agent.state.theta.r["A/first/fine"]]
    for _ in range(20):
        agent = agent.with_state(apply_feedback(agent, "A/first/fine", Feedback(dL=-0.1)))
        seen.append(agent.state.theta.r["A/first/fine"])
    assert all(b > a for a, b in zip(seen, seen[1:]))


def _changed(before, after):
    tables = {
        "r": ("theta", "r"), "e": ("theta", "e"), "s": ("theta", "s"),
        "c_err": ("q", "c_err"), "eta": ("q", "eta"), "sigma": ("sigma",),
    }
    out = set()
    for name, path in tables.items():
        old, new = before, after
        for part in path:
            old, new = old[part], new[part]
        assert set(old) == set(new)
        out |= {(name, key) for key in old if old[key] != new[key]}
    return out


def test_feedback_diff_is_confined_to_the_fired_point(world, space):
    agent = _agent(space, world, c_err=1.5, eta=0.5, sigma=0.5, lam=Plasticity(0.1, 0.1, 0.5))
    agent = replace(agent, settings=AgentSettings(adapt_eta=True))
    before = agent.state.to_dict()
    key = "B/second/fine"

    failed = apply_feedback(agent, key, Feedback(dL=0.4), 2.0).to_dict()
    assert _changed(before, failed) == {("r", key), ("s", key), ("eta", key)}

    succeeded = apply_feedback(agent, key, Feedback(dL=-0.4), 2.0).to_dict()
    assert _changed(before, succeeded) == {("r", key), ("sigma", key), ("eta", key)}

    for after in (failed, succeeded):
        assert after["lambda"] == before["lambda"]
        assert after["zeta"] == before["zeta"]
