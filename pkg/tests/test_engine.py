import math

import numpy as np
import pytest

from engine import RunStreams, StepError, build_states, curves, fired_histogram, run
from helpers import check_golden, config_with


def _set(**engine):
    def edit(doc):
        doc["engine"].update(engine)
    return edit


def _forced(kind, steps=6, **engine):
    def edit(doc):
        doc["engine"].update(steps=steps, **engine)
        for item in doc["agents"]:
            item["force_plan"] = kind
    return edit


def test_no_agents_no_events():
    cfg = config_with("two_agent.json", lambda doc: doc.update(agents=[]))
    record = run(cfg)
    assert record.events == ()
    assert record.metrics["agents"] == {}
    assert record.metrics["population_reconstruction_error"] == 0.0


def test_zero_steps():
    record = run(config_with("two_agent.json", _set(steps=0)))
    assert record.events == ()
    alpha = record.metrics["agents"]["alpha"]
    assert set(alpha["fired"].values()) == {0.0}
    assert alpha["mean_intensity"] == 0.0
    assert alpha["alignment"]["count"] == 0


def test_runs_are_reproducible():
    cfg = config_with("two_agent.json", _set(steps=20))
    first, second = run(cfg), run(cfg)
    assert first.digest() == second.digest()
    assert run(config_with("two_agent.json", _set(steps=20)), cache={}).digest() == first.digest()


def test_different_seeds_differ():
    a = run(config_with("two_agent.json", lambda doc: doc.update(seed=1)))
    b = run(config_with("two_agent.json", lambda doc: doc.update(seed=2)))
    assert [ev["observation"] for ev in a.events] != [ev["observation"] for ev in b.events]


def test_shipped_run_digest():
    record = run(config_with("two_agent.json"))
    check_golden("two_agent.digest", record.digest() + "\n")


def test_events_conserve_probability_and_intensity():
    record = run(config_with("two_agent.json", _set(steps=30)))
    assert len(record.events) == 60
    for ev in record.events:
        assert abs(math.fsum(ev["pi"].values()) - 1.0) <= 1e-12
        assert ev["intensity"] == ev["c_err"] * ev["errors"][ev["fired"]]
        assert ev["crossed"] in (True, False)
        assert len(ev["queue"]) <= 3


def test_events_follow_sorted_agent_order():
    record = run(config_with("two_agent.json", _set(steps=5)))
    assert [(ev["step"], ev["agent"]) for ev in record.events] == [
        (t, aid) for t in range(5) for aid in ("alpha", "beta")]
    # every agent sees the same observation at a tick
    for t in range(5):
        assert len({ev["observation"] for ev in record.events if ev["step"] == t}) == 1


def test_suspend_leaves_profiles_untouched():
    cfg = config_with("two_agent.json", _forced("Suspend", steps=15))
    record = run(cfg)
    for a in cfg.agents:
        assert record.states[a.id].agent.state.to_dict() == a.state.to_dict()
    assert all(ev["plan"]["kind"] == "Suspend" for ev in record.events)


def test_reinterpret_does_not_credit_the_fired_candidate():
    cfg = config_with("two_agent.json", _forced("Reinterpret", steps=10, epsilon=1.0))
    record = run(cfg)
    moved = [ev for ev in record.events
             if ev["effect"].get("reinterpreted") is not None
             and ev["effect"]["error"] != ev["errors"][ev["fired"]]]
    assert moved
    assert all(ev["feedback"]["dL"] == 0.0 for ev in record.events)
    for a in cfg.agents:
        theta = record.states[a.id].agent.state.theta
        assert theta.r == a.state.theta.r
        assert theta.s == a.state.theta.s


def test_aligned_messages_arrive_next_tick():
    record = run(config_with("two_agent.json", _forced("Align", steps=4)))
    by = {(ev["step"], ev["agent"]): ev for ev in record.events}
    for aid, peer in (("alpha", "beta"), ("beta", "alpha")):
        assert by[(0, aid)]["inbox"] == []
        for t in range(3):
            sent = by[(t, aid)]
            assert sent["alignment"] is not None
            delivered = sent["effect"]["delivered"]
            assert abs(math.fsum(delivered) - 1.0) <= 1e-12
            inbox = by[(t + 1, peer)]["inbox"]
            assert len(inbox) == 1
            msg = inbox[0]
            assert msg["from"] == aid and msg["step"] == t
            assert msg["sender_candidate"] == sent["fired"]
            assert msg["receiver_candidate"] == sent["alignment"]["receiver"]
            assert msg["delivered"] == delivered


def test_alignment_metrics_count_aligned_events():
    record = run(config_with("two_agent.json", _forced("Align", steps=4)))
    for aid in ("alpha", "beta"):
        summary = record.metrics["agents"][aid]["alignment"]
        assert summary["count"] == 4
        assert sum(summary["classes"].values()) == 4
        assert summary["max_delta_I"] >= summary["mean_delta_I"] - 1e-12


def test_agent_streams_ignore_creation_order():
    a = RunStreams(5)
    a.agent("x")
    first = a.agent("y").random(3)
    second = RunStreams(5).agent("y").random(3)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(RunStreams(5).world.random(3), RunStreams(5).agent("world").random(3))


def test_adding_a_suspended_agent_keeps_the_others_streams():
    def with_third(doc):
        _forced("Suspend", steps=10)(doc)
        doc["agents"].append({"id": "gamma", "force_plan": "Suspend"})

    pair = run(config_with("two_agent.json", _forced("Suspend", steps=10)))
    trio = run(config_with("two_agent.json", with_third))
    for aid in ("alpha", "beta"):
        assert [ev["fired"] for ev in pair.events if ev["agent"] == aid] == \
               [ev["fired"] for ev in trio.events if ev["agent"] == aid]
    assert [ev["observation"] for ev in pair.events if ev["agent"] == "alpha"] == \
           [ev["observation"] for ev in trio.events if ev["agent"] == "alpha"]


def test_module_errors_are_wrapped_with_step_and_agent():
    cfg = config_with("two_agent.json", _forced("Align", steps=2, exhaustive_cap=1))
    with pytest.raises(StepError) as err:
        run(cfg)
    assert err.value.step == 0
    assert err.value.agent == "alpha"


def test_build_states_share_candidates():
    cfg = config_with("two_agent.json")
    states = build_states(cfg, {})
    assert sorted(states) == ["alpha", "beta"]
    assert states["alpha"].space.get("A/first/fine") is states["beta"].space.get("A/first/fine")
    assert len(states["alpha"].pool) == 12


def test_curves_are_sorted_series():
    record = run(config_with("two_agent.json", _set(steps=5)))
    rows = curves(record)
    assert rows == sorted(rows, key=lambda row: (row[0], row[1]))
    series = {row[0] for row in rows}
    assert {"intensity/alpha", "intensity/beta", "error/alpha", "error/beta"} <= series
    assert sum(1 for row in rows if row[0] == "intensity/alpha") == 5


def test_fired_histogram():
    events = [{"fired": "a"}, {"fired": "a"}, {"fired": "b"}, {"fired": "a"}]
    assert fired_histogram(events, ["a", "b", "c"]) == {"a": 0.75, "b": 0.25, "c": 0.0}
    assert fired_histogram([], ["a"]) == {"a": 0.0}
