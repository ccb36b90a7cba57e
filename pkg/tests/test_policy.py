from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slicenego.policy import (
    Agent,
    Evaluation,
    Limits,
    ResourcePool,
    RiskAssessment,
    SearchParams,
    SliceSpec,
    Strategy,
    assess_stats,
    dissatisfaction,
    downward_search,
    score_proposal,
    select_best,
    upward_search,
)
from slicenego.power import PowerParams, power_w
from slicenego.risk import TailStats
from slicenego.twin import Action, ArrivalProcess, DigitalTwin, QueueState, SystemConstants


def stats(mean=5.0, std=0.0, cvar=None, alpha=0.99999):
    cvar = mean if cvar is None else cvar
    return TailStats(mean_ms=mean, std_ms=std, var_alpha_ms=cvar, cvar_alpha_ms=cvar, alpha=alpha)


def spec(strategy="unbiased", sla=10.0, theta=0.6):
    return SliceSpec("x", sla, strategy, theta)


def test_dynamic_target_example():
    a = assess_stats(stats(mean=10.0, std=2.0, cvar=5.0), spec(sla=10.0))
    assert a.confidence == pytest.approx(0.8)
    assert a.dynamic_target_ms == pytest.approx(8.0)


def test_unbiased_overprovisioned_example():
    a = assess_stats(stats(mean=16.9, cvar=16.9), spec(sla=50.0, theta=0.6))
    assert (a.sla_met, a.over_provisioned, a.satisfied) == (True, True, False)


def test_unbiased_violation_example():
    a = assess_stats(stats(mean=11.2, cvar=11.2), spec(sla=10.0))
    assert (a.sla_met, a.satisfied) == (False, False)


def test_biased_uses_mean():
    a = assess_stats(stats(mean=8.0, std=6.0, cvar=30.0), spec("biased", sla=10.0, theta=0.7))
    assert (a.sla_met, a.over_provisioned, a.satisfied) == (True, False, True)
    assert a.dynamic_target_ms == 10.0 and a.decision_metric_ms == 8.0
    assert a.confidence == pytest.approx(0.25)


def test_bias_exposure_fixture():
    s = stats(mean=9.0, std=0.9, cvar=12.0)
    assert assess_stats(s, spec("biased", theta=0.7)).satisfied
    assert not assess_stats(s, spec("unbiased", theta=0.6)).satisfied


@given(st.floats(0.1, 100), st.floats(0, 1), st.floats(0.5, 200), st.floats(0.05, 0.95))
def test_satisfaction_structure(mean, cv, cvar, theta):
    for strat in Strategy:
        a = assess_stats(stats(mean, mean * cv, cvar), SliceSpec("x", 20.0, strat, theta))
        assert a.satisfied == (a.sla_met and not a.over_provisioned)
        if strat is Strategy.UNBIASED:
            assert a.dynamic_target_ms == pytest.approx(20.0 * a.confidence)
            if a.satisfied:
                assert a.decision_metric_ms <= a.dynamic_target_ms <= 20.0
        else:
            assert a.dynamic_target_ms == 20.0


@given(st.floats(0.5, 30), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_lower_confidence_tightens(cvar, cv1, cv2):
    lo, hi = sorted((cv1, cv2))
    confident = assess_stats(stats(10.0, 10.0 * lo, cvar), spec(sla=20.0))
    doubtful = assess_stats(stats(10.0, 10.0 * hi, cvar), spec(sla=20.0))
    assert doubtful.dynamic_target_ms <= confident.dynamic_target_ms
    assert doubtful.sla_met <= confident.sla_met
    assert doubtful.over_provisioned <= confident.over_provisioned


def test_scores():
    met = assess_stats(stats(5.0, cvar=5.0), spec(sla=10.0))
    assert score_proposal(met, 13.10) == pytest.approx(86.90)
    miss = assess_stats(stats(11.23, cvar=11.23), spec(sla=10.0))
    assert score_proposal(miss, 20.0) == pytest.approx(-1001.23)
    edge = RiskAssessment(stats(), 1.0, 10.0, False, False, False, 10.0)
    assert score_proposal(edge, 1.0) == -1000.0


def test_dissatisfaction_is_distance_to_band():
    over = assess_stats(stats(2.0, cvar=2.0), spec(sla=50.0, theta=0.6))
    assert dissatisfaction(over, 0.6) == pytest.approx(28.0)
    miss = assess_stats(stats(11.2, cvar=11.2), spec(sla=10.0))
    assert dissatisfaction(miss, 0.6) == pytest.approx(1.2)
    ok = assess_stats(stats(8.0, cvar=8.0), spec(sla=10.0))
    assert dissatisfaction(ok, 0.6) == 0.0


def test_bottleneck_ties_go_to_radio():
    a = RiskAssessment(stats(), 1.0, 10.0, True, False, True, 1.0, compute_latency_ms=2.0, radio_latency_ms=2.0)
    assert a.bottleneck == "radio"
    b = RiskAssessment(stats(), 1.0, 10.0, True, False, True, 1.0, compute_latency_ms=2.1, radio_latency_ms=2.0)
    assert b.bottleneck == "compute"


def test_select_best_prefers_first_on_tie():
    a = assess_stats(stats(5.0), spec())
    e1, e2 = Evaluation(Action(1, 1), a, 5.0, 90.0), Evaluation(Action(2, 2), a, 5.0, 90.0)
    assert select_best([e1, e2]) is e1


def test_pool_and_limits():
    pool = ResourcePool()
    lim = pool.residual(Action(14, 4))
    assert (lim.bandwidth_mhz, lim.cpu_ghz) == (26.0, 36.0)
    clamped, flag = Limits(26, 36).clamp(Action(999, 5))
    assert (clamped.as_tuple(), flag) == ((26.0, 5.0), True)
    assert pool.residual(Action(40, 10)).degenerate
    with pytest.raises(ValueError):
        ResourcePool(0, 10)


# -- searches against a small twin -------------------------------------------


@pytest.fixture
def urllc_agent():
    consts = SystemConstants(n_mc=3000)
    twin = DigitalTwin(ArrivalProcess(60.0, jitter=0.0), consts)
    return Agent(SliceSpec("URLLC", 10.0, "unbiased", 0.6), twin)


def test_upward_search_fixes_violation(urllc_agent):
    start = urllc_agent.evaluate(Action(10, 8), QueueState(), 1)
    assert not start.assessment.sla_met
    res = upward_search(start, QueueState(), urllc_agent, Limits(40, 40), 1)
    assert res.stop_reason == "sla_met" and res.evaluation.assessment.sla_met
    assert power_w(res.action, PowerParams()) >= start.power_w
    assert len(res.attempts) <= urllc_agent.search.max_search_iters


def test_upward_search_already_met_is_noop(urllc_agent):
    start = urllc_agent.evaluate(Action(20, 20), QueueState(), 1)
    res = upward_search(start, QueueState(), urllc_agent, Limits(40, 40), 1)
    assert res.action == start.action and res.attempts == []


def test_upward_search_exhausted_pool(urllc_agent):
    start = urllc_agent.evaluate(Action(10, 8), QueueState(), 1)
    res = upward_search(start, QueueState(), urllc_agent, Limits(10, 8), 1)
    assert res.stop_reason == "pool_exhausted" and res.attempts == []


def test_upward_search_iteration_cap(urllc_agent):
    urllc_agent.search = SearchParams(0.01, 0.01, 3)
    start = urllc_agent.evaluate(Action(10, 8), QueueState(), 1)
    res = upward_search(start, QueueState(), urllc_agent, Limits(40, 40), 1)
    assert res.stop_reason == "iteration_cap" and len(res.attempts) == 3


def test_downward_search_never_breaks_sla(urllc_agent):
    start = urllc_agent.evaluate(Action(30, 30), QueueState(), 2)
    assert start.assessment.over_provisioned
    res = downward_search(start, QueueState(), urllc_agent, 2)
    assert res.evaluation.assessment.sla_met
    assert res.evaluation.power_w <= start.power_w
    assert res.stop_reason in {"not_over_provisioned", "would_violate", "floor", "iteration_cap"}
    if res.stop_reason == "would_violate":
        assert not res.attempts[-1].assessment.sla_met
        assert res.attempts[-1].action != res.action


def test_downward_search_at_floor(urllc_agent):
    urllc_agent.search = SearchParams(1.0, 2.0, 20)
    start = urllc_agent.evaluate(Action(1.0, 2.0), QueueState(), 2)
    res = downward_search(start, QueueState(), urllc_agent, 2)
    assert res.action == start.action
