from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rollout_sums_reference
from slicenego.twin import (
    Action,
    ArrivalProcess,
    ContractViolation,
    DigitalTwin,
    QueueState,
    SystemConstants,
    UndefinedLatencyError,
    draw_bank,
    evaluate_bank,
    measure_latency,
    predict_distribution,
    simulate_world,
    step_queues,
    window_latencies,
)

C = SystemConstants()


def test_service_quanta():
    assert C.ran_service_bits(16, 6.0) == pytest.approx(96_000)
    assert C.edge_service_bits(13) == pytest.approx(130_000)


def test_empty_system_stays_empty():
    assert step_queues(QueueState(), Action(10, 10), 0.0, 6.0, C).total_bits == 0.0


def test_one_slot_passes_arrivals_to_ran():
    lam = 50_000.0
    q = step_queues(QueueState(), Action(20, 20), lam, 6.0, C)
    assert (q.edge_bits, q.ran_bits, q.slot_index) == (0.0, lam, 1)


def test_edge_overflow_stays_at_edge():
    q = step_queues(QueueState(), Action(20, 1), 25_000.0, 6.0, C)
    assert (q.edge_bits, q.ran_bits) == (15_000.0, 10_000.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(arrivals_bits=-1.0, se_bps_per_hz=6.0), dict(arrivals_bits=1.0, se_bps_per_hz=4.0),
     dict(arrivals_bits=float("nan"), se_bps_per_hz=6.0)],
)
def test_step_contract(kwargs):
    with pytest.raises(ContractViolation):
        step_queues(QueueState(), Action(1, 1), consts=C, **kwargs)


def test_negative_inputs_rejected():
    with pytest.raises(ContractViolation):
        Action(-1, 1)
    with pytest.raises(ContractViolation):
        QueueState(edge_bits=-5)


def test_measure_latency_examples():
    consts = SystemConstants(horizon_T=4)
    assert measure_latency([QueueState()] * 4, 1000.0, consts) == 0.0
    traj = [QueueState(600.0, 400.0)] * 4
    assert measure_latency(traj, 1000.0, consts) == pytest.approx(1.0)
    doubled = [QueueState(1200.0, 800.0)] * 4
    assert measure_latency(doubled, 1000.0, consts) == pytest.approx(2.0)
    with pytest.raises(UndefinedLatencyError):
        measure_latency(traj, 0.0, consts)
    with pytest.raises(ContractViolation):
        measure_latency(traj[:3], 1000.0, consts)


def test_window_latencies_match_measure_latency():
    consts = SystemConstants(horizon_T=5)
    rng = np.random.default_rng(1)
    backlog = rng.uniform(0, 1e5, size=23)
    w = window_latencies(backlog, 3e4, consts)
    assert len(w) == 19
    for i in (0, 7, 18):
        traj = [QueueState(b, 0.0) for b in backlog[i : i + 5]]
        assert w[i] == pytest.approx(measure_latency(traj, 3e4, consts))


def _random_run(seed: int, n: int = 10_000):
    rng = np.random.default_rng(seed)
    action = Action(rng.uniform(1, 40), rng.uniform(1, 40))
    load = rng.uniform(0.2, 1.5) * min(C.edge_service_bits(action.cpu_ghz), C.ran_bits_per_se(action.bandwidth_mhz) * 5)
    arrivals = rng.poisson(load / 12000, size=n) * 12000.0
    se = rng.uniform(5, 7, size=n)
    init = QueueState(rng.uniform(0, 1e5), rng.uniform(0, 1e5))
    return init, action, arrivals, se


@pytest.mark.parametrize("seed", range(100))
def test_conservation(seed):
    init, action, arrivals, se = _random_run(seed)
    tr = simulate_world(init, action, arrivals, se, C)
    lhs = arrivals.sum()
    rhs = tr.ran_departures_bits.sum() + tr.edge_bits[-1] + tr.ran_bits[-1] - init.total_bits
    assert abs(lhs - rhs) <= 1e-9 * max(lhs, 1.0)
    assert (tr.edge_bits >= 0).all() and (tr.ran_bits >= 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1, 20), st.floats(1, 20))
def test_monotone_in_resources(seed, extra_b, extra_f):
    init, action, arrivals, se = _random_run(seed, 300)
    base = simulate_world(init, action, arrivals, se, C)
    more_f = simulate_world(init, Action(action.bandwidth_mhz, action.cpu_ghz + extra_f), arrivals, se, C)
    assert (more_f.edge_bits <= base.edge_bits + 1e-6).all()
    more_b = simulate_world(init, Action(action.bandwidth_mhz + extra_b, action.cpu_ghz), arrivals, se, C)
    assert (more_b.ran_bits <= base.ran_bits + 1e-6).all()


def test_stability_backlog_bounded():
    rng = np.random.default_rng(3)
    proc = ArrivalProcess(60.0, jitter=0.0)
    n = 10_000
    arrivals = proc.sample_bits(rng, n, C.tau_s)
    se = rng.uniform(5, 7, size=n)
    tr = simulate_world(QueueState(), Action(15, 10), arrivals, se, C)
    first, second = tr.backlog_bits[: n // 2].mean(), tr.backlog_bits[n // 2 :].mean()
    assert second <= 1.2 * first


def test_unstable_rate_rejected():
    with pytest.raises(ValueError):
        ArrivalProcess(100.0, jitter=0.1).check_stable(100.0)


def test_arrival_profile_nonnegative_and_mean():
    proc = ArrivalProcess(90.0)
    prof = proc.rate_profile_mbps()
    assert (prof >= 0).all()
    assert prof.mean() == pytest.approx(90.0)


def test_jitter_within_band():
    proc = ArrivalProcess(100.0, jitter=0.1)
    for s in range(50):
        j = proc.with_jitter(np.random.default_rng(s))
        assert 90.0 <= j.mean_rate_mbps <= 110.0 and j.jitter == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_kernel_matches_step_queues(seed, small_consts):
    proc = ArrivalProcess(40.0)
    bank = draw_bank(np.random.default_rng(seed), proc, small_consts, n=6)
    init = QueueState(2e4, 1e4)
    action = Action(7.0, 4.5)
    dist = evaluate_bank(bank, init, action, proc, small_consts)
    scale = small_consts.tau_s * 1e3 / (proc.mean_bits_per_slot(small_consts.tau_s) * small_consts.horizon_T)
    for k in range(bank.n):
        e, r = rollout_sums_reference(init, action, bank.arrivals_bits[k], bank.u_se[k], small_consts)
        assert dist.compute_latency_samples[k] == pytest.approx(e * scale, rel=1e-12, abs=1e-12)
        assert dist.radio_latency_samples[k] == pytest.approx(r * scale, rel=1e-12, abs=1e-12)


def test_bank_arrivals_are_poisson_packets(small_consts):
    proc = ArrivalProcess(60.0, amplitude=0.0)
    bank = draw_bank(np.random.default_rng(0), proc, small_consts)
    a = bank.arrivals_bits
    assert np.all(a % proc.packet_bits == 0)
    assert a.mean() == pytest.approx(proc.mean_bits_per_slot(small_consts.tau_s), rel=0.02)
    assert (a / proc.packet_bits).var() == pytest.approx(5.0, rel=0.05)


def test_prediction_is_deterministic_and_decomposes(small_consts):
    proc = ArrivalProcess(50.0)
    a = predict_distribution(QueueState(), Action(12, 7), proc, small_consts, 11)
    b = predict_distribution(QueueState(), Action(12, 7), proc, small_consts, 11)
    assert np.array_equal(a.samples.values, b.samples.values)
    assert len(a) == small_consts.n_mc
    assert np.allclose(a.samples.values, a.compute_latency_samples + a.radio_latency_samples)


def test_frozen_se_and_flat_arrivals_give_point_mass(small_consts):
    consts = SystemConstants(se_min=6.0, se_max=6.0, n_mc=500)
    proc = ArrivalProcess(50.0, amplitude=0.0, bursty=False)
    d = predict_distribution(QueueState(), Action(12, 7), proc, consts, 0)
    assert d.stats.std_ms == 0.0
    assert d.stats.mean_ms == d.stats.cvar_alpha_ms


def test_larger_action_dominates(small_consts):
    proc = ArrivalProcess(60.0)
    small = predict_distribution(QueueState(), Action(11, 7), proc, small_consts, 5)
    big = predict_distribution(QueueState(), Action(13, 9), proc, small_consts, 5)
    assert np.all(big.samples.sorted <= small.samples.sorted + 1e-12)


def test_confidence_falls_with_load(small_consts):
    ces = []
    for rate in (20.0, 50.0, 65.0):
        twin = DigitalTwin(ArrivalProcess(rate, jitter=0.0), small_consts)
        s = twin.predict(QueueState(), Action(14, 8), 3).stats
        ces.append(1 - s.std_ms / s.mean_ms)
    assert 0.7 < ces[0] <= 1.0
    assert ces[0] > ces[1] > ces[2]


def test_twin_caches_bank_per_seed(small_consts):
    twin = DigitalTwin(ArrivalProcess(30.0), small_consts)
    b1 = twin.bank((1, 2))
    assert twin.bank((1, 2)) is b1
    assert twin.bank((1, 3)) is not b1
    twin.predict(QueueState(), Action(10, 10), 0)
    assert twin.calls == 1
