"""Discrete-time edge -> RAN queuing model and the per-agent digital twin.

All accounting is in bits and slots. Unit conversions (MHz -> Hz,
GHz x Mbit/s-per-GHz -> bit/s) happen only in :class:`SystemConstants`.

Slot update, with arrivals ``A``, edge service ``De = tau*f*cpu_rate`` and
RAN service ``Dr = tau*b*SE``::

    edge_out = min(Qe + A, De)
    Qe'      = Qe + A - edge_out          # == max(0, Qe + A - De)
    Qr'      = max(0, Qr - Dr) + edge_out

so every arriving bit is either still queued or has left the RAN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernel import poisson_arrivals, rollout_backlog_sums
from .risk import SampleSet, TailStats, summarize


class ContractViolation(ValueError):
    """Raised when a queue-model input breaks its documented contract."""


class UndefinedLatencyError(ValueError):
    """Little's law needs a strictly positive mean arrival rate."""


def _finite_nonneg(name: str, value: float) -> None:
    if not (math.isfinite(value) and value >= 0.0):
        raise ContractViolation(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class SystemConstants:
    tau_s: float = 1e-3
    cpu_rate_mbps_per_ghz: float = 10.0
    se_min: float = 5.0
    se_max: float = 7.0
    horizon_T: int = 50
    n_mc: int = 100_000
    # slots rolled before the measured window so predictions start from a loaded queue
    warmup_slots: int = 50

    def __post_init__(self) -> None:
        if not self.tau_s > 0:
            raise ValueError("tau_s must be > 0")
        if not self.cpu_rate_mbps_per_ghz > 0:
            raise ValueError("cpu_rate_mbps_per_ghz must be > 0")
        if not (0 < self.se_min <= self.se_max):
            raise ValueError("need 0 < se_min <= se_max")
        if self.horizon_T < 1 or self.n_mc < 1 or self.warmup_slots < 0:
            raise ValueError("horizon_T >= 1, n_mc >= 1 and warmup_slots >= 0 required")

    def edge_service_bits(self, cpu_ghz: float) -> float:
        return self.tau_s * cpu_ghz * self.cpu_rate_mbps_per_ghz * 1e6

    def ran_bits_per_se(self, bandwidth_mhz: float) -> float:
        return self.tau_s * bandwidth_mhz * 1e6

    def ran_service_bits(self, bandwidth_mhz: float, se: float) -> float:
        return self.ran_bits_per_se(bandwidth_mhz) * se

    def bits_per_slot(self, rate_mbps: float) -> float:
        return rate_mbps * 1e6 * self.tau_s

    def slots_to_ms(self, slots: float) -> float:
        return slots * self.tau_s * 1e3


@dataclass(frozen=True)
class Action:
    bandwidth_mhz: float
    cpu_ghz: float

    def __post_init__(self) -> None:
        _finite_nonneg("bandwidth_mhz", self.bandwidth_mhz)
        _finite_nonneg("cpu_ghz", self.cpu_ghz)

    def as_tuple(self) -> tuple[float, float]:
        return (self.bandwidth_mhz, self.cpu_ghz)

    def __str__(self) -> str:
        return f"({self.bandwidth_mhz:.2f}M, {self.cpu_ghz:.2f}G)"


@dataclass(frozen=True)
class QueueState:
    edge_bits: float = 0.0
    ran_bits: float = 0.0
    slot_index: int = 0

    def __post_init__(self) -> None:
        _finite_nonneg("edge_bits", self.edge_bits)
        _finite_nonneg("ran_bits", self.ran_bits)

    @property
    def total_bits(self) -> float:
        return self.edge_bits + self.ran_bits


@dataclass(frozen=True)
class ArrivalProcess:
    """Per-slice bit arrivals: sinusoidal mean rate with Poisson packet counts.

    ``jitter`` is the half-width of the per-trial uniform scaling of the base
    rate; :meth:`with_jitter` draws it and returns the trial's own process.
    With ``bursty=False`` each slot carries exactly its mean bits.
    """

    mean_rate_mbps: float
    amplitude: float = 0.2
    period_slots: int = 200
    jitter: float = 0.1
    packet_bits: float = 12_000.0
    bursty: bool = True

    def __post_init__(self) -> None:
        if not self.mean_rate_mbps > 0:
            raise ValueError("mean_rate_mbps must be > 0")
        if not (0 <= self.amplitude < 1):
            raise ValueError("amplitude must lie in [0, 1) so the rate stays >= 0")
        if not (0 <= self.jitter < 1):
            raise ValueError("jitter must lie in [0, 1)")
        if self.period_slots < 1 or not self.packet_bits > 0:
            raise ValueError("period_slots >= 1 and packet_bits > 0 required")

    @property
    def peak_rate_mbps(self) -> float:
        return self.mean_rate_mbps * (1 + self.amplitude) * (1 + self.jitter)

    def rate_profile_mbps(self) -> np.ndarray:
        t = np.arange(self.period_slots)
        return self.mean_rate_mbps * (1.0 + self.amplitude * np.sin(2 * np.pi * t / self.period_slots))

    def bits_profile(self, tau_s: float) -> np.ndarray:
        return self.rate_profile_mbps() * 1e6 * tau_s

    def mean_bits_per_slot(self, tau_s: float) -> float:
        return self.mean_rate_mbps * 1e6 * tau_s

    def with_jitter(self, rng: np.random.Generator) -> ArrivalProcess:
        scale = rng.uniform(1 - self.jitter, 1 + self.jitter) if self.jitter else 1.0
        return replace(self, mean_rate_mbps=self.mean_rate_mbps * scale, jitter=0.0)

    def packet_cdf(self, tau_s: float) -> np.ndarray:
        """Poisson CDF of packets per slot, one row per phase of the period."""
        lam = self.bits_profile(tau_s) / self.packet_bits
        lam_max = float(lam.max())
        if lam_max > 600:
            raise ValueError("packet rate too high for the Poisson table; raise packet_bits")
        cmax = int(lam_max + 12 * math.sqrt(lam_max) + 25)
        pmf = np.empty((lam.size, cmax))
        pmf[:, 0] = np.exp(-lam)
        for c in range(1, cmax):
            pmf[:, c] = pmf[:, c - 1] * lam / c
        cdf = np.cumsum(pmf, axis=1)
        cdf[:, -1] = 1.0
        return cdf

    def sample_bits(self, rng: np.random.Generator, n_slots: int, tau_s: float, phase: int = 0) -> np.ndarray:
        idx = (phase + np.arange(n_slots)) % self.period_slots
        mean_bits = self.bits_profile(tau_s)[idx]
        if not self.bursty:
            return mean_bits
        return rng.poisson(mean_bits / self.packet_bits).astype(np.float64) * self.packet_bits

    def check_stable(self, capacity_mbps: float) -> None:
        if self.mean_rate_mbps * (1 + self.jitter) >= capacity_mbps:
            raise ValueError(
                f"mean arrival rate {self.mean_rate_mbps} Mbit/s (+{self.jitter:.0%} jitter) "
                f"is not below the service capacity {capacity_mbps:.1f} Mbit/s"
            )


@dataclass(frozen=True)
class LatencyDistribution:
    samples: SampleSet
    compute_latency_samples: np.ndarray
    radio_latency_samples: np.ndarray
    stats: TailStats

    @property
    def compute_latency_ms(self) -> float:
        return float(self.compute_latency_samples.mean())

    @property
    def radio_latency_ms(self) -> float:
        return float(self.radio_latency_samples.mean())

    def __len__(self) -> int:
        return len(self.samples)


def step_queues(
    state: QueueState,
    action: Action,
    arrivals_bits: float,
    se_bps_per_hz: float,
    consts: SystemConstants,
) -> QueueState:
    _finite_nonneg("arrivals_bits", arrivals_bits)
    if not (consts.se_min - 1e-12 <= se_bps_per_hz <= consts.se_max + 1e-12):
        raise ContractViolation(f"SE {se_bps_per_hz} outside [{consts.se_min}, {consts.se_max}]")
    de = consts.edge_service_bits(action.cpu_ghz)
    dr = consts.ran_service_bits(action.bandwidth_mhz, se_bps_per_hz)
    s = state.edge_bits + arrivals_bits
    out = min(s, de)
    return QueueState(
        edge_bits=s - out,
        ran_bits=max(state.ran_bits - dr, 0.0) + out,
        slot_index=state.slot_index + 1,
    )


def measure_latency(trajectory, mean_arrival_bits_per_slot: float, consts: SystemConstants) -> float:
    """Little's-law average latency (ms) over a ``horizon_T``-slot trajectory."""
    if len(trajectory) != consts.horizon_T:
        raise ContractViolation(f"trajectory length {len(trajectory)} != horizon_T {consts.horizon_T}")
    if not mean_arrival_bits_per_slot > 0:
        raise UndefinedLatencyError("mean arrival must be > 0 bits/slot")
    total = sum(q.edge_bits + q.ran_bits for q in trajectory)
    return consts.slots_to_ms(total / (mean_arrival_bits_per_slot * consts.horizon_T))


def window_latencies(backlog_bits: np.ndarray, mean_arrival_bits_per_slot: float, consts: SystemConstants) -> np.ndarray:
    """Little's-law latency (ms) of every length-``horizon_T`` sliding window."""
    if not mean_arrival_bits_per_slot > 0:
        raise UndefinedLatencyError("mean arrival must be > 0 bits/slot")
    T = consts.horizon_T
    backlog = np.asarray(backlog_bits, dtype=np.float64)
    if backlog.size < T:
        return np.empty(0)
    csum = np.concatenate(([0.0], np.cumsum(backlog)))
    sums = csum[T:] - csum[:-T]
    return sums / (mean_arrival_bits_per_slot * T) * consts.tau_s * 1e3


@dataclass(frozen=True)
class RolloutBank:
    """Common random numbers for Monte Carlo predictions.

    Arrivals do not depend on the action, so every prediction drawn from the
    same bank sees identical phases, per-slot arrival bits and SE uniforms.
    That pairing makes candidate comparisons pathwise.
    """

    phases: np.ndarray
    arrivals_bits: np.ndarray
    u_se: np.ndarray

    @property
    def n(self) -> int:
        return int(self.arrivals_bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.arrivals_bits.shape[1])


def draw_bank(rng_stream, forecast: ArrivalProcess, consts: SystemConstants, n: int | None = None) -> RolloutBank:
    rng = _as_rng(rng_stream)
    n = consts.n_mc if n is None else n
    width = consts.warmup_slots + consts.horizon_T
    # fixed draw order: phases, arrival uniforms, SE uniforms
    phases = rng.integers(0, forecast.period_slots, size=n)
    u_arrival = rng.random((n, width), dtype=np.float32)
    u_se = rng.random((n, width), dtype=np.float32)
    tau = consts.tau_s
    if forecast.bursty:
        arrivals = poisson_arrivals(phases, u_arrival, forecast.packet_cdf(tau), float(forecast.packet_bits))
    else:
        profile = forecast.bits_profile(tau)
        arrivals = profile[(phases[:, None] + np.arange(width)[None, :]) % forecast.period_slots]
    return RolloutBank(phases, arrivals, u_se)


def _as_rng(rng_stream) -> np.random.Generator:
    if isinstance(rng_stream, np.random.Generator):
        return rng_stream
    return np.random.default_rng(rng_stream)


def evaluate_bank(
    bank: RolloutBank,
    state: QueueState,
    action: Action,
    forecast: ArrivalProcess,
    consts: SystemConstants,
    alpha: float = 0.99999,
) -> LatencyDistribution:
    sum_e, sum_r = rollout_backlog_sums(
        float(state.edge_bits),
        float(state.ran_bits),
        bank.arrivals_bits,
        bank.u_se,
        consts.edge_service_bits(action.cpu_ghz),
        consts.ran_bits_per_se(action.bandwidth_mhz),
        float(consts.se_min),
        float(consts.se_max - consts.se_min),
        consts.warmup_slots,
    )
    tau, T = consts.tau_s, consts.horizon_T
    scale = tau * 1e3 / (forecast.mean_bits_per_slot(tau) * T)
    compute = sum_e * scale
    radio = sum_r * scale
    samples = SampleSet(compute + radio)
    return LatencyDistribution(
        samples=samples,
        compute_latency_samples=compute,
        radio_latency_samples=radio,
        stats=summarize(samples, alpha),
    )


def predict_distribution(
    state: QueueState,
    action: Action,
    arrival_forecast: ArrivalProcess,
    consts: SystemConstants,
    rng_stream,
    alpha: float = 0.99999,
) -> LatencyDistribution:
    """Monte Carlo latency distribution of ``action`` starting from ``state``.

    Each of the ``n_mc`` samples draws a random phase of the arrival profile,
    per-slot packet counts and per-slot SE ~ U[se_min, se_max], rolls
    ``warmup_slots + horizon_T`` slots and applies Little's law to the last
    ``horizon_T``. The edge and RAN backlog sums give the compute and radio
    latency components whose sum is the end-to-end sample.
    """
    bank = draw_bank(rng_stream, arrival_forecast, consts)
    return evaluate_bank(bank, state, action, arrival_forecast, consts, alpha)


@dataclass
class DigitalTwin:
    """An agent's private predictive model.

    Predictions that pass the same ``seed`` reuse one rollout bank, so a
    search over candidate actions is evaluated on common random numbers.
    """

    forecast: ArrivalProcess
    consts: SystemConstants
    alpha: float = 0.99999
    calls: int = field(default=0, init=False)
    _bank_seed: object = field(default=None, init=False, repr=False)
    _bank: RolloutBank | None = field(default=None, init=False, repr=False)

    def bank(self, seed) -> RolloutBank:
        if self._bank is None or self._bank_seed != seed:
            self._bank = draw_bank(np.random.default_rng(seed), self.forecast, self.consts)
            self._bank_seed = seed
        return self._bank

    def predict(self, state: QueueState, action: Action, seed) -> LatencyDistribution:
        self.calls += 1
        return evaluate_bank(self.bank(seed), state, action, self.forecast, self.consts, self.alpha)


@dataclass(frozen=True)
class WorldTrace:
    """Ground-truth per-slot record of one slice under a fixed allocation."""

    arrivals_bits: np.ndarray
    se: np.ndarray
    edge_bits: np.ndarray
    ran_bits: np.ndarray
    ran_departures_bits: np.ndarray

    @property
    def backlog_bits(self) -> np.ndarray:
        return self.edge_bits + self.ran_bits


def simulate_world(
    state: QueueState,
    action: Action,
    arrivals_bits: np.ndarray,
    se: np.ndarray,
    consts: SystemConstants,
) -> WorldTrace:
    """Roll the queue model over given arrival and SE traces."""
    n = len(arrivals_bits)
    edge = np.empty(n)
    ran = np.empty(n)
    dep = np.empty(n)
    q = state
    for t in range(n):
        dep[t] = min(q.ran_bits, consts.ran_service_bits(action.bandwidth_mhz, float(se[t])))
        q = step_queues(q, action, float(arrivals_bits[t]), float(se[t]), consts)
        edge[t] = q.edge_bits
        ran[t] = q.ran_bits
    return WorldTrace(np.asarray(arrivals_bits, dtype=np.float64), np.asarray(se, dtype=np.float64), edge, ran, dep)
