"""Experiment runner: paired biased/unbiased trials, ground-truth evaluation, outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .negotiation import NegotiationAborted, Participant, Status, Transcript, prop_fair_split, run_negotiation
from .policy import Agent, ResourcePool, ScoreParams, SearchParams, SliceSpec, Strategy
from .power import PowerParams, energy_saving_fraction
from .proposer import HeuristicProposer, RemoteProposer, ReplayProposer
from .risk import EstimatorDomainError, SampleSet, empirical_var
from .twin import Action, ArrivalProcess, DigitalTwin, QueueState, SystemConstants, simulate_world, window_latencies

log = logging.getLogger(__name__)

OUTPUT_SCHEMA_VERSION = 1
STRATEGIES = (Strategy.BIASED, Strategy.UNBIASED)

# second component of non-twin seed keys, so streams never collide
_JITTER_STREAM = 1001
_WORLD_STREAM = 1002


@dataclass(frozen=True)
class SliceConfig:
    name: str
    sla_ms: float
    arrival: ArrivalProcess


@dataclass(frozen=True)
class ProposerConfig:
    backend: str = "heuristic"  # heuristic | replay | remote
    replay_path: str | None = None
    up_factor: float = 1.15
    down_factor: float = 0.85
    timeout_s: float = 10.0

    @classmethod
    def parse(cls, spec: str, base: ProposerConfig | None = None) -> ProposerConfig:
        """``heuristic``, ``remote`` or ``replay:<path>``."""
        base = base or cls()
        if spec in ("heuristic", "remote"):
            return replace(base, backend=spec, replay_path=None)
        if spec.startswith("replay:") and len(spec) > len("replay:"):
            return replace(base, backend="replay", replay_path=spec[len("replay:"):])
        raise ValueError(f"unknown proposer {spec!r}; use heuristic, remote or replay:<path>")


def _default_slices() -> tuple[SliceConfig, ...]:
    return (
        SliceConfig("eMBB", 50.0, ArrivalProcess(90.0)),
        SliceConfig("URLLC", 10.0, ArrivalProcess(30.0)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    n_trials: int = 20
    n_rounds: int = 5
    master_seed: int = 2026
    strategies: tuple[Strategy, ...] = STRATEGIES
    alpha: float = 0.99999
    theta: dict[str, float] = field(default_factory=lambda: {"biased": 0.7, "unbiased": 0.6})
    eval_slots: int = 1000
    workers: int = 1
    pool: ResourcePool = field(default_factory=ResourcePool)
    system: SystemConstants = field(default_factory=SystemConstants)
    power: PowerParams = field(default_factory=PowerParams)
    search: SearchParams = field(default_factory=SearchParams)
    scoring: ScoreParams = field(default_factory=ScoreParams)
    slices: tuple[SliceConfig, ...] = field(default_factory=_default_slices)
    initial_allocations: dict[str, tuple[float, float]] | None = None
    proposer: ProposerConfig = field(default_factory=ProposerConfig)
    output_dir: str = "results"

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategies", tuple(Strategy(s) for s in self.strategies))
        if self.n_trials < 1 or self.n_rounds < 1 or self.eval_slots < self.system.horizon_T or self.workers < 1:
            raise ValueError("need n_trials >= 1, n_rounds >= 1, workers >= 1 and eval_slots >= horizon_T")
        if len(self.slices) != 2 or self.slices[0].name == self.slices[1].name:
            raise ValueError("exactly two slices with distinct names are required")
        for s in Strategy:
            th = self.theta.get(s.value)
            if th is None or not 0 < th < 1:
                raise ValueError(f"theta.{s.value} must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        capacity = min(
            self.pool.f_total_ghz * self.system.cpu_rate_mbps_per_ghz,
            self.pool.b_total_mhz * self.system.se_min,
        )
        for sl in self.slices:
            if not sl.sla_ms > 0:
                raise ValueError(f"{sl.name}: sla_ms must be > 0")
            sl.arrival.check_stable(capacity)
        if self.initial_allocations is not None:
            if set(self.initial_allocations) != {s.name for s in self.slices}:
                raise ValueError("initial_allocations must name both slices")
        if self.proposer.backend == "replay" and not self.proposer.replay_path:
            raise ValueError("replay proposer needs replay_path")
        if self.proposer.backend not in ("heuristic", "replay", "remote"):
            raise ValueError(f"unknown proposer backend {self.proposer.backend!r}")

    def slice_spec(self, sl: SliceConfig, strategy: Strategy) -> SliceSpec:
        return SliceSpec(sl.name, sl.sla_ms, strategy, self.theta[strategy.value], self.alpha)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["strategies"] = [s.value for s in self.strategies]
        d["theta"] = dict(self.theta)
        for k in ("pool", "system", "power", "search", "scoring", "proposer"):
            d[k] = asdict(d[k])
        d["slices"] = [{"name": s.name, "sla_ms": s.sla_ms, "arrival": asdict(s.arrival)} for s in self.slices]
        if self.initial_allocations is not None:
            d["initial_allocations"] = {k: list(v) for k, v in self.initial_allocations.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        nested = {
            "pool": ResourcePool,
            "system": SystemConstants,
            "power": PowerParams,
            "search": SearchParams,
            "scoring": ScoreParams,
            "proposer": ProposerConfig,
        }
        for key, typ in nested.items():
            if key in d:
                d[key] = typ(**d[key])
        if "theta" in d:
            d["theta"] = {**{"biased": 0.7, "unbiased": 0.6}, **d["theta"]}
        if "strategies" in d:
            s = d["strategies"]
            d["strategies"] = tuple(Strategy) if s == "both" else tuple([s] if isinstance(s, str) else s)
        if "slices" in d:
            d["slices"] = tuple(
                SliceConfig(s["name"], float(s["sla_ms"]), ArrivalProcess(**s.get("arrival", {}))) for s in d["slices"]
            )
        if d.get("initial_allocations") is not None:
            d["initial_allocations"] = {k: (float(v[0]), float(v[1])) for k, v in d["initial_allocations"].items()}
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        cfg = cls.from_dict(doc)
        rp = cfg.proposer.replay_path
        if rp and not os.path.isabs(rp):
            # relative replay paths resolve against the config file
            cfg = replace(cfg, proposer=replace(cfg.proposer, replay_path=str(Path(path).parent / rp)))
        return cfg

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


@dataclass
class SliceOutcome:
    name: str
    final: Action
    baseline: Action
    energy_saving: float
    window_latency_ms: np.ndarray
    violated: bool
    commit_metric_ms: float | None = None
    commit_target_ms: float | None = None
    commit_satisfied: bool | None = None
    verify_sla_met: bool | None = None

    @property
    def max_latency_ms(self) -> float:
        return float(self.window_latency_ms.max()) if self.window_latency_ms.size else math.nan


@dataclass
class TrialResult:
    strategy: Strategy
    trial: int
    status: str
    rounds: int
    slices: dict[str, SliceOutcome]
    transcript: Transcript
    verified: bool | None = None
    error: str | None = None
    twin_calls: dict[str, int] = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.status == "aborted"

    @property
    def transcript_name(self) -> str:
        return f"{self.strategy.value}_trial{self.trial:03d}.jsonl"


def _make_proposer(cfg: ExperimentConfig):
    p = cfg.proposer
    heuristic = HeuristicProposer(p.up_factor, p.down_factor)
    if p.backend == "heuristic":
        return heuristic
    if p.backend == "replay":
        return ReplayProposer.from_transcript(p.replay_path, fallback=heuristic)
    return RemoteProposer.from_env(timeout_s=p.timeout_s, fallback=heuristic)


def trial_processes(cfg: ExperimentConfig, trial: int) -> list[ArrivalProcess]:
    """Each slice's arrival process for this trial, jitter applied. Strategy-independent."""
    return [
        sl.arrival.with_jitter(np.random.default_rng((cfg.master_seed, _JITTER_STREAM, trial, i)))
        for i, sl in enumerate(cfg.slices)
    ]


def world_traces(cfg: ExperimentConfig, trial: int, process: ArrivalProcess, index: int):
    """Ground-truth arrivals and SE over warm-up plus evaluation slots. Strategy-independent."""
    consts = cfg.system
    rng = np.random.default_rng((cfg.master_seed, _WORLD_STREAM, trial, index))
    n = consts.warmup_slots + cfg.eval_slots
    phase = int(rng.integers(0, process.period_slots))
    arrivals = process.sample_bits(rng, n, consts.tau_s, phase)
    se = rng.uniform(consts.se_min, consts.se_max, size=n)
    return arrivals, se


def run_trial(cfg: ExperimentConfig, strategy: Strategy, trial: int) -> TrialResult:
    strategy = Strategy(strategy)
    consts = cfg.system
    processes = trial_processes(cfg, trial)
    participants = [
        Participant(
            Agent(cfg.slice_spec(sl, strategy), DigitalTwin(proc, consts, cfg.alpha), cfg.power, cfg.search, cfg.scoring),
            _make_proposer(cfg),
        )
        for sl, proc in zip(cfg.slices, processes)
    ]
    names = [sl.name for sl in cfg.slices]
    if cfg.initial_allocations is not None:
        initial = {n: Action(*cfg.initial_allocations[n]) for n in names}
    else:
        initial = prop_fair_split(cfg.pool, names, [p.mean_rate_mbps for p in processes])

    header = {"strategy": strategy.value, "trial": trial, "master_seed": cfg.master_seed}
    try:
        neg, transcript = run_negotiation(
            participants, cfg.pool, cfg.n_rounds, (cfg.master_seed, trial), initial, QueueState(), header
        )
    except NegotiationAborted as exc:
        log.error("trial %d (%s) aborted: %s", trial, strategy.value, exc)
        return TrialResult(strategy, trial, "aborted", 0, {}, exc.transcript or Transcript(), error=str(exc))

    outcomes = {}
    for i, (sl, proc) in enumerate(zip(cfg.slices, processes)):
        final = neg.allocations[sl.name]
        arrivals, se = world_traces(cfg, trial, proc, i)
        trace = simulate_world(QueueState(), final, arrivals, se, consts)
        backlog = trace.backlog_bits[consts.warmup_slots:]
        lat = window_latencies(backlog, proc.mean_bits_per_slot(consts.tau_s), consts)
        out = SliceOutcome(
            sl.name,
            final,
            initial[sl.name],
            energy_saving_fraction(final, initial[sl.name], cfg.power),
            lat,
            bool((lat > sl.sla_ms).any()),
        )
        if neg.status is Status.CONSENSUS:
            a = neg.assessments[sl.name]
            out.commit_metric_ms = a.decision_metric_ms
            out.commit_target_ms = a.dynamic_target_ms
            out.commit_satisfied = a.satisfied
            out.verify_sla_met = neg.verification[sl.name].sla_met
        outcomes[sl.name] = out
    return TrialResult(
        strategy, trial, neg.status.value, neg.round, outcomes, transcript, neg.verified, twin_calls=neg.twin_calls
    )


def _run_one(args) -> TrialResult:
    cfg, strategy, trial = args
    return run_trial(cfg, strategy, trial)


def run_experiment(cfg: ExperimentConfig) -> list[TrialResult]:
    """All (strategy, trial) pairs, ordered by strategy then trial regardless of worker count."""
    jobs = [(cfg, s, k) for s in cfg.strategies for k in range(cfg.n_trials)]
    if cfg.workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_one, jobs))
    return sorted(results, key=lambda r: (cfg.strategies.index(r.strategy), r.trial))


# -- metrics -------------------------------------------------------------


def pooled_latencies(results: list[TrialResult], slice_name: str, strategy: Strategy | None = None) -> np.ndarray:
    parts = [
        r.slices[slice_name].window_latency_ms
        for r in results
        if not r.aborted and (strategy is None or r.strategy == strategy)
    ]
    return np.concatenate(parts) if parts else np.empty(0)


def pooled_quantile(results: list[TrialResult], slice_name: str, q: float, strategy: Strategy | None = None) -> float:
    """Lower empirical quantile of realized window latencies pooled across trials."""
    pool = pooled_latencies(results, slice_name, strategy)
    if pool.size == 0:
        raise EstimatorDomainError(f"no realized latencies for {slice_name}")
    return empirical_var(SampleSet(pool), q)


def energy_savings(results: list[TrialResult], strategy: Strategy, slice_name: str | None = None) -> np.ndarray:
    return np.array(
        [
            o.energy_saving
            for r in results
            if r.strategy == strategy and not r.aborted
            for n, o in r.slices.items()
            if slice_name is None or n == slice_name
        ]
    )


def violation_counts(results: list[TrialResult], strategy: Strategy) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in results:
        if r.strategy == strategy and not r.aborted:
            for n, o in r.slices.items():
                counts[n] = counts.get(n, 0) + int(o.violated)
    return counts


def cdf_points(values: np.ndarray, max_points: int = 1000) -> list[tuple[float, float]]:
    """(value, P[X <= value]) at up to ``max_points`` order statistics, always including the max."""
    s = np.sort(values)
    n = s.size
    if n == 0:
        return []
    idx = np.unique(np.linspace(0, n - 1, min(n, max_points)).round().astype(int))
    return [(float(s[i]), (int(i) + 1) / n) for i in idx]


def summarize_results(results: list[TrialResult], cfg: ExperimentConfig) -> dict[str, Any]:
    names = [s.name for s in cfg.slices]
    out: dict[str, Any] = {"schema_version": OUTPUT_SCHEMA_VERSION, "master_seed": cfg.master_seed, "strategies": {}}
    for strat in cfg.strategies:
        rs = [r for r in results if r.strategy == strat]
        done = [r for r in rs if not r.aborted]
        entry: dict[str, Any] = {
            "trials": len(rs),
            "completed": len(done),
            "aborted": [r.trial for r in rs if r.aborted],
            "consensus": sum(r.status == Status.CONSENSUS.value for r in done),
            "max_rounds_exhausted": sum(r.status == Status.MAX_ROUNDS_EXHAUSTED.value for r in done),
            "verification_failures": [r.trial for r in done if r.verified is False],
            "violating_trials": violation_counts(results, strat),
            "p99999_latency_ms": {},
            "latency_mass_above_sla": {},
            "median_energy_saving": None,
            "median_energy_saving_by_slice": {},
        }
        for sl in cfg.slices:
            pool = pooled_latencies(results, sl.name, strat)
            if pool.size:
                entry["p99999_latency_ms"][sl.name] = pooled_quantile(results, sl.name, cfg.alpha, strat)
                entry["latency_mass_above_sla"][sl.name] = float((pool > sl.sla_ms).mean())
            es = energy_savings(results, strat, sl.name)
            if es.size:
                entry["median_energy_saving_by_slice"][sl.name] = float(np.median(es))
        es = energy_savings(results, strat)
        if es.size:
            entry["median_energy_saving"] = float(np.median(es))
        out["strategies"][strat.value] = entry
    out["slices"] = names
    return out


# -- outputs -------------------------------------------------------------

TRIAL_COLUMNS = [
    "strategy", "trial", "slice", "status", "rounds", "verified",
    "final_bandwidth_mhz", "final_cpu_ghz", "baseline_bandwidth_mhz", "baseline_cpu_ghz",
    "energy_saving", "violated", "max_window_latency_ms",
    "commit_metric_ms", "commit_target_ms", "commit_satisfied", "verify_sla_met", "transcript", "error",
]


def _csv(header_rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {OUTPUT_SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(header_rows)
    return buf.getvalue()


def _cell(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def trials_table(results: list[TrialResult], cfg: ExperimentConfig) -> str:
    rows: list[list[Any]] = [TRIAL_COLUMNS]
    for r in results:
        if r.aborted:
            rows.append([r.strategy.value, r.trial, "", r.status, r.rounds, "", *[""] * 11, r.transcript_name, r.error])
            continue
        for sl in cfg.slices:
            o = r.slices[sl.name]
            rows.append(
                [_cell(v) for v in (
                    r.strategy.value, r.trial, sl.name, r.status, r.rounds, r.verified,
                    o.final.bandwidth_mhz, o.final.cpu_ghz, o.baseline.bandwidth_mhz, o.baseline.cpu_ghz,
                    o.energy_saving, o.violated, o.max_latency_ms,
                    o.commit_metric_ms, o.commit_target_ms, o.commit_satisfied, o.verify_sla_met,
                    r.transcript_name, r.error,
                )]
            )
    return _csv(rows)


def check_output_dir(path: str | Path) -> Path:
    """Create ``path`` and prove it is writable, before any trial runs."""
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        (p / "transcripts").mkdir(exist_ok=True)
        probe = p / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {p} is not writable: {exc}") from exc
    return p


def emit_outputs(results: list[TrialResult], cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict[str, Any]:
    out = check_output_dir(out_dir or cfg.output_dir)
    summary = summarize_results(results, cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if not results:
        return summary
    (out / "trials.csv").write_text(trials_table(results, cfg), encoding="utf-8")

    lat_rows: list[list[Any]] = [["strategy", "slice", "latency_ms", "cdf"]]
    energy_rows: list[list[Any]] = [["strategy", "slice", "energy_saving", "cdf"]]
    for strat in cfg.strategies:
        for sl in cfg.slices:
            for x, c in cdf_points(pooled_latencies(results, sl.name, strat)):
                lat_rows.append([strat.value, sl.name, repr(x), repr(c)])
        for name in [sl.name for sl in cfg.slices] + [None]:
            for x, c in cdf_points(energy_savings(results, strat, name)):
                energy_rows.append([strat.value, name or "all", repr(x), repr(c)])
    (out / "latency_cdf.csv").write_text(_csv(lat_rows), encoding="utf-8")
    (out / "energy_cdf.csv").write_text(_csv(energy_rows), encoding="utf-8")
    for r in results:
        r.transcript.write(out / "transcripts" / r.transcript_name)
    return summary
