"""Agent decision policies: biased (mean-based) and unbiased (CVaR + confidence).

Both strategies share the satisfaction structure ``S = M and not O``; they
differ only in the latency statistic they compare and the target it is
compared against. The searches here correct a chosen action one resource
step at a time against the agent's own twin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .power import PowerParams, power_w
from .risk import TailStats, confidence_score
from .twin import Action, DigitalTwin, LatencyDistribution, QueueState

_EPS = 1e-9


class Strategy(str, Enum):
    BIASED = "biased"
    UNBIASED = "unbiased"


@dataclass(frozen=True)
class SliceSpec:
    name: str
    sla_ms: float
    strategy: Strategy
    theta: float
    alpha: float = 0.99999

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.sla_ms > 0:
            raise ValueError("sla_ms must be > 0")
        if not (0 < self.theta < 1) or not (0 < self.alpha < 1):
            raise ValueError("theta and alpha must lie in (0, 1)")


@dataclass(frozen=True)
class ResourcePool:
    b_total_mhz: float = 40.0
    f_total_ghz: float = 40.0

    def __post_init__(self) -> None:
        if not (self.b_total_mhz > 0 and self.f_total_ghz > 0):
            raise ValueError("pool totals must be > 0")

    def residual(self, opponent: Action) -> Limits:
        return Limits(
            max(self.b_total_mhz - opponent.bandwidth_mhz, 0.0),
            max(self.f_total_ghz - opponent.cpu_ghz, 0.0),
        )

    @property
    def limits(self) -> Limits:
        return Limits(self.b_total_mhz, self.f_total_ghz)


@dataclass(frozen=True)
class Limits:
    """Ceiling on one agent's request, e.g. what the opponent leaves free."""

    bandwidth_mhz: float
    cpu_ghz: float

    @property
    def degenerate(self) -> bool:
        return self.bandwidth_mhz <= _EPS or self.cpu_ghz <= _EPS

    def clamp(self, action: Action) -> tuple[Action, bool]:
        b = min(action.bandwidth_mhz, self.bandwidth_mhz)
        f = min(action.cpu_ghz, self.cpu_ghz)
        clamped = b != action.bandwidth_mhz or f != action.cpu_ghz
        return (Action(b, f) if clamped else action), clamped


@dataclass(frozen=True)
class RiskAssessment:
    stats: TailStats
    confidence: float
    dynamic_target_ms: float
    sla_met: bool
    over_provisioned: bool
    satisfied: bool
    decision_metric_ms: float
    compute_latency_ms: float = 0.0
    radio_latency_ms: float = 0.0

    @property
    def bottleneck(self) -> str:
        """``"compute"`` or ``"radio"``; ties go to radio, which carries the SE risk."""
        return "compute" if self.compute_latency_ms > self.radio_latency_ms else "radio"


@dataclass(frozen=True)
class SearchParams:
    step_bw_mhz: float = 1.0
    step_cpu_ghz: float = 2.0
    max_search_iters: int = 20

    def __post_init__(self) -> None:
        if not (self.step_bw_mhz > 0 and self.step_cpu_ghz > 0) or self.max_search_iters < 1:
            raise ValueError("search steps must be > 0 and max_search_iters >= 1")


@dataclass(frozen=True)
class ScoreParams:
    met_base: float = 100.0
    unmet_base: float = -1000.0


def assess_stats(
    stats: TailStats,
    spec: SliceSpec,
    compute_latency_ms: float = 0.0,
    radio_latency_ms: float = 0.0,
) -> RiskAssessment:
    ce = confidence_score(stats.mean_ms, stats.std_ms)
    if spec.strategy is Strategy.BIASED:
        # confidence is recorded for comparable transcripts but plays no part
        metric, target = stats.mean_ms, spec.sla_ms
    else:
        metric, target = stats.cvar_alpha_ms, spec.sla_ms * ce
    met = metric <= target
    over = metric < spec.theta * target
    return RiskAssessment(
        stats=stats,
        confidence=ce,
        dynamic_target_ms=target,
        sla_met=met,
        over_provisioned=over,
        satisfied=met and not over,
        decision_metric_ms=metric,
        compute_latency_ms=compute_latency_ms,
        radio_latency_ms=radio_latency_ms,
    )


def assess(dist: LatencyDistribution, spec: SliceSpec) -> RiskAssessment:
    if dist.stats.alpha != spec.alpha:
        raise ValueError(f"distribution stats at alpha={dist.stats.alpha}, slice wants {spec.alpha}")
    return assess_stats(dist.stats, spec, dist.compute_latency_ms, dist.radio_latency_ms)


def score_proposal(assessment: RiskAssessment, power: float, scoring: ScoreParams = ScoreParams()) -> float:
    if assessment.sla_met:
        return scoring.met_base - power
    return scoring.unmet_base - (assessment.decision_metric_ms - assessment.dynamic_target_ms)


def dissatisfaction(assessment: RiskAssessment, theta: float) -> float:
    """Distance in ms from the satisfied band ``[theta*target, target]``; 0 inside it."""
    a = assessment
    if a.satisfied:
        return 0.0
    if not a.sla_met:
        return a.decision_metric_ms - a.dynamic_target_ms
    return theta * a.dynamic_target_ms - a.decision_metric_ms


@dataclass(frozen=True)
class Evaluation:
    action: Action
    assessment: RiskAssessment
    power_w: float
    score: float


@dataclass
class Agent:
    """One slice agent: its policy parameters and its private twin."""

    spec: SliceSpec
    twin: DigitalTwin
    power: PowerParams = field(default_factory=PowerParams)
    search: SearchParams = field(default_factory=SearchParams)
    scoring: ScoreParams = field(default_factory=ScoreParams)

    @property
    def name(self) -> str:
        return self.spec.name

    def evaluate(self, action: Action, state: QueueState, seed) -> Evaluation:
        a = assess(self.twin.predict(state, action, seed), self.spec)
        p = power_w(action, self.power)
        return Evaluation(action, a, p, score_proposal(a, p, self.scoring))


def select_best(evaluations: list[Evaluation]) -> Evaluation:
    """Highest score wins; earlier entries win ties."""
    best = evaluations[0]
    for ev in evaluations[1:]:
        if ev.score > best.score:
            best = ev
    return best


@dataclass(frozen=True)
class SearchResult:
    evaluation: Evaluation
    attempts: list[Evaluation]
    stop_reason: str

    @property
    def action(self) -> Action:
        return self.evaluation.action


def _grow(action: Action, resource: str, limits: Limits, search: SearchParams) -> Action | None:
    if resource == "radio":
        if action.bandwidth_mhz >= limits.bandwidth_mhz - _EPS:
            return None
        return Action(min(action.bandwidth_mhz + search.step_bw_mhz, limits.bandwidth_mhz), action.cpu_ghz)
    if action.cpu_ghz >= limits.cpu_ghz - _EPS:
        return None
    return Action(action.bandwidth_mhz, min(action.cpu_ghz + search.step_cpu_ghz, limits.cpu_ghz))


def _shrink(action: Action, resource: str, search: SearchParams) -> Action | None:
    # never below one step, so actions stay strictly positive
    if resource == "radio":
        step = search.step_bw_mhz
        if action.bandwidth_mhz - step < step - _EPS:
            return None
        return Action(action.bandwidth_mhz - step, action.cpu_ghz)
    step = search.step_cpu_ghz
    if action.cpu_ghz - step < step - _EPS:
        return None
    return Action(action.bandwidth_mhz, action.cpu_ghz - step)


def upward_search(start: Evaluation, state: QueueState, agent: Agent, limits: Limits, seed) -> SearchResult:
    """Add resource to the bottleneck until the SLA predicate holds.

    Stops on SLA met, both resources at ``limits``, or the iteration cap.
    Returns the best-scoring action seen, which is the first SLA-meeting one
    if any was found.
    """
    ev, best, attempts = start, start, []
    reason = "iteration_cap"
    for _ in range(agent.search.max_search_iters):
        if ev.assessment.sla_met:
            reason = "sla_met"
            break
        first = ev.assessment.bottleneck
        other = "compute" if first == "radio" else "radio"
        nxt = _grow(ev.action, first, limits, agent.search) or _grow(ev.action, other, limits, agent.search)
        if nxt is None:
            reason = "pool_exhausted"
            break
        ev = agent.evaluate(nxt, state, seed)
        attempts.append(ev)
        if ev.score > best.score:
            best = ev
    else:
        if ev.assessment.sla_met:
            reason = "sla_met"
    return SearchResult(best, attempts, reason)


def downward_search(start: Evaluation, state: QueueState, agent: Agent, seed) -> SearchResult:
    """Cut the non-bottleneck resource while the agent stays over-provisioned.

    A step that breaks the SLA predicate is discarded and ends the search, so
    the returned action always meets the SLA whenever ``start`` did.
    """
    ev, attempts = start, []
    reason = "iteration_cap"
    for _ in range(agent.search.max_search_iters):
        a = ev.assessment
        if not (a.sla_met and a.over_provisioned):
            reason = "not_over_provisioned" if a.sla_met else "sla_not_met"
            break
        cut = "compute" if a.bottleneck == "radio" else "radio"
        nxt = _shrink(ev.action, cut, agent.search)
        if nxt is None:
            reason = "floor"
            break
        cand = agent.evaluate(nxt, state, seed)
        attempts.append(cand)
        if not cand.assessment.sla_met:
            reason = "would_violate"
            break
        ev = cand
    else:
        a = ev.assessment
        if not (a.sla_met and a.over_provisioned):
            reason = "not_over_provisioned"
    return SearchResult(ev, attempts, reason)
