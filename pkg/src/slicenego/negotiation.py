"""Two-agent alternating negotiation over a shared bandwidth/CPU pool.

Each round: both agents assess their current request on a fresh twin seed.
If both are satisfied the split is verified on another fresh seed and
committed. Otherwise every unsatisfied agent, most dissatisfied first, takes
one counter-proposal turn inside what its opponent leaves free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .policy import (
    Agent,
    Evaluation,
    Limits,
    ResourcePool,
    RiskAssessment,
    SearchResult,
    dissatisfaction,
    downward_search,
    select_best,
    upward_search,
)
from .proposer import CandidateSet, ProposalContext, Proposer
from .twin import Action, QueueState

TRANSCRIPT_SCHEMA_VERSION = 1
FEASIBILITY_TOL = 1e-9

# last component of a twin seed key
PURPOSE_ROUND = 0
PURPOSE_VERIFY = 2


class Status(str, Enum):
    RUNNING = "running"
    CONSENSUS = "consensus"
    MAX_ROUNDS_EXHAUSTED = "max_rounds_exhausted"


class NegotiationAborted(RuntimeError):
    """A twin or proposer failure that stops the trial; carries the partial transcript."""

    def __init__(self, message: str, transcript: Transcript | None = None):
        super().__init__(message)
        self.transcript = transcript


@dataclass
class Participant:
    agent: Agent
    proposer: Proposer

    @property
    def name(self) -> str:
        return self.agent.name


@dataclass
class NegotiationState:
    round: int
    allocations: dict[str, Action]
    assessments: dict[str, RiskAssessment]
    status: Status = Status.RUNNING
    verification: dict[str, RiskAssessment] = field(default_factory=dict)
    twin_calls: dict[str, int] = field(default_factory=dict)

    @property
    def verified(self) -> bool | None:
        """SLA re-check of a consensus on fresh seeds; None when no consensus."""
        if self.status is not Status.CONSENSUS:
            return None
        return all(a.sla_met for a in self.verification.values())


def _action_json(a: Action) -> dict[str, float]:
    return {"proposed_bandwidth_mhz": a.bandwidth_mhz, "proposed_cpu_ghz": a.cpu_ghz}


def _assessment_json(a: RiskAssessment) -> dict[str, Any]:
    s = a.stats
    return {
        "mean_ms": s.mean_ms,
        "std_ms": s.std_ms,
        "var_ms": s.var_alpha_ms,
        "cvar_ms": s.cvar_alpha_ms,
        "confidence": a.confidence,
        "target_ms": a.dynamic_target_ms,
        "metric_ms": a.decision_metric_ms,
        "compute_ms": a.compute_latency_ms,
        "radio_ms": a.radio_latency_ms,
        "bottleneck": a.bottleneck,
        "sla_met": a.sla_met,
        "over_provisioned": a.over_provisioned,
        "satisfied": a.satisfied,
    }


def _evaluation_json(ev: Evaluation) -> dict[str, Any]:
    return {**_action_json(ev.action), "power_w": ev.power_w, "score": ev.score, **_assessment_json(ev.assessment)}


@dataclass
class Transcript:
    """Ordered negotiation events, one JSON object per line."""

    events: list[dict[str, Any]] = field(default_factory=list)

    def add(self, event: str, **fields: Any) -> None:
        self.events.append({"event": event, **fields})

    def of_kind(self, event: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["event"] == event]

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, allow_nan=False) + "\n" for e in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> Transcript:
        with open(path, encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        if not events or events[0].get("event") != "header":
            raise ValueError(f"{path}: transcript must start with a header event")
        if events[0].get("schema_version") != TRANSCRIPT_SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported transcript schema {events[0].get('schema_version')!r}")
        return cls(events)


def prop_fair_split(pool: ResourcePool, names: list[str], arrival_means: list[float]) -> dict[str, Action]:
    """Split both resources in proportion to mean offered load; equal split at zero load.

    The last slice takes the exact remainder so the pool is used up.
    """
    if len(names) != len(arrival_means) or not names:
        raise ValueError("need one arrival mean per slice")
    if any(m < 0 for m in arrival_means):
        raise ValueError("arrival means must be >= 0")
    total = sum(arrival_means)
    shares = [m / total for m in arrival_means] if total > 0 else [1 / len(names)] * len(names)
    out: dict[str, Action] = {}
    used_b = used_f = 0.0
    for i, (name, share) in enumerate(zip(names, shares)):
        if i == len(names) - 1:
            b, f = pool.b_total_mhz - used_b, pool.f_total_ghz - used_f
        else:
            b, f = pool.b_total_mhz * share, pool.f_total_ghz * share
        out[name] = Action(max(b, 0.0), max(f, 0.0))
        used_b += b
        used_f += f
    return out


def check_feasibility(proposal: Action, opponent: Action, pool: ResourcePool, tol: float = FEASIBILITY_TOL) -> bool:
    return (
        proposal.bandwidth_mhz + opponent.bandwidth_mhz <= pool.b_total_mhz + tol
        and proposal.cpu_ghz + opponent.cpu_ghz <= pool.f_total_ghz + tol
    )


def max_twin_calls(n_rounds: int, max_search_iters: int, n_candidates: int = 3) -> int:
    """Upper bound on one agent's twin evaluations in a negotiation."""
    per_round = 1 + n_candidates + max_search_iters
    return n_rounds * per_round + 1


def turn_order(assessments: dict[str, RiskAssessment], participants: list[Participant]) -> list[str]:
    """Unsatisfied agents, furthest from their satisfied band first; stricter SLA breaks ties."""
    specs = {p.name: p.agent.spec for p in participants}
    pending = [n for n, a in assessments.items() if not a.satisfied]
    return sorted(pending, key=lambda n: (-dissatisfaction(assessments[n], specs[n].theta), specs[n].sla_ms, n))


def _take_turn(
    p: Participant,
    r: int,
    allocations: dict[str, Action],
    opponent_name: str,
    assessment: RiskAssessment,
    pool: ResourcePool,
    state: QueueState,
    seed,
    transcript: Transcript,
) -> Action:
    agent = p.agent
    current = allocations[p.name]
    opponent = allocations[opponent_name]
    limits: Limits = pool.residual(opponent)
    ctx = ProposalContext(p.name, agent.spec, assessment, current, opponent, limits, r)
    cset: CandidateSet = p.proposer.generate(ctx)
    transcript.add(
        "candidates",
        round=r,
        agent=p.name,
        backend=cset.backend,
        degenerate=cset.degenerate,
        fallback=cset.fallback_reason,
        warnings=list(cset.warnings),
        residual_pool={"bandwidth_mhz": limits.bandwidth_mhz, "cpu_ghz": limits.cpu_ghz},
        candidates=[{**_action_json(c.action), "reasoning": c.reasoning} for c in cset],
    )
    tested = []
    for i, c in enumerate(cset):
        ev = agent.evaluate(c.action, state, seed)
        tested.append(ev)
        transcript.add("candidate_test", round=r, agent=p.name, index=i, **_evaluation_json(ev))
    best = select_best(tested)
    transcript.add("selected", round=r, agent=p.name, index=tested.index(best), **_action_json(best.action))

    result: SearchResult | None = None
    if not best.assessment.sla_met:
        result = upward_search(best, state, agent, limits, seed)
        direction = "upward"
    elif best.assessment.over_provisioned:
        result = downward_search(best, state, agent, seed)
        direction = "downward"
    chosen = best
    if result is not None:
        for ev in result.attempts:
            transcript.add("search_attempt", round=r, agent=p.name, direction=direction, **_evaluation_json(ev))
        transcript.add("search_done", round=r, agent=p.name, direction=direction, stop_reason=result.stop_reason)
        chosen = result.evaluation

    action = chosen.action
    if not check_feasibility(action, opponent, pool):
        clamped, _ = limits.clamp(action)
        transcript.add(
            "feasibility_clamp", round=r, agent=p.name, requested=_action_json(action), clamped=_action_json(clamped)
        )
        action = clamped
    assert check_feasibility(action, opponent, pool)
    a = chosen.assessment
    reasoning = (
        f"Requesting {action}: metric {a.decision_metric_ms:.2f}ms vs target {a.dynamic_target_ms:.2f}ms "
        f"(CVaR {a.stats.cvar_alpha_ms:.2f}ms, confidence {a.confidence:.2f}, "
        f"SLA met {a.sla_met}, over-provisioned {a.over_provisioned})."
    )
    transcript.add("propose_action", round=r, agent=p.name, **_action_json(action), reasoning=reasoning)
    return action


def run_negotiation(
    participants: list[Participant],
    pool: ResourcePool,
    n_rounds: int = 5,
    seed_key: tuple[int, ...] = (0,),
    initial: dict[str, Action] | None = None,
    state: QueueState | None = None,
    header: dict[str, Any] | None = None,
) -> tuple[NegotiationState, Transcript]:
    """Run the protocol; twin seeds are ``(*seed_key, agent_index, round, purpose)``.

    Raises :class:`NegotiationAborted` if a twin or proposer fails.
    """
    if len(participants) != 2:
        raise ValueError("negotiation needs exactly two agents")
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    names = [p.name for p in participants]
    if len(set(names)) != 2:
        raise ValueError("agent names must differ")
    state = state or QueueState()
    by_name = {p.name: p for p in participants}
    index = {n: i for i, n in enumerate(names)}
    other = {names[0]: names[1], names[1]: names[0]}

    if initial is None:
        initial = prop_fair_split(pool, names, [p.agent.twin.forecast.mean_rate_mbps for p in participants])
    allocations = dict(initial)
    if not check_feasibility(allocations[names[0]], allocations[names[1]], pool):
        raise ValueError("initial allocation exceeds the pool")

    transcript = Transcript()
    transcript.add(
        "header",
        schema_version=TRANSCRIPT_SCHEMA_VERSION,
        agents=names,
        pool={"bandwidth_mhz": pool.b_total_mhz, "cpu_ghz": pool.f_total_ghz},
        n_rounds=n_rounds,
        seed_key=list(seed_key),
        **(header or {}),
    )
    transcript.add("initial_split", allocations={n: _action_json(a) for n, a in allocations.items()})
    calls0 = {n: by_name[n].agent.twin.calls for n in names}
    neg = NegotiationState(0, allocations, {})

    def seed(name: str, r: int, purpose: int) -> tuple[int, ...]:
        return (*seed_key, index[name], r, purpose)

    try:
        for r in range(1, n_rounds + 1):
            neg.round = r
            transcript.add("round", round=r, allocations={n: _action_json(a) for n, a in allocations.items()})
            evals = {}
            for n in names:
                evals[n] = by_name[n].agent.evaluate(allocations[n], state, seed(n, r, PURPOSE_ROUND))
                transcript.add("evaluation", round=r, agent=n, **_evaluation_json(evals[n]))
            neg.assessments = {n: e.assessment for n, e in evals.items()}
            if all(a.satisfied for a in neg.assessments.values()):
                for n in names:
                    ev = by_name[n].agent.evaluate(allocations[n], state, seed(n, r, PURPOSE_VERIFY))
                    neg.verification[n] = ev.assessment
                    transcript.add("verification", round=r, agent=n, **_evaluation_json(ev))
                neg.status = Status.CONSENSUS
                transcript.add(
                    "commit",
                    round=r,
                    verified=neg.verified,
                    allocations={n: _action_json(a) for n, a in allocations.items()},
                )
                break
            for n in turn_order(neg.assessments, participants):
                allocations[n] = _take_turn(
                    by_name[n], r, allocations, other[n], neg.assessments[n], pool, state,
                    seed(n, r, PURPOSE_ROUND), transcript,
                )
        else:
            neg.status = Status.MAX_ROUNDS_EXHAUSTED
    except (AssertionError, ValueError, RuntimeError, ArithmeticError) as exc:
        transcript.add("aborted", round=neg.round, error=f"{type(exc).__name__}: {exc}")
        raise NegotiationAborted(f"round {neg.round}: {type(exc).__name__}: {exc}", transcript) from exc

    neg.twin_calls = {n: by_name[n].agent.twin.calls - calls0[n] for n in names}
    for n in names:
        bound = max_twin_calls(n_rounds, by_name[n].agent.search.max_search_iters)
        assert neg.twin_calls[n] <= bound, f"{n}: {neg.twin_calls[n]} twin calls exceed bound {bound}"
    transcript.add(
        "outcome",
        status=neg.status.value,
        rounds=neg.round,
        verified=neg.verified,
        allocations={n: _action_json(a) for n, a in allocations.items()},
        twin_calls=neg.twin_calls,
    )
    return neg, transcript
