"""Candidate generation backends: heuristic (default), transcript replay, remote LLM.

Every backend returns exactly three candidates already clamped to the
agent's residual pool. Backends never raise for recoverable problems; they
fall back to the heuristic and say so in the returned set.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from .policy import Limits, RiskAssessment, SliceSpec
from .twin import Action

log = logging.getLogger(__name__)

N_CANDIDATES = 3

ENV_ENDPOINT = "SLICENEGO_REMOTE_ENDPOINT"
ENV_API_KEY = "SLICENEGO_REMOTE_API_KEY"
ENV_MODEL = "SLICENEGO_REMOTE_MODEL"


class ProposalParseError(ValueError):
    """A remote response did not match the three-candidate schema."""


@dataclass(frozen=True)
class ProposalContext:
    agent: str
    spec: SliceSpec
    assessment: RiskAssessment
    current: Action
    opponent: Action
    remaining: Limits
    round_index: int


@dataclass(frozen=True)
class Candidate:
    action: Action
    reasoning: str


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]
    backend: str
    warnings: tuple[str, ...] = ()
    degenerate: bool = False
    fallback_reason: str | None = None

    def __post_init__(self) -> None:
        if len(self.candidates) != N_CANDIDATES:
            raise ProposalParseError(f"expected {N_CANDIDATES} candidates, got {len(self.candidates)}")

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)


class Proposer(Protocol):
    name: str

    def generate(self, ctx: ProposalContext) -> CandidateSet: ...


def _scaled(action: Action, resource: str, factor: float) -> Action:
    if resource == "radio":
        return Action(action.bandwidth_mhz * factor, action.cpu_ghz)
    return Action(action.bandwidth_mhz, action.cpu_ghz * factor)


def _describe(ctx: ProposalContext) -> str:
    a = ctx.assessment
    s = a.stats
    main = a.bottleneck
    other = "compute" if main == "radio" else "radio"
    lat = {"radio": a.radio_latency_ms, "compute": a.compute_latency_ms}
    return (
        f"CVaR_{s.alpha} {s.cvar_alpha_ms:.2f}ms, mean {s.mean_ms:.2f}ms, confidence {a.confidence:.2f}, "
        f"target {a.dynamic_target_ms:.2f}ms (SLA met: {a.sla_met}, over-provisioned: {a.over_provisioned}). "
        f"{main.capitalize()} latency {lat[main]:.2f}ms dominates {other} {lat[other]:.2f}ms."
    )


@dataclass
class HeuristicProposer:
    """Brackets the current operating point on the bottleneck axis.

    conservative: bottleneck resource x ``up_factor``; balanced: unchanged;
    aggressive: non-bottleneck resource x ``down_factor``.
    """

    up_factor: float = 1.15
    down_factor: float = 0.85
    name: str = "heuristic"

    def generate(self, ctx: ProposalContext) -> CandidateSet:
        limits = ctx.remaining
        current, _ = limits.clamp(ctx.current)
        state = _describe(ctx)
        if limits.degenerate:
            reason = f"DEGENERATE POOL: no spare capacity ({limits.bandwidth_mhz:.2f}M, {limits.cpu_ghz:.2f}G). {state}"
            c = Candidate(current, reason)
            return CandidateSet((c, c, c), self.name, ("degenerate pool: candidate repeated",), degenerate=True)
        main = ctx.assessment.bottleneck
        other = "compute" if main == "radio" else "radio"
        raw = [
            ("CONSERVATIVE", _scaled(current, main, self.up_factor), f"adds {main} capacity to cut the dominant latency"),
            ("BALANCED", current, "holds the current request"),
            ("AGGRESSIVE", _scaled(current, other, self.down_factor), f"trims the non-bottleneck {other} resource to save energy"),
        ]
        out, warnings = [], []
        for label, action, why in raw:
            action, clamped = limits.clamp(action)
            if clamped:
                warnings.append(f"{label.lower()} candidate clamped to residual pool")
            out.append(
                Candidate(
                    action,
                    f"{label} PROPOSAL {action}: {why}. {state} "
                    f"Residual pool ({limits.bandwidth_mhz:.2f}M, {limits.cpu_ghz:.2f}G).",
                )
            )
        return CandidateSet(tuple(out), self.name, tuple(warnings))


def _clamp_candidates(cands, limits: Limits, backend: str, extra_warnings=(), fallback_reason=None) -> CandidateSet:
    out, warnings = [], list(extra_warnings)
    for i, c in enumerate(cands):
        action, clamped = limits.clamp(c.action)
        if clamped:
            warnings.append(f"candidate {i + 1} {c.action} clamped to {action}")
        out.append(Candidate(action, c.reasoning))
    return CandidateSet(tuple(out), backend, tuple(warnings), fallback_reason=fallback_reason)


@dataclass
class ReplayProposer:
    """Replays candidate sets recorded in a transcript, keyed by (agent, round)."""

    recorded: dict[tuple[str, int], list[Candidate]]
    fallback: HeuristicProposer = field(default_factory=HeuristicProposer)
    name: str = "replay"

    @classmethod
    def from_transcript(cls, path: str | Path, **kwargs) -> ReplayProposer:
        recorded: dict[tuple[str, int], list[Candidate]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                ev = json.loads(line)
                if ev.get("event") != "candidates":
                    continue
                recorded[(ev["agent"], int(ev["round"]))] = [
                    Candidate(Action(float(c["proposed_bandwidth_mhz"]), float(c["proposed_cpu_ghz"])), c["reasoning"])
                    for c in ev["candidates"]
                ]
        return cls(recorded, **kwargs)

    def generate(self, ctx: ProposalContext) -> CandidateSet:
        cands = self.recorded.get((ctx.agent, ctx.round_index))
        if cands is None or len(cands) != N_CANDIDATES:
            why = "no recorded turn" if cands is None else f"recorded turn has {len(cands)} candidates"
            res = self.fallback.generate(ctx)
            return CandidateSet(res.candidates, res.backend, res.warnings, res.degenerate, f"replay: {why}")
        return _clamp_candidates(cands, ctx.remaining, self.name)


def render_prompt(ctx: ProposalContext) -> str:
    a = ctx.assessment
    return (
        f"You negotiate radio bandwidth (MHz) and edge CPU (GHz) for the {ctx.agent} slice "
        f"(latency SLA {ctx.spec.sla_ms:.1f} ms, {ctx.spec.strategy.value} policy), round {ctx.round_index}.\n"
        f"Your current request: {ctx.current.bandwidth_mhz:.2f} MHz, {ctx.current.cpu_ghz:.2f} GHz. "
        f"Opponent holds {ctx.opponent.bandwidth_mhz:.2f} MHz, {ctx.opponent.cpu_ghz:.2f} GHz.\n"
        f"Remaining capacity for you: {ctx.remaining.bandwidth_mhz:.2f} MHz, {ctx.remaining.cpu_ghz:.2f} GHz.\n"
        f"Digital twin: {_describe(ctx)}\n"
        f"Internal target: {a.dynamic_target_ms:.2f} ms.\n"
        "Reply with JSON only: a list of exactly 3 objects with numeric fields "
        '"proposed_bandwidth_mhz", "proposed_cpu_ghz" and a string "reasoning" that '
        "states your tail latency, confidence score and target."
    )


def serialize_candidates(cands) -> str:
    return json.dumps(
        [
            {
                "proposed_bandwidth_mhz": c.action.bandwidth_mhz,
                "proposed_cpu_ghz": c.action.cpu_ghz,
                "reasoning": c.reasoning,
            }
            for c in cands
        ],
        indent=2,
    )


_FENCE = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.DOTALL)


def _number(obj: dict, key: str, i: int) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProposalParseError(f"candidate {i + 1}: {key} must be a number, got {v!r}")
    v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        raise ProposalParseError(f"candidate {i + 1}: {key} is not finite")
    return v


def parse_remote_response(raw: str, limits: Limits, backend: str = "remote") -> CandidateSet:
    """Strict parse of a three-candidate JSON document.

    Accepts a bare list or ``{"candidates": [...]}``, optionally inside a
    markdown code fence. Values outside ``[0, limits]`` are clamped and
    reported in ``warnings``.
    """
    m = _FENCE.match(raw)
    text = m.group(1) if m else raw
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProposalParseError(f"not valid JSON: {exc}") from exc
    if isinstance(doc, dict):
        doc = doc.get("candidates")
    if not isinstance(doc, list):
        raise ProposalParseError("expected a list of candidates")
    if len(doc) != N_CANDIDATES:
        raise ProposalParseError(f"expected {N_CANDIDATES} candidates, got {len(doc)}")
    cands, warnings = [], []
    for i, obj in enumerate(doc):
        if not isinstance(obj, dict):
            raise ProposalParseError(f"candidate {i + 1} is not an object")
        b = _number(obj, "proposed_bandwidth_mhz", i)
        f = _number(obj, "proposed_cpu_ghz", i)
        reasoning = obj.get("reasoning")
        if not isinstance(reasoning, str):
            raise ProposalParseError(f"candidate {i + 1}: reasoning must be a string")
        if b < 0 or f < 0:
            warnings.append(f"candidate {i + 1} negative request raised to zero")
            b, f = max(b, 0.0), max(f, 0.0)
        cands.append(Candidate(Action(b, f), reasoning))
    return _clamp_candidates(cands, limits, backend, warnings)


@dataclass
class RemoteProposer:
    """One blocking POST per turn; one retry; heuristic fallback on any failure.

    Request body: ``{"model": ..., "prompt": ...}``. The response body is the
    structured text itself, or a JSON object whose string ``"text"`` field is.
    """

    endpoint: str
    api_key: str | None = None
    model: str = "default"
    timeout_s: float = 10.0
    retries: int = 1
    client: httpx.Client | None = None
    fallback: HeuristicProposer = field(default_factory=HeuristicProposer)
    name: str = "remote"

    @classmethod
    def from_env(cls, **kwargs) -> RemoteProposer:
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise RuntimeError(f"remote proposer needs {ENV_ENDPOINT} to be set")
        return cls(endpoint, os.environ.get(ENV_API_KEY), os.environ.get(ENV_MODEL, "default"), **kwargs)

    def _request(self, prompt: str) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        client = self.client or httpx.Client(timeout=self.timeout_s)
        try:
            resp = client.post(self.endpoint, json={"model": self.model, "prompt": prompt}, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            body = resp.text
        finally:
            if self.client is None:
                client.close()
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            return body
        if isinstance(doc, dict) and isinstance(doc.get("text"), str):
            return doc["text"]
        return body

    def generate(self, ctx: ProposalContext) -> CandidateSet:
        prompt = render_prompt(ctx)
        errors = []
        for _ in range(1 + self.retries):
            try:
                return parse_remote_response(self._request(prompt), ctx.remaining, self.name)
            except (httpx.HTTPError, ProposalParseError) as exc:
                errors.append(f"{type(exc).__name__}: {exc}")
                log.warning("remote proposer attempt failed: %s", exc)
        res = self.fallback.generate(ctx)
        return CandidateSet(res.candidates, res.backend, res.warnings, res.degenerate, "remote: " + "; ".join(errors))
