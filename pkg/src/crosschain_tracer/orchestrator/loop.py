"""Perceive / reason / act loop driving one single-transfer investigation.

The planner policy issues one action per step. Retrieval actions run on the worker, validation and scoring on
the critic, and the critic judges every finding. Only accepted findings complete a milestone.
"""

import logging
from decimal import Decimal
from typing import Any

from pydantic import BaseModel, ConfigDict

from crosschain_tracer.ledger import TransferStore
from crosschain_tracer.models import (
    ChainAsset,
    ConfigError,
    InvalidChainError,
    ProtocolViolationError,
    Transfer,
    TransferNotFoundError,
    TransferRef,
)
from crosschain_tracer.orchestrator.models import (
    Action,
    ActionKind,
    BeliefState,
    FailureReport,
    Finding,
    FindingStatus,
    InvestigationOutcome,
    Milestone,
    TranscriptRecord,
)
from crosschain_tracer.orchestrator.policy import Policy
from crosschain_tracer.price_oracle import PriceOracle, ValueInterval
from crosschain_tracer.single_trace import (
    ScoredCandidate,
    TraceConfig,
    TraceResult,
    resolve_value_intervals,
    score_and_rank,
    search_candidates,
    temporal_window,
    validate_candidates,
)

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 12


class InvestigationEnv(BaseModel):
    """Tools and inputs available to one investigation."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    store: TransferStore
    oracle: PriceOracle
    target: TransferRef
    config: TraceConfig = TraceConfig()


class _Workspace:
    """Intermediate evidence of one loop instance; prerequisites are computed on demand."""

    def __init__(self: "_Workspace", env: InvestigationEnv) -> None:
        self.env = env
        self.cfg = env.config
        self._target: Transfer | None = None
        self._window: tuple[int, int] | None = None
        self._intervals: dict[ChainAsset, ValueInterval] | None = None
        self.warnings: list[str] = []
        self._candidates: list[Transfer] | None = None
        self._accepted: list[tuple[Transfer, Decimal]] | None = None
        self.rejected: dict[str, int] = {}
        self.ranked: list[ScoredCandidate] | None = None

    def widen(self: "_Workspace", factors: dict[str, int]) -> None:
        self.cfg = self.cfg.widened(**factors)
        logger.debug(f"{self.env.target.key}: widened {factors}")

    @property
    def target(self: "_Workspace") -> Transfer:
        if self._target is None:
            self._target = self.env.store.get_transfer_by_id(self.env.target.chain, self.env.target.tx_id)
        return self._target

    @property
    def window(self: "_Workspace") -> tuple[int, int]:
        if self._window is None:
            self._window = temporal_window(self.target, self.cfg)
        return self._window

    @property
    def intervals(self: "_Workspace") -> dict[ChainAsset, ValueInterval]:
        if self._intervals is None:
            self._intervals, self.warnings = resolve_value_intervals(
                self.env.store, self.env.oracle, self.target, self.cfg, self.window
            )
        return self._intervals

    @property
    def candidates(self: "_Workspace") -> list[Transfer]:
        if self._candidates is None:
            self._candidates = search_candidates(self.env.store, self.target, self.window, self.intervals)
        return self._candidates

    @property
    def accepted(self: "_Workspace") -> list[tuple[Transfer, Decimal]]:
        if self._accepted is None:
            self._accepted, self.rejected = validate_candidates(self.candidates, self.target, self.env.oracle, self.cfg)
        return self._accepted

    def reset_search(self: "_Workspace") -> None:
        self._window = self._intervals = self._candidates = self._accepted = None

    def reset_validation(self: "_Workspace") -> None:
        self._accepted = None


class Worker:
    """Operational role: runs ledger and price-oracle tool calls."""

    def execute(self: "Worker", action: Action, ws: _Workspace) -> Finding:
        match action.kind:
            case ActionKind.resolve_target:
                try:
                    t = ws.target
                except (TransferNotFoundError, InvalidChainError) as e:
                    return Finding(source_action=action.kind, payload={"error": str(e)})
                return Finding(source_action=action.kind, payload={"target": t.key, "ts": t.ts, "amt": str(t.amt)})
            case ActionKind.compute_window:
                return Finding(source_action=action.kind, payload={"window": list(ws.window)})
            case ActionKind.lookup_prices:
                return Finding(
                    source_action=action.kind,
                    payload={"pairs": [str(p) for p in ws.intervals], "warnings": list(ws.warnings)},
                )
            case ActionKind.search_candidates:
                if "widen" in action.brief:
                    ws.widen(action.brief["widen"])
                    ws.reset_search()
                return Finding(
                    source_action=action.kind,
                    payload={"window": list(ws.window), "candidates": [c.key for c in ws.candidates]},
                )
        raise ProtocolViolationError(f"worker cannot execute {action.kind.value}")


class Critic:
    """Evaluative role: validates and scores candidates and judges every finding."""

    def execute(self: "Critic", action: Action, ws: _Workspace) -> Finding:
        match action.kind:
            case ActionKind.validate:
                if "widen" in action.brief:
                    ws.widen(action.brief["widen"])
                    ws.reset_validation()
                return Finding(
                    source_action=action.kind,
                    payload={"accepted": [c.key for c, _ in ws.accepted], "rejected": ws.rejected},
                )
            case ActionKind.score:
                ws.ranked = score_and_rank(ws.accepted, ws.target, ws.env.oracle, ws.cfg)
                return Finding(source_action=action.kind, payload={"ranked": [c.link.src.key for c in ws.ranked]})
        raise ProtocolViolationError(f"critic cannot execute {action.kind.value}")

    def review(self: "Critic", finding: Finding) -> Finding:
        p = finding.payload
        match finding.source_action:
            case ActionKind.resolve_target:
                return finding.judged("error" not in p)
            case ActionKind.compute_window:
                return finding.judged(True)
            case ActionKind.lookup_prices:
                return finding.judged(bool(p["pairs"]), rationale=None if p["pairs"] else "no priced source pair")
            case ActionKind.search_candidates:
                ok = bool(p["candidates"])
                return finding.judged(ok, rationale=None if ok else "empty candidate search")
            case ActionKind.validate:
                ok = bool(p["accepted"])
                return finding.judged(ok, rationale=None if ok else "no candidate passed value validation")
            case ActionKind.score:
                return finding.judged(bool(p["ranked"]))
        raise ProtocolViolationError(f"no review rule for {finding.source_action.value}")


def accept_finding(belief: BeliefState, f: Finding) -> BeliefState:
    """Complete the milestone of an accepted finding; other findings leave the belief untouched."""
    if f.status != FindingStatus.accepted:
        return belief
    milestone = f.source_action.milestone
    if milestone is None:
        raise ProtocolViolationError(f"{f.source_action.value} findings carry no milestone")
    if belief.is_set(milestone):
        raise ProtocolViolationError(f"milestone {milestone.value} is already complete")
    return belief.flipped(milestone)


def _check_admissible(belief: BeliefState, action: Action) -> Milestone:
    milestone = action.kind.milestone
    if milestone is None:
        raise ProtocolViolationError(f"{action.kind.value} is not an executable action")
    if belief.is_set(milestone):
        raise ProtocolViolationError(f"pruned action {action.kind.value}: {milestone.value} is already complete")
    first_open = belief.first_open()
    if first_open is not None and milestone != first_open:
        raise ProtocolViolationError(f"premature action {action.kind.value}: {first_open.value} is still open")
    return milestone


def _failure(belief: BeliefState, reason: str) -> FailureReport:
    return FailureReport(reason=reason, open_milestone=belief.first_open(), notes=belief.notes)


def step_loop(
    policy: Policy,
    env: InvestigationEnv,
    belief: BeliefState | None = None,
    budget: int = DEFAULT_BUDGET,
) -> InvestigationOutcome:
    if budget < 1:
        raise ConfigError(f"step budget must be >= 1, got {budget}")
    belief = belief or BeliefState.fresh()
    ws = _Workspace(env)
    worker, critic = Worker(), Critic()
    findings: list[Finding] = []
    transcript: list[TranscriptRecord] = []
    failure: FailureReport | None = None

    for step in range(1, budget + 1):
        action = policy.decide(belief, findings)
        if action.kind == ActionKind.terminate:
            transcript.append(
                TranscriptRecord(step=step, bits=belief.bit_string(), action=action.kind, brief_digest=action.digest)
            )
            failure = _failure(belief, str(action.brief.get("reason", "terminated by policy")))
            break
        _check_admissible(belief, action)
        role: Any = worker if action.kind in _WORKER_ACTIONS else critic
        finding = critic.review(role.execute(action, ws))
        transcript.append(
            TranscriptRecord(
                step=step,
                bits=belief.bit_string(),
                action=action.kind,
                brief_digest=action.digest,
                finding=finding.status,
            )
        )
        findings.append(finding)
        belief = accept_finding(belief, finding).stepped(f"{action.kind.value}: {finding.status.value}")
        logger.debug(f"{env.target.key} step {step}: {action.kind.value} -> {finding.status.value} [{belief.bit_string()}]")
        if belief.is_set(Milestone.scoring_completed) and ws.ranked is not None:
            break
    else:
        if not belief.is_set(Milestone.scoring_completed):
            logger.warning(f"{env.target.key}: step budget of {budget} exhausted at {belief.bit_string()}")
            failure = _failure(belief, f"step budget of {budget} exhausted")

    result = None
    if ws.ranked is not None and belief.is_set(Milestone.scoring_completed):
        result = TraceResult(
            target=ws.target,
            candidates=ws.ranked,
            config=ws.cfg,
            warnings=ws.warnings,
            rejected=ws.rejected,
        )
    return InvestigationOutcome(result=result, failure=failure, belief=belief, transcript=transcript, config=ws.cfg)


_WORKER_ACTIONS = frozenset(
    {ActionKind.resolve_target, ActionKind.compute_window, ActionKind.lookup_prices, ActionKind.search_candidates}
)
