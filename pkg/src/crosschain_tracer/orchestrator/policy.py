"""Planner policies deciding the next investigative action from the belief state."""

from collections.abc import Sequence
from typing import Protocol

from crosschain_tracer.orchestrator.models import (
    ACTION_FOR,
    Action,
    ActionKind,
    BeliefState,
    Finding,
    FindingStatus,
)


class Policy(Protocol):
    def decide(self: "Policy", belief: BeliefState, findings: Sequence[Finding]) -> Action:
        """Next action for ``belief``; must never target a milestone that is already complete."""
        ...


# one widening tier per retryable action: config field -> factor
RETRY_TIERS: dict[ActionKind, dict[str, int]] = {
    ActionKind.search_candidates: {"delta_t": 2},
    ActionKind.validate: {"w_p": 2},
}

# an investigation that exhausts its retries fails where a plain single trace succeeds with no candidates
EMPTY_TRACE_NOTE = "no accepted candidates, a single trace of this target returns an empty candidate list"


class HeuristicPolicy:
    """Works through the milestones in order, retrying a rejected step once where a widening tier exists."""

    def decide(self: "HeuristicPolicy", belief: BeliefState, findings: Sequence[Finding]) -> Action:
        milestone = belief.first_open()
        if milestone is None:
            return Action(kind=ActionKind.terminate, brief={"reason": "all milestones complete"})
        kind = ACTION_FOR[milestone]
        failures = sum(1 for f in findings if f.source_action == kind and f.status == FindingStatus.rejected)
        if failures == 0:
            return Action(kind=kind, brief={"milestone": milestone.value, "attempt": 1})
        tier = RETRY_TIERS.get(kind)
        if failures == 1 and tier is not None:
            return Action(kind=kind, brief={"milestone": milestone.value, "attempt": 2, "widen": tier})
        reason = f"{milestone.value} not reached after {failures} attempt(s)"
        if tier is not None:
            reason += f": {EMPTY_TRACE_NOTE}"
        return Action(kind=ActionKind.terminate, brief={"reason": reason, "milestone": milestone.value})


def heuristic_policy() -> Policy:
    return HeuristicPolicy()
