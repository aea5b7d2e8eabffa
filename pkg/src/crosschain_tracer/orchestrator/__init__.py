from crosschain_tracer.orchestrator.loop import DEFAULT_BUDGET, InvestigationEnv, accept_finding, step_loop
from crosschain_tracer.orchestrator.models import (
    Action,
    ActionKind,
    BeliefState,
    Finding,
    FindingStatus,
    InvestigationOutcome,
    Milestone,
    TranscriptRecord,
)
from crosschain_tracer.orchestrator.policy import HeuristicPolicy, Policy, heuristic_policy

__all__ = [
    "DEFAULT_BUDGET",
    "Action",
    "ActionKind",
    "BeliefState",
    "Finding",
    "FindingStatus",
    "HeuristicPolicy",
    "InvestigationEnv",
    "InvestigationOutcome",
    "Milestone",
    "Policy",
    "TranscriptRecord",
    "accept_finding",
    "heuristic_policy",
    "step_loop",
]
