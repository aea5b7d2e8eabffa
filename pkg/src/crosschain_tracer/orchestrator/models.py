import hashlib
import json
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator

from crosschain_tracer.single_trace import TraceConfig, TraceResult


class Milestone(str, Enum):
    target_resolved = "target-resolved"
    window_computed = "window-computed"
    prices_resolved = "prices-resolved"
    candidates_retrieved = "candidates-retrieved"
    validation_passed = "validation-passed"
    scoring_completed = "scoring-completed"

    @property
    def index(self: "Milestone") -> int:
        return MILESTONES.index(self)


# investigation order, also the bit order of BeliefState.bits
MILESTONES: tuple[Milestone, ...] = tuple(Milestone)


class ActionKind(str, Enum):
    resolve_target = "resolve-target"
    compute_window = "compute-window"
    lookup_prices = "lookup-prices"
    search_candidates = "search-candidates"
    validate = "validate"
    score = "score"
    terminate = "terminate"

    @property
    def milestone(self: "ActionKind") -> Milestone | None:
        return _MILESTONE_OF.get(self)


_MILESTONE_OF: dict[ActionKind, Milestone] = {
    ActionKind.resolve_target: Milestone.target_resolved,
    ActionKind.compute_window: Milestone.window_computed,
    ActionKind.lookup_prices: Milestone.prices_resolved,
    ActionKind.search_candidates: Milestone.candidates_retrieved,
    ActionKind.validate: Milestone.validation_passed,
    ActionKind.score: Milestone.scoring_completed,
}

ACTION_FOR: dict[Milestone, ActionKind] = {m: k for k, m in _MILESTONE_OF.items()}


class BeliefState(BaseModel):
    """Milestone completion bits of one investigation, plus its append-only note log."""

    model_config = ConfigDict(frozen=True)

    bits: tuple[bool, ...] = (False,) * len(MILESTONES)
    step_count: int = Field(default=0, ge=0)
    notes: tuple[str, ...] = ()

    @field_validator("bits")
    @classmethod
    def check_length(cls, v: tuple[bool, ...]) -> tuple[bool, ...]:  # noqa: ANN102
        if len(v) != len(MILESTONES):
            raise ValueError(f"belief needs exactly {len(MILESTONES)} milestone bits, got {len(v)}")
        return v

    @classmethod
    def fresh(cls) -> "BeliefState":  # noqa: ANN102
        return cls()

    @classmethod
    def with_milestones(cls, *done: Milestone) -> "BeliefState":  # noqa: ANN102
        return cls(bits=tuple(m in done for m in MILESTONES))

    def is_set(self: "BeliefState", milestone: Milestone) -> bool:
        return self.bits[milestone.index]

    def all_done(self: "BeliefState") -> bool:
        return all(self.bits)

    def first_open(self: "BeliefState") -> Milestone | None:
        return next((m for m in MILESTONES if not self.is_set(m)), None)

    def flipped(self: "BeliefState", milestone: Milestone) -> "BeliefState":
        bits = list(self.bits)
        bits[milestone.index] = True
        return self.model_copy(update={"bits": tuple(bits)})

    def stepped(self: "BeliefState", note: str) -> "BeliefState":
        return self.model_copy(update={"step_count": self.step_count + 1, "notes": (*self.notes, note)})

    def bit_string(self: "BeliefState") -> str:
        return "".join("1" if b else "0" for b in self.bits)


def canonical_json(data: Any) -> str:  # noqa: ANN401
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


class Action(BaseModel):
    """A task brief issued by the planner: what to do next and with which parameters."""

    model_config = ConfigDict(frozen=True)

    kind: ActionKind
    brief: dict[str, Any] = Field(default_factory=dict)

    @property
    def digest(self: "Action") -> str:
        return hashlib.sha256(canonical_json(self.brief).encode("utf-8")).hexdigest()


class FindingStatus(str, Enum):
    pending = "pending"
    accepted = "accepted"
    rejected = "rejected"


class Finding(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_action: ActionKind
    payload: dict[str, Any] = Field(default_factory=dict)
    status: FindingStatus = FindingStatus.pending

    def judged(self: "Finding", accepted: bool, **payload: Any) -> "Finding":  # noqa: ANN401
        return self.model_copy(
            update={
                "status": FindingStatus.accepted if accepted else FindingStatus.rejected,
                "payload": {**self.payload, **payload},
            }
        )


class TranscriptRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: int
    bits: str
    action: ActionKind
    brief_digest: str
    finding: FindingStatus | None = None


class FailureReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    reason: str
    open_milestone: Milestone | None
    notes: tuple[str, ...] = ()


class InvestigationOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    result: TraceResult | None = None
    failure: FailureReport | None = None
    belief: BeliefState
    transcript: list[TranscriptRecord]
    config: TraceConfig

    @property
    def succeeded(self: "InvestigationOutcome") -> bool:
        return self.result is not None

    def to_report(self: "InvestigationOutcome") -> dict[str, Any]:
        return {
            "result": None if self.result is None else self.result.to_report(),
            "failure": None if self.failure is None else self.failure.model_dump(mode="json"),
            "belief": {"bits": self.belief.bit_string(), "step_count": self.belief.step_count},
            "transcript": [r.model_dump(mode="json") for r in self.transcript],
        }
