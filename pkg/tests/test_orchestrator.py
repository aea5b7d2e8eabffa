from collections.abc import Sequence

import pytest

from crosschain_tracer.models import ConfigError, ProtocolViolationError, TransferRef
from crosschain_tracer.orchestrator import (
    DEFAULT_BUDGET,
    Action,
    ActionKind,
    BeliefState,
    Finding,
    FindingStatus,
    InvestigationEnv,
    Milestone,
    accept_finding,
    heuristic_policy,
    step_loop,
)
from crosschain_tracer.orchestrator.models import MILESTONES
from crosschain_tracer.orchestrator.policy import EMPTY_TRACE_NOTE
from crosschain_tracer.price_oracle import PriceOracle
from crosschain_tracer.simgen import WorldSpec, generate_world
from crosschain_tracer.single_trace import TraceConfig, trace_single
from tests.util import EQUIVALENCE_SEEDS, constant_oracle, make_transfer, seeded_world, store_of

HAPPY_PATH = [
    ActionKind.resolve_target,
    ActionKind.compute_window,
    ActionKind.lookup_prices,
    ActionKind.search_candidates,
    ActionKind.validate,
    ActionKind.score,
]


class FixedPolicy:
    """Issues the same action forever."""

    def __init__(self, kind: ActionKind) -> None:
        self.kind = kind

    def decide(self, belief: BeliefState, findings: Sequence[Finding]) -> Action:
        return Action(kind=self.kind)


def _env(world, link, cfg: TraceConfig | None = None) -> InvestigationEnv:
    return InvestigationEnv(store=world.store, oracle=world.oracle, target=link.dst, config=cfg or TraceConfig())


@pytest.mark.parametrize(
    ("done", "expected"),
    [
        ((), ActionKind.resolve_target),
        (MILESTONES[:3], ActionKind.search_candidates),
        (MILESTONES[:5], ActionKind.score),
        (MILESTONES, ActionKind.terminate),
    ],
)
def test_policy_targets_the_first_open_milestone(done, expected):
    action = heuristic_policy().decide(BeliefState.with_milestones(*done), [])

    assert action.kind == expected


def test_policy_terminates_a_complete_belief_with_reason():
    action = heuristic_policy().decide(BeliefState.with_milestones(*MILESTONES), [])

    assert action.brief["reason"] == "all milestones complete"


def test_policy_retries_a_rejected_search_once_with_a_wider_window():
    belief = BeliefState.with_milestones(*MILESTONES[:3])
    rejected = Finding(source_action=ActionKind.search_candidates, status=FindingStatus.rejected)

    retry = heuristic_policy().decide(belief, [rejected])
    give_up = heuristic_policy().decide(belief, [rejected, rejected])

    assert retry.kind == ActionKind.search_candidates
    assert retry.brief["widen"] == {"delta_t": 2}
    assert give_up.kind == ActionKind.terminate
    assert give_up.brief["reason"] == f"candidates-retrieved not reached after 2 attempt(s): {EMPTY_TRACE_NOTE}"


def test_policy_does_not_retry_without_a_widening_tier():
    rejected = Finding(source_action=ActionKind.resolve_target, status=FindingStatus.rejected)

    assert heuristic_policy().decide(BeliefState.fresh(), [rejected]).kind == ActionKind.terminate


def test_action_digest_depends_on_brief():
    a = Action(kind=ActionKind.validate, brief={"attempt": 1})
    b = Action(kind=ActionKind.validate, brief={"attempt": 2})

    assert a.digest != b.digest
    assert a.digest == Action(kind=ActionKind.score, brief={"attempt": 1}).digest


def test_accepted_finding_completes_its_milestone():
    finding = Finding(source_action=ActionKind.resolve_target).judged(True)

    belief = accept_finding(BeliefState.fresh(), finding)

    assert belief.is_set(Milestone.target_resolved)
    assert belief.bit_string() == "100000"


@pytest.mark.parametrize("status", [FindingStatus.rejected, FindingStatus.pending])
def test_unaccepted_finding_leaves_belief_unchanged(status):
    finding = Finding(source_action=ActionKind.resolve_target, status=status)

    assert accept_finding(BeliefState.fresh(), finding) == BeliefState.fresh()


def test_six_acceptances_complete_the_belief():
    belief = BeliefState.fresh()
    for kind in HAPPY_PATH:
        belief = accept_finding(belief, Finding(source_action=kind).judged(True))

    assert belief.all_done()
    assert belief.first_open() is None


def test_accepting_a_completed_milestone_is_a_protocol_violation():
    belief = BeliefState.with_milestones(Milestone.target_resolved)

    with pytest.raises(ProtocolViolationError):
        accept_finding(belief, Finding(source_action=ActionKind.resolve_target).judged(True))


def test_terminate_findings_carry_no_milestone():
    with pytest.raises(ProtocolViolationError):
        accept_finding(BeliefState.fresh(), Finding(source_action=ActionKind.terminate).judged(True))


def test_belief_requires_one_bit_per_milestone():
    with pytest.raises(ValueError):  # noqa: PT011
        BeliefState(bits=(True, False))


def test_investigation_matches_single_trace(planted_world):
    link = planted_world.truth.links[0]

    outcome = step_loop(heuristic_policy(), _env(planted_world, link))

    assert outcome.succeeded
    assert outcome.failure is None
    assert outcome.belief.all_done()
    assert [r.action for r in outcome.transcript] == HAPPY_PATH
    assert all(r.finding == FindingStatus.accepted for r in outcome.transcript)
    assert outcome.result.rank_of(link.src.key) == 1
    target = planted_world.store.get_transfer_by_id(link.dst.chain, link.dst.tx_id)
    direct = trace_single(planted_world.store, planted_world.oracle, target, outcome.config)
    assert outcome.result.candidates == direct.candidates


@pytest.mark.parametrize("seed", EQUIVALENCE_SEEDS)
def test_investigation_matches_single_trace_on_every_link(seed):
    world = seeded_world(seed)

    for link in world.truth.links:
        outcome = step_loop(heuristic_policy(), _env(world, link))
        target = world.store.get_transfer_by_id(link.dst.chain, link.dst.tx_id)
        direct = trace_single(world.store, world.oracle, target, outcome.config)

        assert outcome.succeeded, link.dst.key
        assert outcome.result.candidates == direct.candidates
        assert outcome.result.rank_of(link.src.key) is not None


def test_transcript_records_belief_before_each_step(planted_world):
    outcome = step_loop(heuristic_policy(), _env(planted_world, planted_world.truth.links[1]))

    assert [r.bits for r in outcome.transcript] == ["000000", "100000", "110000", "111000", "111100", "111110"]
    assert [r.step for r in outcome.transcript] == [1, 2, 3, 4, 5, 6]
    assert outcome.belief.step_count == 6


def test_late_swap_is_found_after_widening_the_window():
    spec = WorldSpec(seed=17, pairs=["BTC/BTC->ETH/ETH"], swap_count=1, duration=86400, delay_range=(3700, 3800))
    world = generate_world(spec)
    link = world.truth.links[0]
    target = world.store.get_transfer_by_id(link.dst.chain, link.dst.tx_id)

    outcome = step_loop(heuristic_policy(), _env(world, link))

    assert trace_single(world.store, world.oracle, target, TraceConfig()).candidates == []
    assert outcome.succeeded
    assert outcome.config.delta_t == 7200
    assert [r.finding for r in outcome.transcript if r.action == ActionKind.search_candidates] == [
        FindingStatus.rejected,
        FindingStatus.accepted,
    ]
    assert outcome.result.rank_of(link.src.key) == 1
    assert outcome.result.candidates == trace_single(world.store, world.oracle, target, outcome.config).candidates


def test_target_without_candidates_fails_like_single_trace():
    target = make_transfer("dst", chain="ETH", ts=50_000, amt="14")
    store = store_of(target)
    oracle = constant_oracle({("ETH", "BTC"): "15"})
    env = InvestigationEnv(store=store, oracle=oracle, target=target.ref)

    outcome = step_loop(heuristic_policy(), env)

    assert not outcome.succeeded
    assert outcome.failure.open_milestone == Milestone.candidates_retrieved
    assert outcome.transcript[-1].action == ActionKind.terminate
    assert outcome.failure.reason.endswith(EMPTY_TRACE_NOTE)
    assert outcome.result is None
    assert trace_single(store, oracle, target, outcome.config).candidates == []


def test_unknown_target_fails_at_resolution():
    env = InvestigationEnv(store=store_of(), oracle=PriceOracle(), target=TransferRef("ETH", "missing"))

    outcome = step_loop(heuristic_policy(), env)

    assert outcome.failure.open_milestone == Milestone.target_resolved
    assert outcome.transcript[0].finding == FindingStatus.rejected


def test_empty_price_lookup_is_rejected():
    target = make_transfer("dst", chain="ETH", ts=50_000, amt="14")
    env = InvestigationEnv(store=store_of(target), oracle=PriceOracle(), target=target.ref)

    outcome = step_loop(heuristic_policy(), env)

    assert outcome.failure.open_milestone == Milestone.prices_resolved


def test_complete_belief_terminates_without_tool_calls(planted_world):
    belief = BeliefState.with_milestones(*MILESTONES)

    outcome = step_loop(heuristic_policy(), _env(planted_world, planted_world.truth.links[0]), belief=belief)

    assert len(outcome.transcript) == 1
    assert outcome.transcript[0].action == ActionKind.terminate
    assert outcome.transcript[0].finding is None
    assert outcome.failure.reason == "all milestones complete"
    assert outcome.result is None


def test_budget_exhaustion_reports_the_open_milestone(planted_world):
    outcome = step_loop(heuristic_policy(), _env(planted_world, planted_world.truth.links[0]), budget=3)

    assert not outcome.succeeded
    assert outcome.failure.reason == "step budget of 3 exhausted"
    assert outcome.failure.open_milestone == Milestone.candidates_retrieved
    assert len(outcome.transcript) == 3


def test_premature_action_is_a_protocol_violation(planted_world):
    with pytest.raises(ProtocolViolationError):
        step_loop(FixedPolicy(ActionKind.score), _env(planted_world, planted_world.truth.links[0]))


def test_pruned_action_is_a_protocol_violation(planted_world):
    belief = BeliefState.with_milestones(Milestone.target_resolved)

    with pytest.raises(ProtocolViolationError):
        step_loop(FixedPolicy(ActionKind.resolve_target), _env(planted_world, planted_world.truth.links[0]), belief)


def test_budget_must_be_positive(planted_world):
    with pytest.raises(ConfigError):
        step_loop(heuristic_policy(), _env(planted_world, planted_world.truth.links[0]), budget=0)


def test_default_budget_covers_the_happy_path_with_retries():
    assert DEFAULT_BUDGET >= len(HAPPY_PATH) + 2


def test_outcome_report_shape(planted_world):
    report = step_loop(heuristic_policy(), _env(planted_world, planted_world.truth.links[0])).to_report()

    assert report["belief"] == {"bits": "111111", "step_count": 6}
    assert report["failure"] is None
    assert report["result"]["candidates"][0]["rank"] == 1
    assert [r["action"] for r in report["transcript"]] == [k.value for k in HAPPY_PATH]
