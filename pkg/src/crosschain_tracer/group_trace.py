"""Joint tracing over a suspected Sybil cluster of destination transfers.

Each target is traced on its own (fanned out over a thread pool), the accepted source candidates are expanded
upstream on their own chain, and every target casts at most one vote for each ancestor spender address.
"""

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from crosschain_tracer.constants import DEFAULT_ANCESTRY_DEPTH, DEFAULT_VOTE_THRESHOLD
from crosschain_tracer.ledger import AncestryOptions, TransferStore
from crosschain_tracer.models import Transfer, TransferRef
from crosschain_tracer.price_oracle import PriceOracle
from crosschain_tracer.single_trace import TraceConfig, TraceResult, trace_single

logger = logging.getLogger(__name__)


class GroupQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    targets: list[TransferRef] = Field(min_length=1)
    h: int = Field(default=DEFAULT_ANCESTRY_DEPTH, ge=1)
    ancestry: AncestryOptions = Field(default_factory=AncestryOptions)
    trace: TraceConfig = Field(default_factory=TraceConfig)
    vote_threshold: int = Field(default=DEFAULT_VOTE_THRESHOLD, ge=2)
    top1_only: bool = False

    @field_validator("targets", mode="before")
    @classmethod
    def parse_refs(cls, v: Any) -> Any:  # noqa: ANN102, ANN401
        if isinstance(v, list):
            return [TransferRef.parse(x) if isinstance(x, str) else x for x in v]
        return v

    @model_validator(mode="after")
    def targets_distinct(self: "GroupQuery") -> "GroupQuery":
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("group targets must be pairwise distinct")
        return self


class Witness(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: str
    ancestor: str


class VoteEntry(BaseModel):
    hit_count: int = Field(ge=0)
    supporting_targets: list[str] = Field(default_factory=list)
    witness_paths: dict[str, Witness] = Field(default_factory=dict)


class VoteTable(BaseModel):
    entries: dict[str, VoteEntry] = Field(default_factory=dict)

    def hit(self: "VoteTable", address: str) -> int:
        entry = self.entries.get(address)
        return 0 if entry is None else entry.hit_count


class GroupResult(BaseModel):
    per_target: dict[str, TraceResult]
    errors: dict[str, str] = Field(default_factory=dict)
    votes: VoteTable
    common_ancestors: list[tuple[str, int]]
    degenerated_targets: list[str]

    def to_report(self: "GroupResult") -> dict[str, Any]:
        return {
            "per_target": {k: v.to_report() for k, v in self.per_target.items()},
            "errors": self.errors,
            "common_ancestors": [
                {
                    "address": address,
                    "hit": hit,
                    "supporting_targets": self.votes.entries[address].supporting_targets,
                    "witness_paths": {
                        k: w.model_dump() for k, w in sorted(self.votes.entries[address].witness_paths.items())
                    },
                }
                for address, hit in self.common_ancestors
            ],
            "degenerated_targets": self.degenerated_targets,
        }


def ancestor_witnesses(
    store: TransferStore,
    t: Transfer,
    h: int,
    opts: AncestryOptions | None = None,
) -> dict[str, Transfer]:
    """Ancestor spender addresses of ``t``, each mapped to its smallest-ord upstream transfer."""
    witnesses: dict[str, Transfer] = {}
    for pred in store.predecessors_within_h(t, h, opts):
        for address in pred.spenders:
            known = witnesses.get(address)
            if known is None or pred.order_key < known.order_key:
                witnesses[address] = pred
    return witnesses


def ancestor_spenders(
    store: TransferStore,
    t: Transfer,
    h: int,
    opts: AncestryOptions | None = None,
) -> set[str]:
    return set(ancestor_witnesses(store, t, h, opts))


def vote_common_ancestors(
    candidates_per_target: Mapping[str, Sequence[Transfer]],
    store: TransferStore,
    h: int,
    opts: AncestryOptions | None = None,
) -> VoteTable:
    table = VoteTable()
    for target_key in sorted(candidates_per_target):
        # address -> (ancestor, source) with the smallest ancestor position across this target's candidates
        union: dict[str, tuple[Transfer, Transfer]] = {}
        for source in candidates_per_target[target_key]:
            for address, ancestor in ancestor_witnesses(store, source, h, opts).items():
                known = union.get(address)
                if known is None or (ancestor.order_key, source.key) < (known[0].order_key, known[1].key):
                    union[address] = (ancestor, source)
        for address, (ancestor, source) in union.items():
            entry = table.entries.setdefault(address, VoteEntry(hit_count=0))
            entry.hit_count += 1
            entry.supporting_targets.append(target_key)
            entry.witness_paths[target_key] = Witness(source=source.key, ancestor=ancestor.key)
    table.entries = dict(sorted(table.entries.items()))
    return table


def _trace_isolated(
    store: TransferStore,
    oracle: PriceOracle,
    ref: TransferRef,
    cfg: TraceConfig,
) -> TraceResult | Exception:
    try:
        return trace_single(store, oracle, store.get_transfer_by_id(ref.chain, ref.tx_id), cfg)
    except Exception as e:  # noqa: BLE001
        logger.warning(f"group target {ref.key} failed: {e}")
        return e


def trace_group(
    store: TransferStore,
    oracle: PriceOracle,
    q: GroupQuery,
    max_workers: int = 4,
) -> GroupResult:
    refs = sorted(q.targets)
    with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="cct-trace") as pool:
        outcomes = list(pool.map(lambda ref: _trace_isolated(store, oracle, ref, q.trace), refs))

    per_target: dict[str, TraceResult] = {}
    errors: dict[str, str] = {}
    candidates: dict[str, list[Transfer]] = {}
    for ref, outcome in zip(refs, outcomes, strict=True):
        if isinstance(outcome, Exception):
            errors[ref.key] = f"{type(outcome).__name__}: {outcome}"
            continue
        per_target[ref.key] = outcome
        accepted = outcome.candidates[:1] if q.top1_only else outcome.candidates
        candidates[ref.key] = [store.get_transfer_by_id(c.link.src.chain, c.link.src.tx_id) for c in accepted]

    votes = vote_common_ancestors(candidates, store, q.h, q.ancestry)
    common = sorted(
        ((address, e.hit_count) for address, e in votes.entries.items() if e.hit_count >= q.vote_threshold),
        key=lambda x: (-x[1], x[0]),
    )
    supported = {k for address, _ in common for k in votes.entries[address].supporting_targets}
    degenerated = sorted(ref.key for ref in refs if ref.key not in supported)
    logger.info(
        f"group trace over {len(refs)} targets: {len(votes.entries)} ancestor addresses, "
        f"{len(common)} common ancestors, {len(degenerated)} degenerated targets"
    )
    return GroupResult(
        per_target=per_target,
        errors=errors,
        votes=votes,
        common_ancestors=common,
        degenerated_targets=degenerated,
    )
