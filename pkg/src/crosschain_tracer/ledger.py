"""Transfer store: time/amount indexes and same-chain predecessor relations.

The store is built once from an iterable of transfers and is read-only afterwards, so it can be shared by
concurrent traces.
"""

import logging
from bisect import bisect_left, bisect_right
from collections import defaultdict
from collections.abc import Iterable, Iterator
from decimal import Decimal

from pydantic import BaseModel, ConfigDict, Field

from crosschain_tracer.constants import DEFAULT_ACCOUNT_LOOKBACK, DEFAULT_BRANCHING_CAP
from crosschain_tracer.models import (
    ChainAsset,
    ChainModel,
    ChainRegistry,
    DataValidationError,
    OutPoint,
    RangeError,
    Transfer,
    TransferNotFoundError,
    check_utxo_shape,
    default_registry,
)

logger = logging.getLogger(__name__)


class AncestryOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    branching_cap: int = Field(default=DEFAULT_BRANCHING_CAP, ge=1, description="max predecessors kept per node per hop")
    dust_thresholds: dict[str, Decimal] = Field(
        default_factory=dict,
        description="per-asset absolute minimum amount, transfers below it are not expanded",
    )

    def is_dust(self: "AncestryOptions", transfer: Transfer) -> bool:
        threshold = self.dust_thresholds.get(transfer.asset)
        return threshold is not None and transfer.amt < threshold


def _prune_key(t: Transfer) -> tuple[Decimal, tuple[int, int], str]:
    # largest amount first, ties by smaller ord
    return -t.amt, t.ord, t.tx_id


class _PairIndex:
    """Time-ordered and amount-ordered views over the transfers of one (chain, asset) pair."""

    def __init__(self: "_PairIndex", transfers: list[Transfer]) -> None:
        self.by_time = sorted(transfers, key=lambda t: (t.ts, t.tx_id))
        self.time_keys = [t.ts for t in self.by_time]
        self.by_amount = sorted(transfers, key=lambda t: (t.amt, t.ts, t.tx_id))
        self.amount_keys = [t.amt for t in self.by_amount]

    def search(self: "_PairIndex", time_lo: int, time_hi: int, amt_lo: Decimal, amt_hi: Decimal) -> list[Transfer]:
        t_lo, t_hi = bisect_left(self.time_keys, time_lo), bisect_right(self.time_keys, time_hi)
        a_lo, a_hi = bisect_left(self.amount_keys, amt_lo), bisect_right(self.amount_keys, amt_hi)
        # scan whichever slice is narrower and filter on the other dimension
        if t_hi - t_lo <= a_hi - a_lo:
            return [t for t in self.by_time[t_lo:t_hi] if amt_lo <= t.amt <= amt_hi]
        hits = [t for t in self.by_amount[a_lo:a_hi] if time_lo <= t.ts <= time_hi]
        return sorted(hits, key=lambda t: (t.ts, t.tx_id))


class TransferStore:
    def __init__(
        self: "TransferStore",
        transfers: Iterable[Transfer],
        registry: ChainRegistry | None = None,
        account_lookback: int = DEFAULT_ACCOUNT_LOOKBACK,
    ) -> None:
        if account_lookback < 1:
            raise DataValidationError(f"account_lookback must be >= 1, got {account_lookback}")
        self.registry = registry if registry is not None else default_registry()
        self.account_lookback = account_lookback
        self._by_id: dict[tuple[str, str], Transfer] = {}
        pairs: dict[ChainAsset, list[Transfer]] = defaultdict(list)
        incoming: dict[tuple[str, str], list[Transfer]] = defaultdict(list)

        for t in transfers:
            check_utxo_shape(t, self.registry)
            if (t.chain, t.tx_id) in self._by_id:
                raise DataValidationError(f"duplicate transfer {t.key}")
            self._by_id[(t.chain, t.tx_id)] = t
            pairs[ChainAsset(t.chain, t.asset)].append(t)
            if self.registry.chain(t.chain).model == ChainModel.account:
                for address in t.recipients:
                    incoming[(t.chain, address)].append(t)

        self._pairs = {k: _PairIndex(v) for k, v in pairs.items()}
        self._incoming = {k: sorted(v, key=lambda t: t.order_key) for k, v in incoming.items()}
        self._incoming_keys = {k: [t.order_key for t in v] for k, v in self._incoming.items()}
        self._outpoint_owner: dict[tuple[str, OutPoint], Transfer] = {
            (t.chain, OutPoint(t.tx_id, i)): t for t in self._by_id.values() for i in range(len(t.outputs))
        }
        logger.info(f"transfer store built: {len(self._by_id)} transfers over {len(self._pairs)} chain/asset pairs")

    def __len__(self: "TransferStore") -> int:
        return len(self._by_id)

    def __iter__(self: "TransferStore") -> Iterator[Transfer]:
        return iter(sorted(self._by_id.values(), key=lambda t: (t.chain, t.order_key)))

    def __contains__(self: "TransferStore", t: object) -> bool:
        return isinstance(t, Transfer) and self._by_id.get((t.chain, t.tx_id)) is not None

    def _require(self: "TransferStore", t: Transfer) -> Transfer:
        self.registry.chain(t.chain)
        stored = self._by_id.get((t.chain, t.tx_id))
        if stored is None:
            raise TransferNotFoundError(t.chain, t.tx_id)
        return stored

    def get_transfer_by_id(self: "TransferStore", chain: str, tx_id: str) -> Transfer:
        t = self._by_id.get((chain, tx_id))
        if t is None:
            raise TransferNotFoundError(chain, tx_id)
        return t

    def search_transfers(  # noqa: PLR0913
        self: "TransferStore",
        chain: str,
        asset: str,
        time_lo: int,
        time_hi: int,
        amt_lo: Decimal,
        amt_hi: Decimal,
    ) -> list[Transfer]:
        """Transfers on (chain, asset) with ts in [time_lo, time_hi] and amt in [amt_lo, amt_hi], by (ts, txId)."""
        if time_lo > time_hi:
            raise RangeError(f"time range is empty: [{time_lo}, {time_hi}]")
        if amt_lo > amt_hi:
            raise RangeError(f"amount range is empty: [{amt_lo}, {amt_hi}]")
        self.registry.chain(chain)
        index = self._pairs.get(ChainAsset(chain, asset))
        if index is None:
            return []
        return index.search(time_lo, time_hi, amt_lo, amt_hi)

    def predecessors(self: "TransferStore", t: Transfer) -> list[Transfer]:
        """Direct same-chain value-flow predecessors of ``t``, ordered by (ord, txId)."""
        t = self._require(t)
        if self.registry.chain(t.chain).model == ChainModel.utxo:
            found = {
                owner.tx_id: owner
                for inp in t.inputs
                if (owner := self._outpoint_owner.get((t.chain, inp))) is not None and owner.ord <= t.ord
            }
            return sorted(found.values(), key=lambda p: p.order_key)

        found = {}
        for address in sorted(t.spenders):
            incoming = self._incoming.get((t.chain, address), [])
            end = bisect_right(self._incoming_keys.get((t.chain, address), []), (t.ord, "\U0010ffff"))
            window = [p for p in incoming[max(0, end - self.account_lookback - 1) : end] if p.tx_id != t.tx_id]
            for p in window[-self.account_lookback :]:
                found[p.tx_id] = p
        return sorted(found.values(), key=lambda p: p.order_key)

    def predecessors_within_h(
        self: "TransferStore",
        t: Transfer,
        h: int,
        opts: AncestryOptions | None = None,
    ) -> list[Transfer]:
        """Predecessors reachable within ``h`` hops, breadth first, excluding ``t`` itself.

        At each node the predecessors are dust-filtered and then capped at ``opts.branching_cap``, keeping the
        largest amounts (ties by smaller ord).
        """
        return [p for p, _ in self.ancestry(t, h, opts)]

    def ancestry(
        self: "TransferStore",
        t: Transfer,
        h: int,
        opts: AncestryOptions | None = None,
    ) -> list[tuple[Transfer, int]]:
        """Like :meth:`predecessors_within_h` but pairs each ancestor with the hop at which it was reached."""
        if h < 1:
            raise RangeError(f"ancestry depth must be >= 1, got {h}")
        opts = opts or AncestryOptions()
        root = self._require(t)
        seen = {root.tx_id}
        frontier = [root]
        found: list[tuple[Transfer, int]] = []
        for depth in range(1, h + 1):
            next_frontier: list[Transfer] = []
            for node in frontier:
                preds = [p for p in self.predecessors(node) if not opts.is_dust(p)]
                for p in sorted(preds, key=_prune_key)[: opts.branching_cap]:
                    if p.tx_id in seen:
                        continue
                    seen.add(p.tx_id)
                    next_frontier.append(p)
                    found.append((p, depth))
            if not next_frontier:
                break
            frontier = sorted(next_frontier, key=lambda p: p.order_key)
        return sorted(found, key=lambda x: x[0].order_key)
