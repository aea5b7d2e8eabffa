import functools
import random
from collections.abc import Iterable, Sequence
from decimal import Decimal

from crosschain_tracer.ledger import TransferStore
from crosschain_tracer.models import ChainAsset, OutPoint, Transfer, TxOutput, default_registry
from crosschain_tracer.price_oracle import PriceOracle, PriceSeries
from crosschain_tracer.simgen import World, WorldSpec, generate_world
from crosschain_tracer.single_trace import TraceConfig, source_pairs_for, temporal_window


def make_transfer(  # noqa: PLR0913
    tx_id: str,
    chain: str = "ETH",
    ts: int = 0,
    amt: str | Decimal = "1",
    asset: str | None = None,
    spenders: Iterable[str] = ("a",),
    recipients: Iterable[str] = ("b",),
    ord: tuple[int, int] | None = None,
    inputs: Sequence[OutPoint] = (),
    outputs: Sequence[tuple[str, str | Decimal]] | None = None,
) -> Transfer:
    """Transfer with test-friendly defaults; utxo transfers pay their full amount to the first recipient."""
    amt = Decimal(amt)
    utxo = default_registry().chain(chain).model.value == "utxo"
    recipients = tuple(recipients)
    if outputs is None:
        outputs = [(recipients[0], amt)] if utxo else []
    return Transfer(
        tx_id=tx_id,
        chain=chain,
        ts=ts,
        asset=asset or chain,
        amt=amt,
        spenders=frozenset(spenders),
        recipients=frozenset(recipients),
        ord=ord if ord is not None else (ts, 0),
        inputs=tuple(inputs),
        outputs=tuple(TxOutput(a, Decimal(x)) for a, x in outputs),
    )


def make_series(base: str, quote: str, samples: Sequence[tuple[int, str | int]]) -> PriceSeries:
    return PriceSeries(base=base, quote=quote, samples=tuple((ts, Decimal(str(r))) for ts, r in samples))


def constant_oracle(rates: dict[tuple[str, str], str], ts: int = 0) -> PriceOracle:
    return PriceOracle(make_series(base, quote, [(ts, rate)]) for (base, quote), rate in rates.items())


def random_walk_series(rng: random.Random, base: str, quote: str, n: int, start: float, step: int = 60) -> PriceSeries:
    rate = start
    samples = []
    for i in range(n):
        rate *= 1 + rng.uniform(-0.002, 0.002)
        samples.append((i * step, Decimal(f"{rate:.8f}")))
    return PriceSeries(base=base, quote=quote, samples=tuple(samples))


# brute-force oracles


def scan_rate_at(series: PriceSeries, t: int) -> Decimal | None:
    latest = None
    for ts, rate in series.samples:
        if ts <= t:
            latest = rate
    return latest


def scan_range(series: PriceSeries, lo: int, hi: int) -> tuple[Decimal, Decimal] | None:
    rates = [rate for ts, rate in series.samples if lo < ts <= hi]
    at_lo = scan_rate_at(series, lo)
    if at_lo is not None:
        rates.append(at_lo)
    if not rates:
        return None
    return min(rates), max(rates)


def scan_search(
    transfers: Iterable[Transfer],
    chain: str,
    asset: str,
    window: tuple[int, int],
    amounts: tuple[Decimal, Decimal],
) -> list[Transfer]:
    found = [
        t
        for t in transfers
        if t.chain == chain and t.asset == asset and window[0] <= t.ts <= window[1] and amounts[0] <= t.amt <= amounts[1]
    ]
    return sorted(found, key=lambda t: (t.ts, t.tx_id))


def scan_accepted(
    transfers: Sequence[Transfer],
    oracle: PriceOracle,
    target: Transfer,
    cfg: TraceConfig,
    source_pairs: Iterable[ChainAsset],
) -> set[str]:
    """Keys of every transfer satisfying the window, value-interval and forward-validation predicates."""
    lo, hi = temporal_window(target, cfg)
    accepted = set()
    for pair in source_pairs:
        window_range = scan_range(oracle.series(pair.asset, target.asset), lo, hi)
        if window_range is None:
            continue
        v_lo = target.amt * window_range[0] * (1 - cfg.eps_p)
        v_hi = target.amt * window_range[1] * (1 + cfg.eps_p)
        for t in scan_search(transfers, pair.chain, pair.asset, (lo, hi), (v_lo, v_hi)):
            if t.key == target.key or t.ts > target.ts:
                continue
            tight = scan_range(oracle.series(target.asset, t.asset), max(t.ts - cfg.w_p, 0), t.ts + cfg.w_p)
            if tight is None:
                continue
            v = t.amt * tight[1]
            if v >= target.amt and (v == 0 or (v - target.amt) / v <= cfg.f_max):
                accepted.add(t.key)
    return accepted


def scan_predecessors_account(transfers: Iterable[Transfer], t: Transfer, k: int) -> list[Transfer]:
    """Latest ``k`` transfers paying any spender of ``t`` at or before its position."""
    found: dict[str, Transfer] = {}
    for address in t.spenders:
        incoming = sorted(
            (p for p in transfers if p.chain == t.chain and address in p.recipients and p.tx_id != t.tx_id and p.ord <= t.ord),
            key=lambda p: p.order_key,
        )
        for p in incoming[-k:]:
            found[p.tx_id] = p
    return sorted(found.values(), key=lambda p: p.order_key)


def store_of(*transfers: Transfer) -> TransferStore:
    return TransferStore(transfers)


def sorted_keys(transfers: Iterable[Transfer]) -> list[str]:
    return sorted(t.key for t in transfers)


EQUIVALENCE_SEEDS = (1, 2, 3)


@functools.cache
def seeded_world(seed: int) -> World:
    """Three-pair world with background traffic, shared between the equivalence tests."""
    return generate_world(
        WorldSpec(
            seed=seed,
            pairs=["BTC/BTC->ETH/ETH", "ETH/ETH->BTC/BTC", "LTC/LTC->ETH/ETH"],
            swap_count=6,
            duration=86400,
            background_rate=0.05,
        )
    )


def priced_source_pairs(world: World, target: Transfer, cfg: TraceConfig) -> list[ChainAsset]:
    return [p for p in source_pairs_for(world.store, target, cfg) if p.asset in world.assets]


def random_utxo_topology(rng: random.Random) -> list[Transfer]:
    """BTC transfers where each one spends at most one earlier output, owned by its spender."""
    addresses = [f"a{i}" for i in range(rng.randint(3, 8))]
    unspent: list[tuple[OutPoint, str]] = []
    transfers = []
    for i in range(rng.randint(5, 25)):
        spender, inputs = rng.choice(addresses), []
        if unspent and rng.random() < 0.7:
            outpoint, spender = unspent.pop(rng.randrange(len(unspent)))
            inputs = [outpoint]
        recipients = rng.sample(addresses, rng.randint(1, 2))
        t = make_transfer(
            f"t{i}",
            chain="BTC",
            ts=10 * (i + 1),
            spenders=[spender],
            recipients=recipients,
            inputs=inputs,
            outputs=[(r, "1") for r in recipients],
        )
        transfers.append(t)
        unspent.extend((OutPoint(t.tx_id, j), r) for j, r in enumerate(recipients))
    return transfers


def scan_ancestor_spenders(transfers: Sequence[Transfer], t: Transfer, h: int) -> set[str]:
    """Spenders of the transfers reachable within ``h`` hops by following spent outpoints."""
    by_id = {x.tx_id: x for x in transfers}
    frontier, seen, spenders = [t], {t.tx_id}, set()
    for _ in range(h):
        parents = [by_id[op.tx_id] for x in frontier for op in x.inputs if op.tx_id in by_id]
        frontier = [p for p in parents if p.tx_id not in seen]
        seen.update(p.tx_id for p in frontier)
        spenders.update(a for p in frontier for a in p.spenders)
    return spenders
