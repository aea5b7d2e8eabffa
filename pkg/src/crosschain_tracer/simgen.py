"""Seeded synthetic multi-chain worlds with exact ground truth.

A world holds background traffic, per-asset USD random walks (exposed as one price series per asset pair),
bridge swaps priced so that the planted fee is exactly the fee the value check recovers, and optionally
Sybil fan-out scenarios planted on top.
"""

import logging
import math
from bisect import bisect_left, bisect_right, insort
from collections.abc import Sequence
from decimal import ROUND_DOWN, Decimal
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from numpy.random import SFC64, Generator, SeedSequence
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from crosschain_tracer.constants import (
    DEFAULT_ANCESTRY_DEPTH,
    PRICE_RESOLUTION_SECONDS,
    PRICES_DIR,
    SYBIL_FILE,
    TRANSFERS_FILE,
    TRUTH_FILE,
)
from crosschain_tracer.dataset_io import (
    ManifestFile,
    Provenance,
    SwapRecord,
    Tier,
    apply_tier_filter,
    registry_thresholds,
    write_manifest,
    write_prices,
    write_sybil,
    write_tier,
    write_transfers,
    write_truth,
)
from crosschain_tracer.ledger import TransferStore
from crosschain_tracer.models import (
    ChainAsset,
    ChainModel,
    ChainRegistry,
    ConfigError,
    DataValidationError,
    GroundTruth,
    GroundTruthLink,
    OutPoint,
    SwapPair,
    SybilRoot,
    Transfer,
    TxOutput,
    default_registry,
)
from crosschain_tracer.price_oracle import PriceOracle, PriceSeries, rate_at

logger = logging.getLogger(__name__)

PRICE_MARGIN_SECONDS = 6 * 3600
MAX_PLANT_ATTEMPTS = 10_000
MAX_AMOUNT_RESAMPLES = 64
BACKGROUND_USD = (10.0, 1_000_000.0)
DEFAULT_USD_PRICES = {"BTC": "60000", "ETH": "3000", "DOGE": "0.15", "LTC": "80"}


def _dec(x: float) -> Decimal:
    return Decimal(f"{x:.12g}")


def _unit(precision: int) -> Decimal:
    return Decimal(1).scaleb(-precision)


class WorldSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0, lt=2**64)
    chains: tuple[str, ...] = Field(default=(), description="extra background-only chains")
    pairs: tuple[SwapPair, ...] = Field(default=(), description="swap pairs, all ordered cross-chain pairs if empty")
    start_ts: int = Field(default=1_700_000_000, ge=PRICE_MARGIN_SECONDS)
    duration: int = Field(default=7 * 86400, gt=0)
    background_rate: float = Field(default=0.0, ge=0, description="mean background transfers per minute per chain")
    swap_count: int = Field(default=100, ge=0, description="planted swaps per pair")
    fee_range: tuple[Decimal, Decimal] = (Decimal("0.002"), Decimal("0.03"))
    delay_range: tuple[int, int] = (60, 1800)
    price_volatility: float = Field(default=0.0005, ge=0, lt=0.1, description="per-minute log-price sigma")
    dust_rate: float = Field(default=0.0, ge=0, le=1)
    dust_usd: float = Field(default=1.0, gt=0)
    allow_decoys: bool = False
    decoys_per_swap: int = Field(default=3, ge=0)
    swap_value_usd: tuple[float, float] = (1000.0, 100_000.0)
    usd_prices: dict[str, Decimal] = Field(default_factory=lambda: {k: Decimal(v) for k, v in DEFAULT_USD_PRICES.items()})
    trace_window: int = Field(default=3600, gt=0, description="search window kept free of accidental collisions")
    amount_band: Decimal = Field(default=Decimal("0.05"), ge=0, lt=1)
    bridge: str = "thorchain"

    @field_validator("pairs", mode="before")
    @classmethod
    def parse_pairs(cls, v: Any) -> Any:  # noqa: ANN102, ANN401
        if isinstance(v, list | tuple):
            return tuple(p if isinstance(p, SwapPair) else SwapPair.parse(p) for p in v)
        return v

    @model_validator(mode="after")
    def check_ranges(self: "WorldSpec") -> "WorldSpec":
        f_lo, f_hi = self.fee_range
        if not Decimal(0) <= f_lo <= f_hi < 1:
            raise ValueError(f"fee range must satisfy 0 <= lo <= hi < 1, got {self.fee_range}")
        d_lo, d_hi = self.delay_range
        if not 0 <= d_lo <= d_hi:
            raise ValueError(f"delay range must satisfy 0 <= lo <= hi, got {self.delay_range}")
        if self.duration <= d_hi:
            raise ValueError(f"duration {self.duration} must exceed the maximum delay {d_hi}")
        v_lo, v_hi = self.swap_value_usd
        if not 0 < v_lo <= v_hi:
            raise ValueError(f"swap value range must satisfy 0 < lo <= hi, got {self.swap_value_usd}")
        return self

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldSpec":  # noqa: ANN102
        try:
            return cls.model_validate(data)
        except (ValidationError, DataValidationError) as e:
            raise ConfigError(f"invalid world spec: {e}") from e

    @classmethod
    def from_yaml(cls, path: str | Path) -> "WorldSpec":  # noqa: ANN102
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f) or {})


class SybilSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    leaf_count: int = Field(default=5, ge=1)
    depth: int = Field(default=3, ge=1)
    src_pair: SwapPair | None = Field(default=None, description="defaults to the world's first pair")
    amounts_usd: tuple[float, ...] = Field(default=(), description="per-leaf swap values, sampled when empty")

    @field_validator("src_pair", mode="before")
    @classmethod
    def parse_pair(cls, v: Any) -> Any:  # noqa: ANN102, ANN401
        return None if v is None or isinstance(v, SwapPair) else SwapPair.parse(v)

    @model_validator(mode="after")
    def check_amounts(self: "SybilSpec") -> "SybilSpec":
        if self.amounts_usd and len(self.amounts_usd) != self.leaf_count:
            raise ValueError(f"{len(self.amounts_usd)} leaf amounts given for {self.leaf_count} leaves")
        if any(a <= 0 for a in self.amounts_usd):
            raise ValueError("leaf amounts must be positive")
        return self


class World(BaseModel):
    model_config = ConfigDict(frozen=True)

    spec: WorldSpec
    registry: ChainRegistry
    pairs: tuple[SwapPair, ...]
    assets: tuple[str, ...]
    transfers: tuple[Transfer, ...]
    prices: tuple[PriceSeries, ...]
    truth: GroundTruth
    dust_thresholds: dict[str, Decimal]

    @cached_property
    def store(self: "World") -> TransferStore:
        return TransferStore(self.transfers, self.registry)

    @cached_property
    def oracle(self: "World") -> PriceOracle:
        return PriceOracle(self.prices)

    def swap_records(self: "World") -> list[SwapRecord]:
        by_key = {t.key: t for t in self.transfers}
        records = []
        for link in self.truth.links:
            inbound, outbound = by_key[link.src.key], by_key[link.dst.key]
            records.append(
                SwapRecord(
                    inbound_tx_id=inbound.tx_id,
                    inbound_chain=inbound.chain,
                    inbound_asset=inbound.asset,
                    inbound_amt=inbound.amt,
                    inbound_ts=inbound.ts,
                    outbound_tx_id=outbound.tx_id,
                    outbound_chain=outbound.chain,
                    outbound_asset=outbound.asset,
                    outbound_amt=outbound.amt,
                    outbound_ts=outbound.ts,
                    bridge=link.bridge,
                    inbound_from=min(inbound.spenders),
                    outbound_to=min(outbound.recipients),
                )
            )
        return sorted(records, key=lambda r: (r.inbound_ts, r.inbound_chain, r.inbound_tx_id))


def default_pairs(registry: ChainRegistry) -> tuple[SwapPair, ...]:
    native = registry.chain_assets()
    return tuple(SwapPair(s, d) for s in native for d in native if s.chain != d.chain)


class _CollisionGuard:
    """Planted (ts, amount) points per chain/asset; a new point is clear if no planted point is near it."""

    def __init__(self: "_CollisionGuard", window: int, band: Decimal) -> None:
        self.window = window
        self.band = band
        self._ts: dict[ChainAsset, list[int]] = {}
        self._amts: dict[ChainAsset, list[Decimal]] = {}

    def clear(self: "_CollisionGuard", key: ChainAsset, ts: int, amt: Decimal) -> bool:
        ts_list = self._ts.get(key, [])
        lo, hi = bisect_left(ts_list, ts - self.window), bisect_right(ts_list, ts + self.window)
        return all(abs(a - amt) > self.band * max(a, amt) for a in self._amts[key][lo:hi]) if hi > lo else True

    def add(self: "_CollisionGuard", key: ChainAsset, ts: int, amt: Decimal) -> None:
        ts_list = self._ts.setdefault(key, [])
        i = bisect_right(ts_list, ts)
        ts_list.insert(i, ts)
        self._amts.setdefault(key, []).insert(i, amt)


def _collision_guard(spec: WorldSpec) -> _CollisionGuard:
    return _CollisionGuard(
        window=spec.trace_window + spec.delay_range[1] + 600,
        band=2 * (spec.amount_band + spec.fee_range[1]) + Decimal("0.02"),
    )


class _Builder:
    """Mutable scratch state of one generation run."""

    def __init__(self: "_Builder", spec: WorldSpec, registry: ChainRegistry, oracle: PriceOracle) -> None:
        self.spec = spec
        self.registry = registry
        self.oracle = oracle
        self.transfers: list[Transfer] = []
        self.links: list[GroundTruthLink] = []
        self._ids: set[str] = set()

    def tx_id(self: "_Builder", rng: Generator) -> str:
        while True:
            tx = rng.bytes(16).hex()
            if tx not in self._ids:
                self._ids.add(tx)
                return tx

    @staticmethod
    def address(rng: Generator, chain: str) -> str:
        return f"{chain.lower()}1{rng.bytes(10).hex()}"

    def quantize(self: "_Builder", asset: str, amt: Decimal) -> Decimal:
        return amt.quantize(_unit(self.registry.asset(asset).precision), rounding=ROUND_DOWN)

    def add(  # noqa: PLR0913
        self: "_Builder",
        rng: Generator,
        chain: str,
        asset: str,
        ts: int,
        spender: str,
        outputs: Sequence[tuple[str, Decimal]],
        inputs: Sequence[OutPoint] | None = None,
    ) -> Transfer:
        utxo = self.registry.chain(chain).model == ChainModel.utxo
        if utxo and inputs is None:
            # funded from outside the generated world
            inputs = (OutPoint(rng.bytes(16).hex(), 0),)
        t = Transfer(
            tx_id=self.tx_id(rng),
            chain=chain,
            ts=ts,
            asset=asset,
            amt=sum((a for _, a in outputs), Decimal(0)),
            spenders=frozenset({spender}),
            recipients=frozenset(addr for addr, _ in outputs),
            ord=(0, 0),
            inputs=tuple(inputs or ()) if utxo else (),
            outputs=tuple(TxOutput(addr, a) for addr, a in outputs) if utxo else (),
        )
        self.transfers.append(t)
        return t

    def vault(self: "_Builder", chain: str) -> str:
        return f"{self.spec.bridge}-vault-{chain.lower()}"

    def price_swap(
        self: "_Builder",
        rng: Generator,
        pair: SwapPair,
        t_s: int,
        value_usd: float,
        usd: "_UsdPrices",
    ) -> tuple[Decimal, Decimal, Decimal, int]:
        """(inbound amount, outbound amount, fee, delay) with A_d = A_s * P(t_s) * (1 - fee)."""
        f_lo, f_hi = self.spec.fee_range
        d_lo, d_hi = self.spec.delay_range
        fee = min(max(_dec(rng.uniform(float(f_lo), float(f_hi))).quantize(Decimal("0.000001")), f_lo), f_hi)
        delay = int(rng.integers(d_lo, d_hi, endpoint=True))
        a_s = self.quantize(pair.src.asset, _dec(value_usd) / usd.at(pair.src.asset, t_s))
        # destination-asset units per source-asset unit
        p = rate_at(self.oracle.series(pair.dst.asset, pair.src.asset), t_s)
        a_d = self.quantize(pair.dst.asset, a_s * p * (1 - fee))
        return a_s, a_d, fee, delay

    def plant_swap(  # noqa: PLR0913
        self: "_Builder",
        rng: Generator,
        pair: SwapPair,
        t_s: int,
        priced: tuple[Decimal, Decimal, Decimal, int],
        sender: str,
        inputs: Sequence[OutPoint] | None = None,
    ) -> tuple[Transfer, Transfer]:
        a_s, a_d, fee, delay = priced
        inbound = self.add(rng, pair.src.chain, pair.src.asset, t_s, sender, [(self.vault(pair.src.chain), a_s)], inputs)
        receiver = self.address(rng, pair.dst.chain)
        outbound = self.add(rng, pair.dst.chain, pair.dst.asset, t_s + delay, self.vault(pair.dst.chain), [(receiver, a_d)])
        self.links.append(
            GroundTruthLink(
                src=inbound.ref,
                dst=outbound.ref,
                bridge=self.spec.bridge,
                fee=fee,
                delay=delay,
                src_asset=pair.src.asset,
                dst_asset=pair.dst.asset,
            )
        )
        return inbound, outbound


class _UsdPrices:
    """Per-asset USD walks sampled every PRICE_RESOLUTION_SECONDS from ``t0``."""

    def __init__(self: "_UsdPrices", t0: int, walks: dict[str, np.ndarray]) -> None:
        self.t0 = t0
        self.walks = walks

    def at(self: "_UsdPrices", asset: str, ts: int) -> Decimal:
        walk = self.walks[asset]
        return _dec(float(walk[min(max((ts - self.t0) // PRICE_RESOLUTION_SECONDS, 0), len(walk) - 1)]))

    def pair_series(self: "_UsdPrices") -> list[PriceSeries]:
        assets = sorted(self.walks)
        series = []
        for i, base in enumerate(assets):
            for quote in assets[i + 1 :]:
                # units of base per unit of quote
                rates = self.walks[quote] / self.walks[base]
                samples = tuple(
                    (self.t0 + k * PRICE_RESOLUTION_SECONDS, _dec(float(r))) for k, r in enumerate(rates)
                )
                series.append(PriceSeries(base=base, quote=quote, samples=samples))
        return series


def _usd_walks(spec: WorldSpec, assets: Sequence[str]) -> _UsdPrices:
    rng = Generator(SFC64(SeedSequence(spec.seed).spawn(3)[0]))
    t0 = spec.start_ts - PRICE_MARGIN_SECONDS
    steps = (spec.duration + 2 * PRICE_MARGIN_SECONDS) // PRICE_RESOLUTION_SECONDS + 1
    walks = {}
    for asset in assets:
        if asset not in spec.usd_prices:
            raise ConfigError(f"no starting USD price for asset {asset}")
        shocks = rng.normal(0.0, spec.price_volatility, size=steps)
        shocks[0] = 0.0
        walks[asset] = float(spec.usd_prices[asset]) * np.exp(np.cumsum(shocks))
    return _UsdPrices(t0, walks)


def _log_uniform(rng: Generator, lo: float, hi: float) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi))) if hi > lo else lo


def _assign_ords(transfers: Sequence[Transfer], registry: ChainRegistry) -> tuple[Transfer, ...]:
    """Canonical positions: height ``ts // block-time``, intra-block index by (ts, txId)."""
    ordered = sorted(transfers, key=lambda t: (t.chain, t.ts, t.tx_id))
    result = []
    prev: tuple[str, int] | None = None
    index = 0
    for t in ordered:
        height = t.ts // registry.chain(t.chain).block_time
        index = index + 1 if prev == (t.chain, height) else 0
        prev = (t.chain, height)
        result.append(t.model_copy(update={"ord": (height, index)}))
    return tuple(result)


def _world_layout(spec: WorldSpec, registry: ChainRegistry) -> tuple[tuple[SwapPair, ...], list[str], list[str]]:
    pairs = spec.pairs or default_pairs(registry)
    for pair in pairs:
        for side in pair:
            registry.chain(side.chain)
            if side.chain not in registry.asset(side.asset).supported_chains:
                raise ConfigError(f"asset {side.asset} is not supported on chain {side.chain}")
        if pair.src.chain == pair.dst.chain:
            raise ConfigError(f"swap pair {pair} does not cross chains")
    chains = sorted({c for p in pairs for c in (p.src.chain, p.dst.chain)} | set(spec.chains))
    for chain in chains:
        registry.chain(chain)
    assets = sorted({a.id for a in registry.assets.values() if a.supported_chains & set(chains)})
    return pairs, chains, assets


def _plant_swaps(
    builder: _Builder,
    rng: Generator,
    pairs: Sequence[SwapPair],
    usd: _UsdPrices,
    guard: _CollisionGuard,
) -> list[tuple[SwapPair, Transfer, Transfer]]:
    spec = builder.spec
    d_hi = spec.delay_range[1]
    planted = []
    for pair in pairs:
        for _ in range(spec.swap_count):
            for _attempt in range(MAX_PLANT_ATTEMPTS):
                t_s = int(rng.integers(spec.start_ts, spec.start_ts + spec.duration - d_hi, endpoint=True))
                priced = builder.price_swap(rng, pair, t_s, _log_uniform(rng, *spec.swap_value_usd), usd)
                a_s, a_d, _, delay = priced
                if a_s <= 0 or a_d <= 0:
                    continue
                if guard.clear(pair.src, t_s, a_s) and guard.clear(pair.dst, t_s + delay, a_d):
                    break
            else:
                raise ConfigError(f"cannot plant {spec.swap_count} separable swaps for {pair}; increase duration")
            guard.add(pair.src, t_s, a_s)
            guard.add(pair.dst, t_s + delay, a_d)
            inbound, outbound = builder.plant_swap(rng, pair, t_s, priced, builder.address(rng, pair.src.chain))
            planted.append((pair, inbound, outbound))
    return planted


def _plant_decoys(
    builder: _Builder,
    rng: Generator,
    planted: Sequence[tuple[SwapPair, Transfer, Transfer]],
) -> int:
    """Amount-colliding transfers on the source pair, earlier than the true source inside the search window."""
    n = builder.spec.decoys_per_swap
    count = 0
    for pair, inbound, outbound in planted:
        room = inbound.ts - (outbound.ts - builder.spec.trace_window)
        spacing = max(1, room // (n + 1))
        for j in range(1, n + 1):
            amt = builder.quantize(pair.src.asset, inbound.amt * (1 + _dec(rng.uniform(0.0, 0.02))))
            sender, receiver = builder.address(rng, pair.src.chain), builder.address(rng, pair.src.chain)
            builder.add(rng, pair.src.chain, pair.src.asset, inbound.ts - j * spacing, sender, [(receiver, amt)])
            count += 1
    return count


def _background(  # noqa: PLR0913
    builder: _Builder,
    rng: Generator,
    chains: Sequence[str],
    usd: _UsdPrices,
    guard: _CollisionGuard,
) -> int:
    spec = builder.spec
    registry = builder.registry
    count = 0
    for chain in chains:
        assets = sorted(a.id for a in registry.assets.values() if chain in a.supported_chains and a.id in usd.walks)
        n = int(rng.poisson(spec.background_rate * spec.duration / 60))
        if n == 0 or not assets:
            continue
        addresses = [builder.address(rng, chain) for _ in range(max(8, n // 4))]
        utxo = registry.chain(chain).model == ChainModel.utxo
        unspent: list[tuple[int, OutPoint, str]] = []
        for ts in sorted(int(x) for x in rng.integers(spec.start_ts, spec.start_ts + spec.duration, size=n)):
            asset = assets[int(rng.integers(len(assets)))]
            dust = rng.random() < spec.dust_rate
            for _ in range(MAX_AMOUNT_RESAMPLES):
                value = rng.uniform(spec.dust_usd / 1000, spec.dust_usd) if dust else _log_uniform(rng, *BACKGROUND_USD)
                amt = max(builder.quantize(asset, _dec(value) / usd.at(asset, ts)), _unit(registry.asset(asset).precision))
                if dust or spec.allow_decoys or guard.clear(ChainAsset(chain, asset), ts, amt):
                    break
            else:
                amt = _unit(registry.asset(asset).precision)
            recipient = addresses[int(rng.integers(len(addresses)))]
            inputs = None
            spender = addresses[int(rng.integers(len(addresses)))]
            spendable = bisect_left(unspent, (ts,))
            if utxo and spendable and rng.random() < 0.5:
                _, outpoint, spender = unspent.pop(int(rng.integers(spendable)))
                inputs = (outpoint,)
            t = builder.add(rng, chain, asset, ts, spender, [(recipient, amt)], inputs)
            if utxo:
                insort(unspent, (ts, OutPoint(t.tx_id, 0), recipient))
            count += 1
    return count


def generate_world(spec: WorldSpec, registry: ChainRegistry | None = None) -> World:
    registry = registry or default_registry()
    pairs, chains, assets = _world_layout(spec, registry)
    _, swap_rng, background_rng = (Generator(SFC64(s)) for s in SeedSequence(spec.seed).spawn(3))

    usd = _usd_walks(spec, assets)
    prices = tuple(usd.pair_series())
    builder = _Builder(spec, registry, PriceOracle(prices))
    guard = _collision_guard(spec)
    planted = _plant_swaps(builder, swap_rng, pairs, usd, guard)
    decoys = _plant_decoys(builder, swap_rng, planted) if spec.allow_decoys else 0
    background = _background(builder, background_rng, chains, usd, guard)

    dust = {
        a: max(builder.quantize(a, _dec(spec.dust_usd) / usd.at(a, spec.start_ts)), _unit(registry.asset(a).precision))
        for a in assets
    }
    world = World(
        spec=spec,
        registry=registry,
        pairs=pairs,
        assets=tuple(assets),
        transfers=_assign_ords(builder.transfers, registry),
        prices=prices,
        truth=GroundTruth(links=tuple(builder.links)),
        dust_thresholds=dust,
    )
    logger.info(
        f"generated world seed={spec.seed}: {len(world.transfers)} transfers ({len(planted)} swaps, {decoys} decoys, "
        f"{background} background) over {len(chains)} chains, {len(prices)} price series"
    )
    return world


def plant_sybil(
    world: World,
    spec: SybilSpec,
    h_support: int = DEFAULT_ANCESTRY_DEPTH,
) -> tuple[World, GroundTruth]:
    """Fan-out laundering scenario: one root funds ``leaf_count`` leaves through ``depth`` hops each, every leaf
    swaps over the bridge to its own destination address.

    Returns the extended world and the ground-truth delta (the leaf links and the scenario root).
    """
    if spec.depth > h_support:
        raise ConfigError(f"sybil depth {spec.depth} exceeds the supported ancestry depth {h_support}")
    pair = spec.src_pair or world.pairs[0]
    if pair not in world.pairs:
        raise ConfigError(f"world has no {pair} swap pair")

    scenario = f"sybil-{len(world.truth.sybil)}"
    rng = Generator(SFC64(SeedSequence(world.spec.seed, spawn_key=(1000 + len(world.truth.sybil),))))
    ws = world.spec
    spacing = ws.trace_window + ws.delay_range[1] + 600
    lo, hi = ws.start_ts + (spec.depth + 1) * spacing, ws.start_ts + ws.duration - ws.delay_range[1]
    if lo > hi:
        raise ConfigError(f"world duration {ws.duration} is too short for a depth-{spec.depth} sybil tree")

    builder = _Builder(ws, world.registry, world.oracle)
    builder._ids = {t.tx_id for t in world.transfers}
    usd = _usd_walks(ws, world.assets)
    chain, asset = pair.src
    leaf_times = sorted(int(x) for x in rng.integers(lo, hi, size=spec.leaf_count, endpoint=True))
    values = list(spec.amounts_usd or (_log_uniform(rng, *ws.swap_value_usd) for _ in range(spec.leaf_count)))
    priced = [builder.price_swap(rng, pair, t, v, usd) for t, v in zip(leaf_times, values, strict=True)]

    guard = _collision_guard(ws)
    for t in world.transfers:
        if (t.chain, t.asset) == pair.src:
            guard.add(pair.src, t.ts, t.amt)
    for i in range(spec.leaf_count):
        for _ in range(MAX_AMOUNT_RESAMPLES):
            if ws.allow_decoys or guard.clear(pair.src, leaf_times[i], priced[i][0]):
                break
            leaf_times[i] = int(rng.integers(lo, hi, endpoint=True))
            if not spec.amounts_usd:
                values[i] = _log_uniform(rng, *ws.swap_value_usd)
            priced[i] = builder.price_swap(rng, pair, leaf_times[i], values[i], usd)
        else:
            logger.warning(f"{scenario}: leaf {i} still collides with existing {pair.src} traffic")
        guard.add(pair.src, leaf_times[i], priced[i][0])
    # resampling may reorder the leaves in time
    order = sorted(range(spec.leaf_count), key=lambda i: leaf_times[i])
    leaf_times = [leaf_times[i] for i in order]
    priced = [priced[i] for i in order]
    if any(a_s <= 0 or a_d <= 0 for a_s, a_d, _, _ in priced):
        raise ConfigError("sybil leaf amounts round to zero")

    root = builder.address(rng, chain)
    t_root = leaf_times[0] - spec.depth * spacing - 60
    # paths[i] = addresses from the first intermediate down to leaf i
    paths = [[builder.address(rng, chain) for _ in range(spec.depth)] for _ in range(spec.leaf_count)]

    def hop_amount(i: int, hop: int) -> Decimal:
        return builder.quantize(asset, priced[i][0] * (1 + Decimal("0.001") * (spec.depth - hop + 1)))

    utxo = world.registry.chain(chain).model == ChainModel.utxo
    heads: list[OutPoint | None] = []
    if utxo:
        fan_out = builder.add(rng, chain, asset, t_root, root, [(p[0], hop_amount(i, 1)) for i, p in enumerate(paths)])
        heads = [OutPoint(fan_out.tx_id, i) for i in range(spec.leaf_count)]
    else:
        heads = [None] * spec.leaf_count
        for i, p in enumerate(paths):
            builder.add(rng, chain, asset, t_root, root, [(p[0], hop_amount(i, 1))])

    sources, targets = [], []
    for i, path in enumerate(paths):
        head = heads[i]
        for hop in range(2, spec.depth + 1):
            t = builder.add(
                rng,
                chain,
                asset,
                t_root + (hop - 1) * spacing,
                path[hop - 2],
                [(path[hop - 1], hop_amount(i, hop))],
                (head,) if head is not None else None,
            )
            head = OutPoint(t.tx_id, 0) if utxo else None
        inbound, outbound = builder.plant_swap(
            rng, pair, leaf_times[i], priced[i], path[-1], (head,) if head is not None else None
        )
        sources.append(inbound.key)
        targets.append(outbound.key)

    delta = GroundTruth(
        links=tuple(builder.links),
        sybil={
            scenario: SybilRoot(
                scenario_id=scenario,
                chain=chain,
                root=root,
                depth=spec.depth,
                leaf_sources=tuple(sources),
                leaf_targets=tuple(targets),
            )
        },
    )
    extended = world.model_copy(
        update={
            "transfers": _assign_ords([*world.transfers, *builder.transfers], world.registry),
            "truth": world.truth.merged(delta),
        }
    )
    # drop the store cached on the original world
    extended.__dict__.pop("store", None)
    logger.info(f"planted {scenario}: root {root} on {chain}, {spec.leaf_count} leaves at depth {spec.depth}")
    return extended, delta


def emit_thor25_format(world: World, tier: Tier) -> list[SwapRecord]:
    return apply_tier_filter(world.swap_records(), tier, registry_thresholds(world.registry), seed=world.spec.seed)


def write_world(world: World, directory: Path, tiers: Sequence[Tier] = tuple(Tier)) -> ManifestFile:
    """Write ``world`` as a dataset directory with one swap-record file per tier."""
    directory.mkdir(parents=True, exist_ok=True)
    count = write_transfers(directory / TRANSFERS_FILE, world.transfers, world.registry)
    write_prices(directory / PRICES_DIR, world.oracle)
    write_truth(directory / TRUTH_FILE, world.truth)
    if world.truth.sybil:
        write_sybil(directory / SYBIL_FILE, world.truth)
    provenance = Provenance(seed=world.spec.seed)
    manifests = [write_tier(directory, emit_thor25_format(world, t), t, provenance, world.registry) for t in tiers]
    manifest = ManifestFile(transfer_count=count, tiers=manifests, dust_thresholds=world.dust_thresholds)
    write_manifest(directory, manifest)
    logger.info(f"wrote world seed={world.spec.seed} to {directory}: {count} transfers, tiers {[t.value for t in tiers]}")
    return manifest
