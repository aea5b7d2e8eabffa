"""Dataset directory formats: transfers, price series, swap records, ground truth and the manifest.

Every file is written canonically (compact JSON with a fixed key order, fixed-point amounts at the asset's
precision, sorted address lists), so that writing what was read reproduces the input byte for byte.
"""

import csv
import hashlib
import json
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Any

from numpy.random import SFC64, Generator, SeedSequence
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, model_validator
from pydantic.alias_generators import to_camel

from crosschain_tracer.constants import (
    HF_MAX_DELAY_SECONDS,
    HF_MINI_PER_PAIR,
    MANIFEST_FILE,
    PRICES_DIR,
    SCHEMA_VERSION,
    SYBIL_FILE,
    TRANSFERS_FILE,
    TRUTH_FILE,
)
from crosschain_tracer.ledger import AncestryOptions, TransferStore
from crosschain_tracer.models import (
    ChainAsset,
    ChainModel,
    ChainRegistry,
    ConfigError,
    DataValidationError,
    GroundTruth,
    GroundTruthLink,
    ParseError,
    SwapPair,
    SybilRoot,
    Transfer,
    TransferRef,
    TxOutput,
    default_registry,
)
from crosschain_tracer.price_oracle import PriceOracle, PriceSeries

logger = logging.getLogger(__name__)


class Tier(str, Enum):
    raw = "raw"
    hf = "hf"
    hf_mini = "hfMini"


class SwapRecord(BaseModel):
    """One bridge swap: inbound transfer on the source chain, outbound transfer on the destination chain.

    Keys unknown to this model are kept as extra fields and written back unchanged.
    """

    model_config = ConfigDict(frozen=True, extra="allow", alias_generator=to_camel, populate_by_name=True)

    inbound_tx_id: str = Field(min_length=1)
    inbound_chain: str
    inbound_asset: str
    inbound_amt: Decimal = Field(gt=0)
    inbound_ts: int = Field(ge=0)
    outbound_tx_id: str = Field(min_length=1)
    outbound_chain: str
    outbound_asset: str
    outbound_amt: Decimal = Field(gt=0)
    outbound_ts: int = Field(ge=0)
    bridge: str
    inbound_from: str | None = None
    outbound_to: str | None = None

    @model_validator(mode="after")
    def outbound_after_inbound(self: "SwapRecord") -> "SwapRecord":
        if self.outbound_ts < self.inbound_ts:
            raise ValueError(f"outbound ts {self.outbound_ts} precedes inbound ts {self.inbound_ts}")
        return self

    @property
    def delay(self: "SwapRecord") -> int:
        return self.outbound_ts - self.inbound_ts

    @property
    def pair(self: "SwapRecord") -> SwapPair:
        return SwapPair(
            ChainAsset(self.inbound_chain, self.inbound_asset), ChainAsset(self.outbound_chain, self.outbound_asset)
        )

    @property
    def inbound_ref(self: "SwapRecord") -> TransferRef:
        return TransferRef(self.inbound_chain, self.inbound_tx_id)

    @property
    def outbound_ref(self: "SwapRecord") -> TransferRef:
        return TransferRef(self.outbound_chain, self.outbound_tx_id)


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int | None = None
    path: str | None = None

    @model_validator(mode="after")
    def exactly_one(self: "Provenance") -> "Provenance":
        if (self.seed is None) == (self.path is None):
            raise ValueError("provenance is either a synthetic seed or an external path")
        return self


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    tier: Tier
    record_count: int = Field(ge=0)
    pairs: list[str]
    provenance: Provenance


class ManifestFile(BaseModel):
    model_config = ConfigDict(frozen=True)

    transfer_count: int = Field(ge=0)
    tiers: list[DatasetManifest] = Field(default_factory=list)
    dust_thresholds: dict[str, Decimal] = Field(
        default_factory=dict,
        description="per-asset amount below which ancestry walks stop, empty for ingested datasets",
    )

    @field_serializer("dust_thresholds")
    def _serialize_dust(self: "ManifestFile", thresholds: dict[str, Decimal]) -> dict[str, str]:
        return {asset: canonical_rate(thresholds[asset]) for asset in sorted(thresholds)}

    def tier(self: "ManifestFile", tier: Tier) -> DatasetManifest:
        for m in self.tiers:
            if m.tier == tier:
                return m
        raise ConfigError(f"dataset has no {tier.value} tier, available: {[m.tier.value for m in self.tiers]}")


class SwapLoad(BaseModel):
    model_config = ConfigDict(frozen=True)

    tier: Tier
    records: list[SwapRecord]
    transfers: list[Transfer]
    links: list[GroundTruthLink]
    errors: list[str] = Field(default_factory=list)


def canonical_amount(amount: Decimal, precision: int) -> str:
    return f"{amount.quantize(Decimal(1).scaleb(-precision)):f}"


def canonical_rate(rate: Decimal) -> str:
    return f"{rate:f}"


def _dumps(data: Any) -> str:  # noqa: ANN401
    return json.dumps(data, separators=(",", ":"))


def _header(schema: str, **extra: Any) -> dict[str, Any]:  # noqa: ANN401
    return {"schema": schema, "version": SCHEMA_VERSION, **extra}


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")


def _read_jsonl(path: Path, schema: str) -> tuple[dict[str, Any], Iterator[tuple[int, str]]]:
    """Checked header plus the remaining non-blank lines with their 1-based line numbers."""
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"missing {schema} header", 1, str(path))
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid header: {e.msg}", 1, str(path)) from e
    if not isinstance(header, dict) or header.get("schema") != schema:
        raise ParseError(f"expected a {schema} header, got {lines[0]!r}", 1, str(path))
    if header.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported {schema} schema version {header.get('version')}", 1, str(path))
    return header, ((i, line) for i, line in enumerate(lines[1:], start=2) if line.strip())


# transfers


def transfer_to_json(t: Transfer, registry: ChainRegistry) -> str:
    precision = registry.asset(t.asset).precision
    return _dumps(
        {
            "tx_id": t.tx_id,
            "chain": t.chain,
            "ts": t.ts,
            "asset": t.asset,
            "amt": canonical_amount(t.amt, precision),
            "spenders": sorted(t.spenders),
            "recipients": sorted(t.recipients),
            "ord": list(t.ord),
            "inputs": [[o.tx_id, o.index] for o in t.inputs],
            "outputs": [[o.address, canonical_amount(o.amount, precision)] for o in t.outputs],
        }
    )


def write_transfers(path: Path, transfers: Iterable[Transfer], registry: ChainRegistry | None = None) -> int:
    registry = registry or default_registry()
    ordered = sorted(transfers, key=lambda t: (t.chain, t.order_key))
    _write_lines(path, [_dumps(_header("transfers")), *(transfer_to_json(t, registry) for t in ordered)])
    return len(ordered)


def read_transfers(path: Path) -> list[Transfer]:
    _, lines = _read_jsonl(path, "transfers")
    transfers = []
    for n, line in lines:
        try:
            transfers.append(Transfer.model_validate_json(line))
        except ValidationError as e:
            raise ParseError(f"invalid transfer: {e.errors()[0]['msg']}", n, str(path)) from e
    return transfers


# price series


def price_file_name(series: PriceSeries) -> str:
    return f"{series.base}-{series.quote}.csv"


def write_price_series(directory: Path, series: PriceSeries) -> Path:
    path = directory / price_file_name(series)
    rows = (f"{ts},{canonical_rate(rate)}" for ts, rate in series.samples)
    _write_lines(path, [f"# base={series.base} quote={series.quote}", "ts,rate", *rows])
    return path


def read_price_series(path: Path) -> PriceSeries:
    with path.open(encoding="utf-8", newline="") as f:
        first = f.readline().strip()
        meta = dict(part.split("=", 1) for part in first.lstrip("#").split() if "=" in part)
        if not first.startswith("#") or "base" not in meta or "quote" not in meta:
            raise ParseError(f"expected '# base=<BASE> quote=<QUOTE>', got {first!r}", 1, str(path))
        reader = csv.reader(f)
        if next(reader, None) != ["ts", "rate"]:
            raise ParseError("expected column line 'ts,rate'", 2, str(path))
        samples = []
        for n, row in enumerate(reader, start=3):
            if not row:
                continue
            try:
                samples.append((int(row[0]), Decimal(row[1])))
            except (ValueError, IndexError, ArithmeticError) as e:
                raise ParseError(f"invalid price row {row}: {e}", n, str(path)) from e
    try:
        return PriceSeries(base=meta["base"], quote=meta["quote"], samples=tuple(samples))
    except ValidationError as e:
        raise ParseError(f"invalid price series: {e.errors()[0]['msg']}", 3, str(path)) from e


def write_prices(directory: Path, oracle: PriceOracle) -> list[Path]:
    return [write_price_series(directory, s) for s in oracle]


def read_prices(directory: Path) -> PriceOracle:
    if not directory.is_dir():
        return PriceOracle()
    return PriceOracle(read_price_series(p) for p in sorted(directory.glob("*.csv")))


# swap records


def swap_record_to_json(rec: SwapRecord, registry: ChainRegistry) -> str:
    data = rec.model_dump(mode="json", by_alias=True, exclude_none=True)
    data["inboundAmt"] = canonical_amount(rec.inbound_amt, registry.asset(rec.inbound_asset).precision)
    data["outboundAmt"] = canonical_amount(rec.outbound_amt, registry.asset(rec.outbound_asset).precision)
    return _dumps(data)


def write_swap_records(
    path: Path,
    records: Iterable[SwapRecord],
    tier: Tier,
    registry: ChainRegistry | None = None,
) -> int:
    registry = registry or default_registry()
    lines = [swap_record_to_json(r, registry) for r in records]
    _write_lines(path, [_dumps(_header("swaps", tier=tier.value)), *lines])
    return len(lines)


def records_digest(records: Iterable[SwapRecord], registry: ChainRegistry | None = None) -> str:
    registry = registry or default_registry()
    h = hashlib.sha256()
    for r in records:
        h.update(swap_record_to_json(r, registry).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _unknown_party(bridge: str, chain: str) -> str:
    return f"{bridge}:{chain}"


def swap_transfers(rec: SwapRecord, registry: ChainRegistry) -> tuple[Transfer, Transfer]:
    """Inbound and outbound transfers of a swap record, positioned at pseudo-heights ``ts // block-time``."""

    def build(ref: TransferRef, asset: str, amt: Decimal, ts: int, spender: str, recipient: str) -> Transfer:
        chain = registry.chain(ref.chain)
        utxo = chain.model == ChainModel.utxo
        return Transfer(
            tx_id=ref.tx_id,
            chain=ref.chain,
            ts=ts,
            asset=asset,
            amt=amt,
            spenders=frozenset({spender}),
            recipients=frozenset({recipient}),
            ord=(ts // chain.block_time, 0),
            outputs=(TxOutput(recipient, amt),) if utxo else (),
        )

    vault_in = _unknown_party(rec.bridge, rec.inbound_chain)
    vault_out = _unknown_party(rec.bridge, rec.outbound_chain)
    inbound = build(
        rec.inbound_ref,
        rec.inbound_asset,
        rec.inbound_amt,
        rec.inbound_ts,
        rec.inbound_from or f"unknown:{rec.inbound_tx_id}",
        vault_in,
    )
    outbound = build(
        rec.outbound_ref,
        rec.outbound_asset,
        rec.outbound_amt,
        rec.outbound_ts,
        vault_out,
        rec.outbound_to or f"unknown:{rec.outbound_tx_id}",
    )
    return inbound, outbound


def swap_link(rec: SwapRecord) -> GroundTruthLink:
    return GroundTruthLink(
        src=rec.inbound_ref,
        dst=rec.outbound_ref,
        bridge=rec.bridge,
        delay=rec.delay,
        src_asset=rec.inbound_asset,
        dst_asset=rec.outbound_asset,
    )


def load_swap_records(path: Path, strict: bool = True, registry: ChainRegistry | None = None) -> SwapLoad:
    """Parse a swap-record file into records, their derived transfers and one ground-truth link per record.

    In strict mode the first malformed line raises :class:`ParseError`; otherwise malformed lines are logged,
    reported in ``errors`` and skipped.
    """
    registry = registry or default_registry()
    header, lines = _read_jsonl(path, "swaps")
    try:
        tier = Tier(header.get("tier", Tier.raw.value))
    except ValueError as e:
        raise ParseError(f"unknown tier {header.get('tier')!r}", 1, str(path)) from e

    records: list[SwapRecord] = []
    transfers: list[Transfer] = []
    links: list[GroundTruthLink] = []
    errors: list[str] = []
    for n, line in lines:
        try:
            rec = SwapRecord.model_validate_json(line)
            inbound, outbound = swap_transfers(rec, registry)
        except (ValidationError, DataValidationError) as e:
            msg = e.errors()[0]["msg"] if isinstance(e, ValidationError) else str(e)
            err = ParseError(f"invalid swap record: {msg}", n, str(path))
            if strict:
                raise err from e
            logger.warning(f"{path}: {err}")
            errors.append(str(err))
            continue
        records.append(rec)
        transfers.extend((inbound, outbound))
        links.append(swap_link(rec))
    logger.info(f"loaded {len(records)} {tier.value} swap records from {path} ({len(errors)} malformed)")
    return SwapLoad(tier=tier, records=records, transfers=transfers, links=links, errors=errors)


def registry_thresholds(registry: ChainRegistry | None = None) -> dict[str, Decimal]:
    registry = registry or default_registry()
    return {a.id: a.hf_threshold for a in registry.assets.values() if a.hf_threshold is not None}


def _high_fidelity(records: Sequence[SwapRecord], thresholds: Mapping[str, Decimal]) -> list[SwapRecord]:
    missing = sorted({r.inbound_asset for r in records} - set(thresholds))
    if missing:
        raise ConfigError(f"no high-fidelity threshold configured for source asset(s) {missing}")
    return [
        r for r in records if r.inbound_amt >= thresholds[r.inbound_asset] and r.delay <= HF_MAX_DELAY_SECONDS
    ]


def apply_tier_filter(
    records: Sequence[SwapRecord],
    tier: Tier,
    thresholds: Mapping[str, Decimal] | None = None,
    seed: int = 0,
    per_pair: int = HF_MINI_PER_PAIR,
) -> list[SwapRecord]:
    """Records of ``tier``; input order is preserved.

    ``hf`` keeps swaps whose inbound amount reaches the source asset's threshold and whose delay is at most
    30 minutes (inclusive). ``hfMini`` samples ``per_pair`` high-fidelity records per swap pair, seeded.
    """
    if tier == Tier.raw:
        return list(records)
    kept = _high_fidelity(records, thresholds if thresholds is not None else registry_thresholds())
    if tier == Tier.hf:
        return kept

    by_pair: dict[str, list[int]] = {}
    for i, r in enumerate(kept):
        by_pair.setdefault(str(r.pair), []).append(i)
    rng = Generator(SFC64(SeedSequence(seed)))
    chosen: set[int] = set()
    for pair in sorted(by_pair):
        idx = by_pair[pair]
        if len(idx) <= per_pair:
            chosen.update(idx)
        else:
            chosen.update(idx[int(j)] for j in rng.choice(len(idx), size=per_pair, replace=False))
    return [r for i, r in enumerate(kept) if i in chosen]


# ground truth


def truth_link_to_json(link: GroundTruthLink) -> str:
    return _dumps(
        {
            "src": link.src.key,
            "dst": link.dst.key,
            "bridge": link.bridge,
            "src_asset": link.src_asset,
            "dst_asset": link.dst_asset,
            "fee": None if link.fee is None else canonical_rate(link.fee),
            "delay": link.delay,
        }
    )


def write_truth(path: Path, truth: GroundTruth) -> int:
    _write_lines(path, [_dumps(_header("truth")), *(truth_link_to_json(link) for link in truth.links)])
    return len(truth.links)


def write_sybil(path: Path, truth: GroundTruth) -> None:
    scenarios = [truth.sybil[k].model_dump(mode="json") for k in sorted(truth.sybil)]
    _write_lines(path, [_dumps(_header("sybil", scenarios=scenarios))])


def read_truth(path: Path, sybil_path: Path | None = None) -> GroundTruth:
    links = []
    if path.is_file():
        _, lines = _read_jsonl(path, "truth")
        for n, line in lines:
            try:
                links.append(GroundTruthLink.model_validate_json(line))
            except ValidationError as e:
                raise ParseError(f"invalid truth link: {e.errors()[0]['msg']}", n, str(path)) from e
    sybil: dict[str, SybilRoot] = {}
    if sybil_path is not None and sybil_path.is_file():
        header, _ = _read_jsonl(sybil_path, "sybil")
        sybil = {s["scenario_id"]: SybilRoot.model_validate(s) for s in header.get("scenarios", [])}
    return GroundTruth(links=tuple(links), sybil=sybil)


# manifest and dataset directories


def write_manifest(directory: Path, manifest: ManifestFile) -> Path:
    path = directory / MANIFEST_FILE
    _write_lines(path, [_dumps({**_header("manifest"), **manifest.model_dump(mode="json")})])
    return path


def read_manifest(directory: Path) -> ManifestFile:
    path = directory / MANIFEST_FILE
    if not path.is_file():
        raise ConfigError(f"{directory} is not a dataset directory: {MANIFEST_FILE} is missing")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("schema") != "manifest" or data.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported manifest header {data.get('schema')!r} v{data.get('version')}", 1, str(path))
    return ManifestFile.model_validate(data)


def swaps_file(directory: Path, tier: Tier) -> Path:
    return directory / f"swaps-{tier.value}.jsonl"


def write_tier(
    directory: Path,
    records: Sequence[SwapRecord],
    tier: Tier,
    provenance: Provenance,
    registry: ChainRegistry | None = None,
) -> DatasetManifest:
    count = write_swap_records(swaps_file(directory, tier), records, tier, registry)
    pairs = sorted({str(r.pair) for r in records})
    return DatasetManifest(tier=tier, record_count=count, pairs=pairs, provenance=provenance)


def ingest_swaps(  # noqa: PLR0913
    swaps_path: Path,
    directory: Path,
    prices_dir: Path | None = None,
    tiers: Sequence[Tier] = tuple(Tier),
    strict: bool = True,
    seed: int = 0,
    registry: ChainRegistry | None = None,
) -> ManifestFile:
    """Convert an external swap-record file into a dataset directory.

    Each record yields its inbound and outbound transfers and one ground-truth link. Price series are copied
    from ``prices_dir`` when given; without them traces report every source pair as unpriced.
    """
    registry = registry or default_registry()
    load = load_swap_records(swaps_path, strict, registry)
    transfers: dict[str, Transfer] = {}
    for t in load.transfers:
        if t.key in transfers:
            logger.warning(f"{swaps_path}: transfer {t.key} appears in several records, keeping the first")
            continue
        transfers[t.key] = t

    directory.mkdir(parents=True, exist_ok=True)
    count = write_transfers(directory / TRANSFERS_FILE, transfers.values(), registry)
    oracle = read_prices(prices_dir) if prices_dir is not None else PriceOracle()
    write_prices(directory / PRICES_DIR, oracle)
    write_truth(directory / TRUTH_FILE, GroundTruth(links=tuple(load.links)))
    thresholds = registry_thresholds(registry)
    provenance = Provenance(path=str(swaps_path))
    manifests = [
        write_tier(directory, apply_tier_filter(load.records, t, thresholds, seed=seed), t, provenance, registry)
        for t in tiers
    ]
    manifest = ManifestFile(transfer_count=count, tiers=manifests)
    write_manifest(directory, manifest)
    logger.info(f"ingested {len(load.records)} swap records from {swaps_path} into {directory}")
    return manifest


class Dataset:
    """A dataset directory loaded into a transfer store, a price oracle and its ground truth."""

    def __init__(self: "Dataset", directory: Path, strict: bool = True, registry: ChainRegistry | None = None) -> None:
        self.directory = directory
        self.strict = strict
        self.registry = registry or default_registry()
        self.manifest = read_manifest(directory)
        transfers = read_transfers(directory / TRANSFERS_FILE)
        if len(transfers) != self.manifest.transfer_count:
            raise DataValidationError(
                f"manifest lists {self.manifest.transfer_count} transfers, {TRANSFERS_FILE} has {len(transfers)}"
            )
        self.store = TransferStore(transfers, self.registry)
        self.oracle = read_prices(directory / PRICES_DIR)
        self.truth = read_truth(directory / TRUTH_FILE, directory / SYBIL_FILE)
        logger.info(
            f"dataset {directory}: {len(self.store)} transfers, {len(self.oracle)} price series, "
            f"{len(self.truth.links)} truth links, tiers {[m.tier.value for m in self.manifest.tiers]}"
        )

    def swaps(self: "Dataset", tier: Tier) -> SwapLoad:
        expected = self.manifest.tier(tier)
        load = load_swap_records(swaps_file(self.directory, tier), self.strict, self.registry)
        if len(load.records) + len(load.errors) != expected.record_count:
            raise DataValidationError(
                f"manifest lists {expected.record_count} {tier.value} records, file has "
                f"{len(load.records) + len(load.errors)}"
            )
        return load

    def ancestry_options(
        self: "Dataset",
        branching_cap: int | None = None,
        dust_thresholds: Mapping[str, Decimal] | None = None,
    ) -> AncestryOptions:
        """Ancestry walk options with the dust thresholds recorded in the manifest, overridden per asset."""
        thresholds = {**self.manifest.dust_thresholds, **(dust_thresholds or {})}
        options: dict[str, Any] = {"dust_thresholds": thresholds}
        if branching_cap is not None:
            options["branching_cap"] = branching_cap
        try:
            return AncestryOptions(**options)
        except ValidationError as e:
            raise ConfigError(f"invalid ancestry options: {e.errors()[0]['msg']}") from e
