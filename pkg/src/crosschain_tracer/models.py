import hashlib
import json
from decimal import Decimal
from enum import Enum
from functools import cache
from importlib import resources as impresources
from pathlib import Path
from typing import Any, NamedTuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from crosschain_tracer import assets
from crosschain_tracer.settings import app_settings


class DataValidationError(Exception):
    type_str = "cct/data-validation-error"
    title = "Data Validation Error"

    def __init__(self: "DataValidationError", message: str, extra: dict | None = None) -> None:
        super().__init__(message)
        if extra is None:
            extra = {}
        self.extra = extra


class NotFoundError(Exception):
    type_str = "cct/not-found-error"
    title = "Not Found Error"
    pass


class TransferNotFoundError(NotFoundError):
    type_str = "cct/transfer-not-found"
    title = "Transfer Not Found"

    def __init__(self: "TransferNotFoundError", chain: str, tx_id: str) -> None:
        super().__init__(f"transfer {tx_id} not found on chain {chain}")
        self.chain = chain
        self.tx_id = tx_id


class MissingPriceSeriesError(NotFoundError):
    type_str = "cct/missing-price-series"
    title = "Missing Price Series"

    def __init__(self: "MissingPriceSeriesError", base: str, quote: str) -> None:
        super().__init__(f"no price series for {base}/{quote} in either direction")
        self.base = base
        self.quote = quote


class InvalidChainError(DataValidationError):
    type_str = "cct/invalid-chain"
    title = "Invalid Chain"


class RangeError(DataValidationError):
    type_str = "cct/invalid-range"
    title = "Invalid Range"


class PriceOutOfRangeError(DataValidationError):
    type_str = "cct/price-out-of-range"
    title = "Price Out Of Range"


class ConfigError(DataValidationError):
    type_str = "cct/config-error"
    title = "Configuration Error"


class ParseError(DataValidationError):
    type_str = "cct/parse-error"
    title = "Parse Error"

    def __init__(self: "ParseError", message: str, line_number: int, path: str | None = None) -> None:
        super().__init__(f"line {line_number}: {message}", extra={"line": line_number, "path": path})
        self.line_number = line_number


class InternalConsistencyError(Exception):
    """Raised when engine state contradicts an invariant that upstream filtering guarantees."""


class ProtocolViolationError(Exception):
    """Raised when an investigation policy or acceptance step breaks the belief-state protocol."""


class ChainModel(str, Enum):
    utxo = "utxo"
    account = "account"


class Chain(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    model: ChainModel
    block_time: int = Field(alias="block-time", default=1, gt=0)


class Asset(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str
    supported_chains: frozenset[str] = Field(alias="chains", min_length=1)
    precision: int = Field(default=8, ge=0)
    hf_threshold: Decimal | None = Field(alias="hf-threshold", default=None)


class ChainRegistry(BaseModel):
    model_config = ConfigDict(frozen=True)

    chains: dict[str, Chain]
    assets: dict[str, Asset]
    bridges: frozenset[str] = frozenset()

    @model_validator(mode="after")
    def check_asset_chains(self: "ChainRegistry") -> "ChainRegistry":
        for asset in self.assets.values():
            unknown = asset.supported_chains - set(self.chains)
            if unknown:
                raise ValueError(f"asset {asset.id} references unregistered chains: {sorted(unknown)}")
        return self

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ChainRegistry":  # noqa: ANN102
        chains = {k: Chain(id=k, **v) for k, v in (data.get("chains") or {}).items()}
        asset_items = (data.get("assets") or {}).items()
        assets_ = {k: Asset(id=k, **{**v, "hf-threshold": _opt_decimal(v.get("hf-threshold"))}) for k, v in asset_items}
        return cls(chains=chains, assets=assets_, bridges=frozenset(data.get("bridges") or []))

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ChainRegistry":  # noqa: ANN102
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def chain(self: "ChainRegistry", chain_id: str) -> Chain:
        try:
            return self.chains[chain_id]
        except KeyError:
            raise InvalidChainError(f"chain {chain_id} is not registered") from None

    def asset(self: "ChainRegistry", asset_id: str) -> Asset:
        try:
            return self.assets[asset_id]
        except KeyError:
            raise ConfigError(f"asset {asset_id} is not registered") from None

    def chain_assets(self: "ChainRegistry") -> list["ChainAsset"]:
        return sorted(ChainAsset(c, a.id) for a in self.assets.values() for c in a.supported_chains)


def _opt_decimal(val: Any) -> Decimal | None:  # noqa: ANN401
    return None if val is None else Decimal(str(val))


@cache
def default_registry() -> ChainRegistry:
    if app_settings.chain_config is not None:
        return ChainRegistry.from_yaml(app_settings.chain_config)
    chain_conf = impresources.files(assets).joinpath("chain-config.yaml")
    return ChainRegistry.from_yaml(str(chain_conf))


class ChainAsset(NamedTuple):
    chain: str
    asset: str

    def __str__(self: "ChainAsset") -> str:
        return f"{self.chain}/{self.asset}"


class OutPoint(NamedTuple):
    tx_id: str
    index: int


class TxOutput(NamedTuple):
    address: str
    amount: Decimal


class TransferRef(NamedTuple):
    chain: str
    tx_id: str

    @property
    def key(self: "TransferRef") -> str:
        return f"{self.chain}:{self.tx_id}"

    @classmethod
    def parse(cls, value: str) -> "TransferRef":  # noqa: ANN102
        chain, sep, tx_id = value.partition(":")
        if not sep or not chain or not tx_id:
            raise DataValidationError(f"expected transfer reference format is <chain>:<txId>, got {value!r}")
        return cls(chain, tx_id)


class Transfer(BaseModel):
    """Atomic value-carrying on-chain event.

    ``ord`` is the canonical in-chain position ``(block height, intra-block index)``. For utxo chains
    ``inputs`` lists the spent outpoints and ``outputs`` the created ones; account transfers leave both empty.
    """

    model_config = ConfigDict(frozen=True)

    tx_id: str = Field(min_length=1)
    chain: str
    ts: int = Field(ge=0)
    asset: str
    amt: Decimal = Field(ge=0)
    spenders: frozenset[str] = Field(min_length=1)
    recipients: frozenset[str] = Field(min_length=1)
    ord: tuple[int, int]
    inputs: tuple[OutPoint, ...] = ()
    outputs: tuple[TxOutput, ...] = ()

    @property
    def ref(self: "Transfer") -> TransferRef:
        return TransferRef(self.chain, self.tx_id)

    @property
    def key(self: "Transfer") -> str:
        return self.ref.key

    @property
    def order_key(self: "Transfer") -> tuple[tuple[int, int], str]:
        return self.ord, self.tx_id

    @field_serializer("spenders", "recipients")
    def _sorted_addresses(self: "Transfer", v: frozenset[str]) -> list[str]:
        return sorted(v)

    def __hash__(self: "Transfer") -> int:
        return hash((self.chain, self.tx_id))

    def __eq__(self: "Transfer", other: object) -> bool:
        if not isinstance(other, Transfer):
            return NotImplemented
        return self.chain == other.chain and self.tx_id == other.tx_id


def check_utxo_shape(transfer: Transfer, registry: ChainRegistry) -> None:
    chain = registry.chain(transfer.chain)
    if chain.model == ChainModel.utxo and len(transfer.outputs) == 0:
        raise DataValidationError(f"utxo transfer {transfer.key} has no outputs")


class CrossChainLink(BaseModel):
    model_config = ConfigDict(frozen=True)

    src: TransferRef
    dst: TransferRef
    bridge: str

    @field_validator("src", "dst", mode="before")
    @classmethod
    def parse_ref(cls, v: Any) -> Any:  # noqa: ANN102, ANN401
        if isinstance(v, str):
            return TransferRef.parse(v)
        return v

    @field_serializer("src", "dst")
    def _ref_key(self: "CrossChainLink", v: TransferRef) -> str:
        return v.key


class SwapPair(NamedTuple):
    src: ChainAsset
    dst: ChainAsset

    def __str__(self: "SwapPair") -> str:
        return f"{self.src}->{self.dst}"

    @property
    def chains(self: "SwapPair") -> str:
        return f"{self.src.chain}->{self.dst.chain}"

    @classmethod
    def parse(cls, value: Any) -> "SwapPair":  # noqa: ANN102, ANN401
        if isinstance(value, str):
            src, sep, dst = value.partition("->")
            if not sep:
                raise ConfigError(f"expected swap pair format is <chain>/<asset>-><chain>/<asset>, got {value!r}")
            return cls(parse_chain_asset(src.strip()), parse_chain_asset(dst.strip()))
        src, dst = value
        return cls(parse_chain_asset(src), parse_chain_asset(dst))


def parse_chain_asset(value: Any) -> ChainAsset:  # noqa: ANN401
    if isinstance(value, str):
        chain, _, asset = value.partition("/")
        return ChainAsset(chain, asset or chain)
    return ChainAsset(*value)


class GroundTruthLink(CrossChainLink):
    """A planted or recorded swap: the true cross-chain link with its fee and settlement delay."""

    fee: Decimal | None = Field(default=None, ge=0, lt=1)
    delay: int = Field(ge=0)
    src_asset: str
    dst_asset: str

    @property
    def pair(self: "GroundTruthLink") -> SwapPair:
        return SwapPair(ChainAsset(self.src.chain, self.src_asset), ChainAsset(self.dst.chain, self.dst_asset))


class SybilRoot(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario_id: str
    chain: str
    root: str
    depth: int = Field(ge=1)
    leaf_sources: tuple[str, ...]
    leaf_targets: tuple[str, ...]


class GroundTruth(BaseModel):
    model_config = ConfigDict(frozen=True)

    links: tuple[GroundTruthLink, ...] = ()
    sybil: dict[str, SybilRoot] = Field(default_factory=dict)

    def by_target(self: "GroundTruth") -> dict[str, list[GroundTruthLink]]:
        targets: dict[str, list[GroundTruthLink]] = {}
        for link in self.links:
            targets.setdefault(link.dst.key, []).append(link)
        return targets

    def merged(self: "GroundTruth", other: "GroundTruth") -> "GroundTruth":
        clash = set(self.sybil) & set(other.sybil)
        if clash:
            raise ConfigError(f"sybil scenario ids already in use: {sorted(clash)}")
        return GroundTruth(links=(*self.links, *other.links), sybil={**self.sybil, **other.sybil})

    def digest(self: "GroundTruth") -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Link(BaseModel):
    title: str
    type: str
    rel: str
    href: str


class LandingPage(BaseModel):
    title: str
    description: str
    links: list[Link]
