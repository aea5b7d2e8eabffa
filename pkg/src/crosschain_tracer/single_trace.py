"""Backward single-transfer tracing.

Pipeline for a destination transfer: temporal window -> value-bounded candidate search -> forward value
validation and fee filtration -> time/amount scoring -> ranking.
"""

import logging
import math
from collections import Counter
from decimal import Decimal
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from crosschain_tracer.constants import UNKNOWN_BRIDGE
from crosschain_tracer.ledger import TransferStore
from crosschain_tracer.models import (
    ChainAsset,
    ConfigError,
    CrossChainLink,
    InternalConsistencyError,
    MissingPriceSeriesError,
    PriceOutOfRangeError,
    Transfer,
    parse_chain_asset,
)
from crosschain_tracer.price_oracle import (
    PriceOracle,
    ValueInterval,
    range_over,
    source_value_interval,
    tight_range_around,
)

logger = logging.getLogger(__name__)


class TraceConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    delta_t: int = Field(default=3600, ge=0, description="backward search window in seconds")
    delta: int = Field(default=0, ge=0, description="settlement delay in seconds")
    skew: int = Field(default=90, ge=0, description="timestamp-imprecision relaxation, applied on both sides")
    eps_p: Decimal = Field(default=Decimal("0.05"), ge=0, lt=1, description="price buffer")
    lambda_: float = Field(default=300.0, gt=0, alias="lambda", description="time-decay constant in seconds")
    w_t: float = Field(default=0.7, gt=0)
    w_a: float = Field(default=0.3, ge=0)
    r_norm: float = Field(default=0.05, gt=0, description="fee-rate-range normalizer")
    f_max: Decimal = Field(default=Decimal("0.10"), ge=0, lt=1, description="maximum plausible fee rate")
    w_p: int = Field(default=300, ge=0, description="half-width of the tight price window")
    source_pairs: tuple[ChainAsset, ...] = ()
    bridge: str = UNKNOWN_BRIDGE

    @model_validator(mode="after")
    def timing_outweighs_amount(self: "TraceConfig") -> "TraceConfig":
        if not self.w_t > self.w_a:
            raise ValueError(f"w_t ({self.w_t}) must be greater than w_a ({self.w_a})")
        return self

    @classmethod
    def from_overrides(cls, overrides: dict[str, Any] | None = None, base: "TraceConfig | None" = None) -> "TraceConfig":  # noqa: ANN102
        """Apply ``overrides`` (field names, ``lambda`` accepted) on top of ``base`` or the defaults."""
        data = (base or cls()).model_dump()
        for key, value in (overrides or {}).items():
            data["lambda_" if key == "lambda" else key] = value
        data["source_pairs"] = tuple(parse_chain_asset(p) for p in data.get("source_pairs") or ())
        try:
            return cls.model_validate(data)
        except (ValidationError, ValueError, TypeError) as e:
            raise ConfigError(f"invalid trace configuration: {e}") from e

    def widened(self: "TraceConfig", **factors: int) -> "TraceConfig":
        return self.model_copy(update={k: getattr(self, k) * f for k, f in factors.items()})


class RejectReason(str, Enum):
    causality = "causality"
    negative_fee = "negative-fee"
    excessive_fee = "excessive-fee"
    price_gap = "price-gap"


class ValidationDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    accepted: bool
    reason: RejectReason | None = None
    implied_fee_rate: Decimal | None = None
    detail: str | None = None


class ScoredCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    link: CrossChainLink
    s_time: float = Field(ge=0, le=1)
    s_amt: float = Field(ge=0, le=1)
    s_final: float = Field(ge=0, le=1)
    implied_fee_rate: Decimal
    gap: int = Field(ge=0)
    src_amt: Decimal

    @property
    def rank_key(self: "ScoredCandidate") -> tuple[float, int, str, str]:
        return -self.s_final, self.gap, self.link.src.tx_id, self.link.src.chain


class CandidateSearch(BaseModel):
    model_config = ConfigDict(frozen=True)

    transfers: list[Transfer]
    intervals: dict[str, ValueInterval] = Field(default_factory=dict)
    warnings: list[str] = Field(default_factory=list)


class TraceResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    target: Transfer
    candidates: list[ScoredCandidate]
    config: TraceConfig
    warnings: list[str] = Field(default_factory=list)
    rejected: dict[str, int] = Field(default_factory=dict)

    def ranked_sources(self: "TraceResult") -> list[str]:
        return [c.link.src.key for c in self.candidates]

    def rank_of(self: "TraceResult", src_key: str) -> int | None:
        for i, c in enumerate(self.candidates, start=1):
            if c.link.src.key == src_key:
                return i
        return None

    def to_report(self: "TraceResult") -> dict[str, Any]:
        return {
            "target": self.target.key,
            "config": self.config.model_dump(mode="json", by_alias=True),
            "candidates": [
                {
                    "rank": i,
                    "src": c.link.src.tx_id,
                    "chain": c.link.src.chain,
                    "bridge": c.link.bridge,
                    "s_time": c.s_time,
                    "s_amt": c.s_amt,
                    "s_final": c.s_final,
                    "implied_fee_rate": str(c.implied_fee_rate),
                    "gap": c.gap,
                }
                for i, c in enumerate(self.candidates, start=1)
            ],
            "rejected": dict(sorted(self.rejected.items())),
            "warnings": self.warnings,
        }


def temporal_window(target: Transfer, cfg: TraceConfig) -> tuple[int, int]:
    lo = max(target.ts - cfg.delta_t - cfg.delta - cfg.skew, 0)
    hi = max(target.ts - cfg.delta + cfg.skew, lo)
    return lo, hi


def source_pairs_for(store: TransferStore, target: Transfer, cfg: TraceConfig) -> list[ChainAsset]:
    if cfg.source_pairs:
        return sorted(set(cfg.source_pairs))
    own = ChainAsset(target.chain, target.asset)
    return [p for p in store.registry.chain_assets() if p != own]


def resolve_value_intervals(
    store: TransferStore,
    oracle: PriceOracle,
    target: Transfer,
    cfg: TraceConfig,
    window: tuple[int, int],
) -> tuple[dict[ChainAsset, ValueInterval], list[str]]:
    """Admissible source-amount interval per source pair; pairs without price coverage become warnings."""
    lo, hi = window
    intervals: dict[ChainAsset, ValueInterval] = {}
    warnings: list[str] = []
    for pair in source_pairs_for(store, target, cfg):
        try:
            # source-asset units per destination-asset unit
            series = oracle.series(pair.asset, target.asset)
            price_range = range_over(series, lo, hi)
        except (MissingPriceSeriesError, PriceOutOfRangeError) as e:
            logger.warning(f"skipping source pair {pair} for target {target.key}: {e}")
            warnings.append(f"{pair}: {e}")
            continue
        intervals[pair] = source_value_interval(price_range, target.amt, cfg.eps_p)
    return intervals, warnings


def search_candidates(
    store: TransferStore,
    target: Transfer,
    window: tuple[int, int],
    intervals: dict[ChainAsset, ValueInterval],
) -> list[Transfer]:
    lo, hi = window
    found: dict[str, Transfer] = {}
    for pair, interval in intervals.items():
        for t in store.search_transfers(pair.chain, pair.asset, lo, hi, interval.lo, interval.hi):
            if t.key != target.key:
                found[t.key] = t
    return sorted(found.values(), key=lambda t: (t.ts, t.chain, t.tx_id))


def generate_candidates(
    store: TransferStore,
    oracle: PriceOracle,
    target: Transfer,
    cfg: TraceConfig,
) -> CandidateSearch:
    window = temporal_window(target, cfg)
    intervals, warnings = resolve_value_intervals(store, oracle, target, cfg, window)
    return CandidateSearch(
        transfers=search_candidates(store, target, window, intervals),
        intervals={str(pair): interval for pair, interval in intervals.items()},
        warnings=warnings,
    )


def validate_forward(
    candidate: Transfer,
    target: Transfer,
    oracle: PriceOracle,
    cfg: TraceConfig,
) -> ValidationDecision:
    """Value-consistency check: the fee implied by the tight-window maximum price must lie in [0, f_max]."""
    if candidate.ts > target.ts:
        return ValidationDecision(accepted=False, reason=RejectReason.causality)
    try:
        # destination-asset units per source-asset unit
        series = oracle.series(target.asset, candidate.asset)
        p_max = tight_range_around(series, candidate.ts, cfg.w_p).p_max
    except (MissingPriceSeriesError, PriceOutOfRangeError) as e:
        return ValidationDecision(accepted=False, reason=RejectReason.price_gap, detail=str(e))
    v_implied = candidate.amt * p_max
    if v_implied < target.amt:
        return ValidationDecision(accepted=False, reason=RejectReason.negative_fee)
    fee_rate = Decimal(0) if v_implied == 0 else (v_implied - target.amt) / v_implied
    if fee_rate > cfg.f_max:
        return ValidationDecision(accepted=False, reason=RejectReason.excessive_fee, implied_fee_rate=fee_rate)
    return ValidationDecision(accepted=True, implied_fee_rate=fee_rate)


def score_time(gap: float, lam: float) -> float:
    return math.exp(-gap / lam)


def score_amount(r_min: Decimal | float, r_max: Decimal | float, r_norm: float) -> float:
    if r_max < r_min:
        raise InternalConsistencyError(f"empty feasible fee-rate range [{r_min}, {r_max}]")
    return min(max(float(r_max - r_min) / r_norm, 0.0), 1.0)


def feasible_fee_range(
    candidate: Transfer,
    target: Transfer,
    oracle: PriceOracle,
    cfg: TraceConfig,
) -> tuple[Decimal, Decimal]:
    """Fee rates reachable by a price inside the buffered tight band around the candidate's timestamp."""
    series = oracle.series(target.asset, candidate.asset)
    tight = tight_range_around(series, candidate.ts, cfg.w_p)
    if candidate.amt == 0:
        return Decimal(0), Decimal(0)
    low_value = candidate.amt * tight.p_min * (1 - cfg.eps_p)
    high_value = candidate.amt * tight.p_max * (1 + cfg.eps_p)
    r_min = max(Decimal(0), 1 - target.amt / low_value) if low_value > 0 else Decimal(0)
    r_max = min(cfg.f_max, 1 - target.amt / high_value)
    return r_min, r_max


def final_score(s_time: float, s_amt: float, cfg: TraceConfig) -> float:
    return (cfg.w_t * s_time + cfg.w_a * s_amt) / (cfg.w_t + cfg.w_a)


def score_candidate(
    candidate: Transfer,
    target: Transfer,
    oracle: PriceOracle,
    cfg: TraceConfig,
    implied_fee_rate: Decimal,
) -> ScoredCandidate:
    gap = target.ts - candidate.ts
    s_time = score_time(gap, cfg.lambda_)
    s_amt = score_amount(*feasible_fee_range(candidate, target, oracle, cfg), cfg.r_norm)
    s_final = final_score(s_time, s_amt, cfg)
    return ScoredCandidate(
        link=CrossChainLink(src=candidate.ref, dst=target.ref, bridge=cfg.bridge),
        s_time=s_time,
        s_amt=s_amt,
        s_final=s_final,
        implied_fee_rate=implied_fee_rate,
        gap=gap,
        src_amt=candidate.amt,
    )


def rank(candidates: list[ScoredCandidate]) -> list[ScoredCandidate]:
    return sorted(candidates, key=lambda c: c.rank_key)


def trace_single(
    store: TransferStore,
    oracle: PriceOracle,
    target: Transfer,
    cfg: TraceConfig | None = None,
) -> TraceResult:
    cfg = cfg or TraceConfig()
    target = store.get_transfer_by_id(target.chain, target.tx_id)
    search = generate_candidates(store, oracle, target, cfg)
    accepted, rejected = validate_candidates(search.transfers, target, oracle, cfg)
    ranked = score_and_rank(accepted, target, oracle, cfg)
    logger.info(
        f"traced {target.key}: {len(search.transfers)} in window/value bounds, {len(ranked)} accepted, rejected {rejected}"
    )
    return TraceResult(
        target=target,
        candidates=ranked,
        config=cfg,
        warnings=search.warnings,
        rejected=rejected,
    )


def validate_candidates(
    candidates: list[Transfer],
    target: Transfer,
    oracle: PriceOracle,
    cfg: TraceConfig,
) -> tuple[list[tuple[Transfer, Decimal]], dict[str, int]]:
    """Accepted candidates with their implied fee rates, plus rejection counts by reason code."""
    accepted: list[tuple[Transfer, Decimal]] = []
    rejected: Counter[str] = Counter()
    for candidate in candidates:
        decision = validate_forward(candidate, target, oracle, cfg)
        if not decision.accepted or decision.implied_fee_rate is None:
            rejected[decision.reason.value if decision.reason else "unknown"] += 1
            logger.debug(f"{target.key}: rejected {candidate.key} ({decision.reason})")
            continue
        accepted.append((candidate, decision.implied_fee_rate))
    return accepted, dict(sorted(rejected.items()))


def score_and_rank(
    accepted: list[tuple[Transfer, Decimal]],
    target: Transfer,
    oracle: PriceOracle,
    cfg: TraceConfig,
) -> list[ScoredCandidate]:
    return rank([score_candidate(c, target, oracle, cfg, fee) for c, fee in accepted])
