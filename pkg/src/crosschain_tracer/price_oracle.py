"""Historical exchange-rate series with step (last-sample-holds) semantics."""

import logging
from bisect import bisect_right
from collections.abc import Iterable
from decimal import Decimal

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from crosschain_tracer.constants import UNIT_RATE
from crosschain_tracer.models import ConfigError, MissingPriceSeriesError, PriceOutOfRangeError, RangeError

logger = logging.getLogger(__name__)


class PriceSeries(BaseModel):
    """Rates in units of ``base`` per unit of ``quote``: ``amount_in_quote * rate`` is the amount in ``base``."""

    model_config = ConfigDict(frozen=True)

    base: str
    quote: str
    samples: tuple[tuple[int, Decimal], ...] = Field(min_length=1)
    inverted: bool = False

    _ts: list[int] = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def check_samples(self: "PriceSeries") -> "PriceSeries":
        prev: int | None = None
        for ts, rate in self.samples:
            if prev is not None and ts <= prev:
                raise ValueError(f"sample timestamps must be strictly increasing, got {ts} after {prev}")
            if rate <= 0:
                raise ValueError(f"rates must be positive, got {rate} at {ts}")
            prev = ts
        return self

    def model_post_init(self: "PriceSeries", __context: object) -> None:
        self._ts = [ts for ts, _ in self.samples]

    @property
    def timestamps(self: "PriceSeries") -> list[int]:
        return self._ts

    def inverse(self: "PriceSeries") -> "PriceSeries":
        return PriceSeries(
            base=self.quote,
            quote=self.base,
            samples=tuple((ts, UNIT_RATE / rate) for ts, rate in self.samples),
            inverted=not self.inverted,
        )

    @classmethod
    def unit(cls, asset: str) -> "PriceSeries":  # noqa: ANN102
        return cls(base=asset, quote=asset, samples=((0, UNIT_RATE),))


class PriceRange(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_min: Decimal = Field(gt=0)
    p_max: Decimal = Field(gt=0)
    window: tuple[int, int]
    inverted: bool = False

    @model_validator(mode="after")
    def check_order(self: "PriceRange") -> "PriceRange":
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} exceeds p_max {self.p_max}")
        return self


class ValueInterval(BaseModel):
    model_config = ConfigDict(frozen=True)

    lo: Decimal = Field(ge=0)
    hi: Decimal = Field(ge=0)

    def __contains__(self: "ValueInterval", amount: object) -> bool:
        return isinstance(amount, Decimal) and self.lo <= amount <= self.hi


def rate_at(series: PriceSeries, t: int) -> Decimal:
    idx = bisect_right(series.timestamps, t) - 1
    if idx < 0:
        raise PriceOutOfRangeError(
            f"no {series.base}/{series.quote} rate at {t}, series starts at {series.timestamps[0]}"
        )
    return series.samples[idx][1]


def range_over(series: PriceSeries, lo: int, hi: int) -> PriceRange:
    """Min/max over samples in [lo, hi] plus the step value in effect at ``lo``."""
    if lo > hi:
        raise RangeError(f"price window is empty: [{lo}, {hi}]")
    ts = series.timestamps
    end = bisect_right(ts, hi)
    if end == 0:
        raise PriceOutOfRangeError(f"{series.base}/{series.quote} has no coverage in [{lo}, {hi}]")
    start = max(bisect_right(ts, lo) - 1, 0)
    rates = [rate for _, rate in series.samples[start:end]]
    return PriceRange(p_min=min(rates), p_max=max(rates), window=(lo, hi), inverted=series.inverted)


def source_value_interval(price_range: PriceRange, a_dst: Decimal, eps_p: Decimal) -> ValueInterval:
    if not Decimal(0) <= eps_p < 1:
        raise ConfigError(f"eps_p must be in [0, 1), got {eps_p}")
    if a_dst < 0:
        raise RangeError(f"destination amount must be non-negative, got {a_dst}")
    return ValueInterval(
        lo=a_dst * price_range.p_min * (1 - eps_p),
        hi=a_dst * price_range.p_max * (1 + eps_p),
    )


def tight_range_around(series: PriceSeries, t_s: int, w_p: int) -> PriceRange:
    return range_over(series, max(t_s - w_p, 0), t_s + w_p)


def tight_max_around(series: PriceSeries, t_s: int, w_p: int) -> Decimal:
    return tight_range_around(series, t_s, w_p).p_max


class PriceOracle:
    """Read-only collection of price series keyed by (base, quote)."""

    def __init__(self: "PriceOracle", series: Iterable[PriceSeries] = ()) -> None:
        self._series: dict[tuple[str, str], PriceSeries] = {}
        for s in series:
            if (s.base, s.quote) in self._series:
                raise ConfigError(f"duplicate price series {s.base}/{s.quote}")
            self._series[(s.base, s.quote)] = s
        self._inverted: dict[tuple[str, str], PriceSeries] = {}

    def __iter__(self):  # noqa: ANN204
        return iter(self._series[k] for k in sorted(self._series))

    def __len__(self: "PriceOracle") -> int:
        return len(self._series)

    def series(self: "PriceOracle", base: str, quote: str) -> PriceSeries:
        """Series for base/quote, served from the reverse pair by inversion when only that one is stored."""
        if base == quote:
            return PriceSeries.unit(base)
        direct = self._series.get((base, quote))
        if direct is not None:
            return direct
        cached = self._inverted.get((base, quote))
        if cached is not None:
            return cached
        reverse = self._series.get((quote, base))
        if reverse is None:
            raise MissingPriceSeriesError(base, quote)
        inverted = reverse.inverse()
        # benign race: concurrent readers may build the same inverse twice
        self._inverted[(base, quote)] = inverted
        return inverted
