"""Negotiation scenarios: product, ideal prices and the derived agreement zone.

Each side has an ideal price (seller listing, buyer target) and a private
reservation price. Reservation prices are not in the source data; they are
derived by taking a fraction of the interval between the two ideal prices as
the agreement zone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Mapping

from .errors import InvalidPriceOrder, ScenarioFileError

log = logging.getLogger(__name__)

CATEGORIES = ("electronics", "phones", "furniture", "bikes", "housing", "cars")
PLACEMENTS = ("centered", "low", "high")
DEFAULT_ZONE_FRACTION = Decimal("0.7")
CENT = Decimal("0.01")


def to_decimal(value: Any) -> Decimal:
    """Exact decimal from int/str/float/Decimal; floats go through their repr."""
    if isinstance(value, Decimal):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a price")
    if isinstance(value, (int, str)):
        return Decimal(value)
    if isinstance(value, float):
        return Decimal(repr(value))
    raise TypeError(f"cannot convert {type(value).__name__} to Decimal")


def format_price(value: Decimal) -> str:
    """``160.00 -> "160"``, ``30.50 -> "30.50"``; no exponent notation."""
    if value == value.to_integral_value():
        return str(value.quantize(Decimal(1)))
    return format(value, "f")


def derive_zone(
    buyer_ideal,
    seller_ideal,
    zone_fraction=DEFAULT_ZONE_FRACTION,
    placement: str = "centered",
) -> tuple[Decimal, Decimal]:
    """Return ``(seller_reservation, buyer_reservation)``.

    The agreement zone has width ``zone_fraction * (seller_ideal - buyer_ideal)``
    and by default sits centered in that interval. Arithmetic is exact.

    >>> derive_zone(30, 50, "0.7")
    (Decimal('33.0'), Decimal('47.0'))
    """
    lo, hi, frac = to_decimal(buyer_ideal), to_decimal(seller_ideal), to_decimal(zone_fraction)
    if lo <= 0 or lo >= hi:
        raise InvalidPriceOrder(f"need 0 < buyer ideal < seller ideal, got {lo} and {hi}")
    if not (0 < frac <= 1):
        raise ValueError(f"zone_fraction must be in (0, 1], got {frac}")
    width = hi - lo
    zone = frac * width
    if placement == "centered":
        mid = (lo + hi) / 2
        return mid - zone / 2, mid + zone / 2
    if placement == "low":
        return lo, lo + zone
    if placement == "high":
        return hi - zone, hi
    raise ValueError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")


@dataclass(frozen=True)
class NegotiationScenario:
    product: str
    description: str
    seller_ideal: Decimal
    buyer_ideal: Decimal
    seller_reservation: Decimal
    buyer_reservation: Decimal
    zone_fraction: Decimal = DEFAULT_ZONE_FRACTION
    category: str | None = None

    def __post_init__(self):
        if not self.buyer_ideal > 0:
            raise InvalidPriceOrder("buyer ideal price must be positive")
        if not self.buyer_ideal < self.seller_ideal:
            raise InvalidPriceOrder(
                f"buyer ideal {self.buyer_ideal} must be below seller ideal {self.seller_ideal}"
            )
        if not self.seller_reservation < self.buyer_reservation:
            raise InvalidPriceOrder("agreement zone is empty")
        if not (self.buyer_ideal <= self.seller_reservation and self.buyer_reservation <= self.seller_ideal):
            raise InvalidPriceOrder("agreement zone must lie inside [buyer ideal, seller ideal]")
        if self.category is not None and self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")

    @classmethod
    def from_prices(
        cls,
        product: str,
        description: str,
        listing_price,
        target_price,
        *,
        zone_fraction=DEFAULT_ZONE_FRACTION,
        placement: str = "centered",
        category: str | None = None,
    ) -> NegotiationScenario:
        seller_ideal = to_decimal(listing_price).quantize(CENT)
        buyer_ideal = to_decimal(target_price).quantize(CENT)
        frac = to_decimal(zone_fraction)
        seller_res, buyer_res = derive_zone(buyer_ideal, seller_ideal, frac, placement)
        return cls(product, description, seller_ideal, buyer_ideal, seller_res, buyer_res, frac, category)

    @property
    def zone(self) -> tuple[Decimal, Decimal]:
        return self.seller_reservation, self.buyer_reservation

    def to_dict(self) -> dict[str, Any]:
        return {
            "product": self.product,
            "description": self.description,
            "category": self.category,
            "seller_ideal": str(self.seller_ideal),
            "buyer_ideal": str(self.buyer_ideal),
            "seller_reservation": str(self.seller_reservation),
            "buyer_reservation": str(self.buyer_reservation),
            "zone_fraction": str(self.zone_fraction),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> NegotiationScenario:
        return cls(
            product=data["product"],
            description=data.get("description", ""),
            seller_ideal=Decimal(data["seller_ideal"]),
            buyer_ideal=Decimal(data["buyer_ideal"]),
            seller_reservation=Decimal(data["seller_reservation"]),
            buyer_reservation=Decimal(data["buyer_reservation"]),
            zone_fraction=Decimal(data.get("zone_fraction", DEFAULT_ZONE_FRACTION)),
            category=data.get("category"),
        )


def _iter_array_entries(text: str):
    """Yield ``(line, value)`` for each element of a top-level JSON array."""
    decoder = json.JSONDecoder()
    ws = " \t\r\n"
    pos = 0

    def skip(p):
        while p < len(text) and text[p] in ws:
            p += 1
        return p

    pos = skip(pos)
    if pos == len(text):
        return
    if text[pos] != "[":
        raise ScenarioFileError([(text.count("\n", 0, pos) + 1, "scenario file must contain a JSON array")])
    pos = skip(pos + 1)
    if pos < len(text) and text[pos] == "]":
        return
    while True:
        line = text.count("\n", 0, pos) + 1
        try:
            value, pos = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            raise ScenarioFileError([(exc.lineno, f"JSON parse error: {exc.msg}")]) from None
        yield line, value
        pos = skip(pos)
        if pos < len(text) and text[pos] == ",":
            pos = skip(pos + 1)
            continue
        if pos < len(text) and text[pos] == "]":
            return
        raise ScenarioFileError([(text.count("\n", 0, pos) + 1, "expected ',' or ']'")])


def parse_entry(entry: Any, *, zone_fraction=DEFAULT_ZONE_FRACTION, placement: str = "centered") -> NegotiationScenario:
    if not isinstance(entry, dict):
        raise ValueError("entry is not an object")
    for key in ("product", "listing_price", "target_price"):
        if key not in entry:
            raise ValueError(f"missing key {key!r}")
    try:
        listing = to_decimal(entry["listing_price"])
        target = to_decimal(entry["target_price"])
    except (InvalidOperation, TypeError) as exc:
        raise ValueError(f"bad price: {exc}") from None
    if not listing > target > 0:
        raise InvalidPriceOrder(f"need listing_price > target_price > 0, got {listing} and {target}")
    return NegotiationScenario.from_prices(
        str(entry["product"]),
        str(entry.get("description", "")),
        listing,
        target,
        zone_fraction=zone_fraction,
        placement=placement,
        category=entry.get("category"),
    )


def load_scenarios(
    path: str | Path,
    *,
    zone_fraction=DEFAULT_ZONE_FRACTION,
    placement: str = "centered",
    strict: bool = True,
) -> list[NegotiationScenario]:
    """Read a JSON array of ``{product, description, listing_price, target_price, category?}``.

    Invalid entries are collected with their line numbers. In strict mode any
    rejection raises :class:`ScenarioFileError`; otherwise rejected entries
    are logged and skipped.
    """
    text = Path(path).read_text(encoding="utf-8")
    scenarios: list[NegotiationScenario] = []
    problems: list[tuple[int, str]] = []
    for line, entry in _iter_array_entries(text):
        try:
            scenarios.append(parse_entry(entry, zone_fraction=zone_fraction, placement=placement))
        except (ValueError, InvalidPriceOrder) as exc:
            problems.append((line, str(exc)))
    if problems:
        if strict:
            raise ScenarioFileError(problems)
        for line, msg in problems:
            log.warning("%s line %d rejected: %s", path, line, msg)
    return scenarios


def dump_scenarios(scenarios, path: str | Path) -> None:
    """Write scenarios in the input file format (ideal prices only)."""
    out = []
    for sc in scenarios:
        entry = {
            "product": sc.product,
            "description": sc.description,
            "listing_price": format_price(sc.seller_ideal),
            "target_price": format_price(sc.buyer_ideal),
        }
        if sc.category:
            entry["category"] = sc.category
        out.append(entry)
    Path(path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
