"""Per-dialogue and per-corpus negotiation metrics.

Utilities are linear in price and normalised by each side's private
interval; the joint utility is the Nash-style product form. Concession rate
is the log-sum of how far each own offer sits from the agent's ideal price,
relative to its full interval.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, NamedTuple, Sequence

from .errors import DegenerateInterval, EmptyCorpus, NoSuccesses
from .roles import Role
from .scenario import NegotiationScenario

if TYPE_CHECKING:
    from .dialogue import DialogueRecord

DEFAULT_EPSILON = 1e-6


def scripted_price_path(reservation: float, ideal: float, concession: float, horizon: int, t: float) -> float:
    """Time-discounted offer: ``reservation + (ideal - reservation) * ((T - t) / T) ** c``.

    Starts at the ideal price at ``t = 0`` and reaches the reservation price at
    ``t = T`` (for ``c > 0``). Works for either side: the seller's ideal sits
    above its reservation, the buyer's below.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if not 0 <= t <= horizon:
        raise ValueError(f"t={t} outside [0, {horizon}]")
    if concession < 0:
        raise ValueError("concession exponent must be >= 0")
    return reservation + (ideal - reservation) * ((horizon - t) / horizon) ** concession


def _interval(scenario: NegotiationScenario, role: Role) -> tuple[float, float]:
    """(low, high) of the role's private interval as floats."""
    if role is Role.SELLER:
        lo, hi = float(scenario.seller_reservation), float(scenario.seller_ideal)
    else:
        lo, hi = float(scenario.buyer_ideal), float(scenario.buyer_reservation)
    if hi == lo:
        raise DegenerateInterval(f"{role.value} interval is empty")
    return lo, hi


def intrinsic_utility(role: Role, price, scenario: NegotiationScenario) -> float:
    """Seller: share of its interval above the reservation; buyer: share below its reservation.

    Not clamped: prices outside the private interval give values outside [0, 1].
    """
    p = float(price)
    lo, hi = _interval(scenario, role)
    if role is Role.SELLER:
        return (p - lo) / (hi - lo)
    return (hi - p) / (hi - lo)


def joint_utility(price, scenario: NegotiationScenario) -> float:
    p = float(price)
    s_res, b_res = float(scenario.seller_reservation), float(scenario.buyer_reservation)
    if b_res <= s_res:
        raise DegenerateInterval("agreement zone is empty")
    return (p - s_res) * (b_res - p) / (b_res - s_res) ** 2


def out_of_range(value: float) -> bool:
    return not 0.0 <= value <= 1.0


class Concession(NamedTuple):
    value: float
    n_offers: int

    @property
    def empty(self) -> bool:
        return self.n_offers == 0


def concession_rate(
    role: Role,
    offers: Sequence[tuple[int, object]],
    scenario: NegotiationScenario,
    *,
    epsilon: float = DEFAULT_EPSILON,
) -> Concession:
    """Sum of ``log(distance from ideal / interval width)`` over the role's own offers.

    ``offers`` are ``(t, price)`` pairs for turns where this role made an
    offer. Each ratio is clamped to ``[epsilon, inf)`` so an offer sitting at
    the ideal price contributes ``log(epsilon)`` instead of ``-inf``.
    """
    lo, hi = _interval(scenario, role)
    total = 0.0
    for _, price in offers:
        p = float(price)
        if role is Role.SELLER:
            ratio = (hi - p) / (hi - lo)
        else:
            ratio = (p - lo) / (hi - lo)
        total += math.log(max(ratio, epsilon))
    return Concession(total, len(offers))


def success_rate(records: Sequence[DialogueRecord]) -> float:
    if not records:
        raise EmptyCorpus("success rate of an empty corpus")
    return sum(1 for r in records if r.outcome.success) / len(records)


def avg_rounds(records: Iterable[DialogueRecord]) -> float:
    rounds = [r.outcome.rounds for r in records if r.outcome.success]
    if not rounds:
        raise NoSuccesses("no successful negotiations")
    return sum(rounds) / len(rounds)


@dataclass(frozen=True)
class MetricsRow:
    dialogue_id: str
    category: str | None
    listing_price: float
    rounds: int
    words: int
    success: bool
    deal_price: float | None = None
    seller_utility: float | None = None
    buyer_utility: float | None = None
    joint_utility: float | None = None
    seller_concession: float | None = None
    buyer_concession: float | None = None
    seller_offers: int = 0
    buyer_offers: int = 0
    out_of_range: bool = False

    FIELDS = (
        "dialogue_id", "category", "listing_price", "rounds", "words", "success", "deal_price",
        "seller_utility", "buyer_utility", "joint_utility", "seller_concession", "buyer_concession",
        "seller_offers", "buyer_offers", "out_of_range",
    )

    def utility(self, role: Role) -> float | None:
        return self.seller_utility if role is Role.SELLER else self.buyer_utility

    def concession(self, role: Role) -> float | None:
        """Concession rate, or None when the dialogue failed or the role never offered."""
        if role is Role.SELLER:
            return self.seller_concession if self.seller_offers else None
        return self.buyer_concession if self.buyer_offers else None

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def word_count(record: DialogueRecord) -> int:
    """Whitespace-delimited tokens over every utterance, opener included."""
    return sum(len(turn.utterance.text.split()) for turn in record.turns)


def compute_metrics(record: DialogueRecord, *, epsilon: float = DEFAULT_EPSILON) -> MetricsRow:
    sc = record.scenario
    base = dict(
        dialogue_id=record.id,
        category=sc.category,
        listing_price=float(sc.seller_ideal),
        rounds=record.outcome.rounds,
        words=word_count(record),
        success=record.outcome.success,
    )
    if not record.outcome.success:
        return MetricsRow(**base)
    price = record.outcome.price
    u_s = intrinsic_utility(Role.SELLER, price, sc)
    u_b = intrinsic_utility(Role.BUYER, price, sc)
    u_sb = joint_utility(price, sc)
    cr_s = concession_rate(Role.SELLER, record.offers(Role.SELLER), sc, epsilon=epsilon)
    cr_b = concession_rate(Role.BUYER, record.offers(Role.BUYER), sc, epsilon=epsilon)
    return MetricsRow(
        **base,
        deal_price=float(price),
        seller_utility=u_s,
        buyer_utility=u_b,
        joint_utility=u_sb,
        seller_concession=cr_s.value,
        buyer_concession=cr_b.value,
        seller_offers=cr_s.n_offers,
        buyer_offers=cr_b.n_offers,
        out_of_range=out_of_range(u_s) or out_of_range(u_b),
    )


@dataclass(frozen=True)
class CategoryAggregate:
    category: str
    dialogues: int
    successes: int
    success_rate: float
    avg_rounds: float | None
    mean_listing_price: float
    mean_rounds_all: float
    mean_words: float


@dataclass(frozen=True)
class CorpusSummary:
    n: int
    n_success: int
    nsr: float
    anr: float | None
    categories: tuple[CategoryAggregate, ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_success": self.n_success,
            "nsr": self.nsr,
            "anr": self.anr,
            "categories": [vars(c) for c in self.categories],
        }


def summarize(records: Sequence[DialogueRecord], rows: Sequence[MetricsRow] | None = None) -> CorpusSummary:
    if not records:
        raise EmptyCorpus("cannot summarize an empty corpus")
    rows = list(rows) if rows is not None else [compute_metrics(r) for r in records]
    n_succ = sum(1 for r in records if r.outcome.success)
    try:
        anr = avg_rounds(records)
    except NoSuccesses:
        anr = None

    groups: dict[str, list[MetricsRow]] = defaultdict(list)
    for row in rows:
        groups[row.category or "uncategorized"].append(row)
    cats = []
    for name in sorted(groups):
        g = groups[name]
        succ = [r for r in g if r.success]
        cats.append(
            CategoryAggregate(
                category=name,
                dialogues=len(g),
                successes=len(succ),
                success_rate=len(succ) / len(g),
                avg_rounds=sum(r.rounds for r in succ) / len(succ) if succ else None,
                mean_listing_price=sum(r.listing_price for r in g) / len(g),
                mean_rounds_all=sum(r.rounds for r in g) / len(g),
                mean_words=sum(r.words for r in g) / len(g),
            )
        )
    return CorpusSummary(len(records), n_succ, success_rate(records), anr, tuple(cats))
