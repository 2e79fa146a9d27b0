"""Alternating-offers dialogue loop and per-utterance state detection."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Mapping, Protocol, Sequence

from .agents import OPENER, AgentConfig, Utterance, expected_speaker, extract_prices, generate_reply, strategy_tag
from .errors import BackendError
from .llm import ChatClient
from .personality import PersonalityProfile
from .roles import Role
from .scenario import NegotiationScenario

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 20


class NegotiationState(str, enum.Enum):
    OFFER = "offer"
    PONDER = "ponder"
    ACCEPT = "accept"
    DEAL_BREAK = "deal-break"
    CHIT_CHAT = "chit-chat"


class FailureReason(str, enum.Enum):
    DEAL_BREAK = "deal_break"
    MAX_ROUNDS = "max_rounds"
    BACKEND_ERROR = "backend_error"


@dataclass(frozen=True)
class Detection:
    state: NegotiationState
    price: Decimal | None = None
    strategy: str | None = None
    parse_failed: bool = False


@dataclass(frozen=True)
class AnnotatedTurn:
    utterance: Utterance
    state: NegotiationState
    price: Decimal | None = None
    strategy: str | None = None
    parse_failed: bool = False

    def __post_init__(self):
        if self.state is NegotiationState.OFFER and self.price is None:
            raise ValueError("an offer turn needs a price")
        if self.price is not None and self.price <= 0:
            raise ValueError(f"price must be positive, got {self.price}")

    @property
    def speaker(self) -> Role:
        return self.utterance.speaker

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.utterance.index,
            "speaker": self.utterance.speaker.value,
            "text": self.utterance.text,
            "state": self.state.value,
            "price": None if self.price is None else str(self.price),
            "strategy": self.strategy,
            "parse_failed": self.parse_failed,
            "truncated": self.utterance.truncated,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AnnotatedTurn:
        utt = Utterance(int(d["t"]), Role(d["speaker"]), d["text"], bool(d.get("truncated", False)))
        price = None if d.get("price") is None else Decimal(d["price"])
        return cls(utt, NegotiationState(d["state"]), price, d.get("strategy"), bool(d.get("parse_failed", False)))


@dataclass(frozen=True)
class Outcome:
    success: bool
    rounds: int
    price: Decimal | None = None
    reason: FailureReason | None = None
    detail: str | None = None

    @classmethod
    def deal(cls, price: Decimal, rounds: int) -> Outcome:
        return cls(True, rounds, price=price)

    @classmethod
    def failure(cls, reason: FailureReason, rounds: int, detail: str | None = None) -> Outcome:
        return cls(False, rounds, reason=reason, detail=detail)

    def to_dict(self) -> dict[str, Any]:
        if self.success:
            return {"status": "success", "deal_price": str(self.price), "rounds": self.rounds}
        out = {"status": "failure", "reason": self.reason.value, "rounds": self.rounds}
        if self.detail:
            out["detail"] = self.detail
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Outcome:
        if d["status"] == "success":
            return cls.deal(Decimal(d["deal_price"]), int(d["rounds"]))
        return cls.failure(FailureReason(d["reason"]), int(d["rounds"]), d.get("detail"))


@dataclass(frozen=True)
class DialogueRecord:
    scenario: NegotiationScenario
    seller_profile: PersonalityProfile | None
    buyer_profile: PersonalityProfile | None
    turns: tuple[AnnotatedTurn, ...]
    outcome: Outcome
    id: str = ""
    seller_persona: tuple[str, ...] = ()
    buyer_persona: tuple[str, ...] = ()
    started_at: str | None = None
    finished_at: str | None = None
    fingerprint: Mapping[str, Any] | None = field(default=None, compare=False)

    def profile(self, role: Role) -> PersonalityProfile | None:
        return self.seller_profile if role is Role.SELLER else self.buyer_profile

    def offers(self, role: Role) -> list[tuple[int, Decimal]]:
        return [
            (t.utterance.index, t.price)
            for t in self.turns
            if t.speaker is role and t.state is NegotiationState.OFFER
        ]

    def strategies(self, role: Role) -> list[str]:
        return [t.strategy for t in self.turns if t.speaker is role and t.strategy]

    def to_dict(self) -> dict[str, Any]:
        def side(profile, persona):
            return {"profile": profile.to_dict() if profile else None, "persona": list(persona)}

        return {
            "id": self.id,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "fingerprint": dict(self.fingerprint) if self.fingerprint else None,
            "scenario": self.scenario.to_dict(),
            "seller": side(self.seller_profile, self.seller_persona),
            "buyer": side(self.buyer_profile, self.buyer_persona),
            "turns": [t.to_dict() for t in self.turns],
            "outcome": self.outcome.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DialogueRecord:
        def prof(side):
            p = d[side].get("profile")
            return PersonalityProfile.from_dict(p) if p else None

        return cls(
            scenario=NegotiationScenario.from_dict(d["scenario"]),
            seller_profile=prof("seller"),
            buyer_profile=prof("buyer"),
            turns=tuple(AnnotatedTurn.from_dict(t) for t in d["turns"]),
            outcome=Outcome.from_dict(d["outcome"]),
            id=d.get("id", ""),
            seller_persona=tuple(d["seller"].get("persona", ())),
            buyer_persona=tuple(d["buyer"].get("persona", ())),
            started_at=d.get("started_at"),
            finished_at=d.get("finished_at"),
            fingerprint=d.get("fingerprint"),
        )

    @classmethod
    def from_json(cls, line: str) -> DialogueRecord:
        return cls.from_dict(json.loads(line))


class StateDetector(Protocol):
    identifier: str

    def detect(self, context: Sequence[Utterance], last: Utterance, role: Role) -> Detection:
        """Annotate ``last`` given the utterances before it and the speaker's role."""
        ...


_DEAL_BREAK_RE = re.compile(r"\b(walk(?:ing|s)? away|no deal|deal is off|i'?m out)\b", re.I)
_ACCEPT_RE = re.compile(r"\b(deal|accept(?:ed|s)?|agreed)\b", re.I)
_PRICE_QUESTION_RE = re.compile(r"\b(price|cost|how much|asking)\b", re.I)
_TAG_STRIP_RE = re.compile(r"\[strategy:[^\]]*\]", re.I)


class ScriptedDetector:
    """Keyword and pattern rules; deterministic and total.

    Price is the last currency amount in the utterance. Deal-break phrases
    win over acceptance phrases ("no deal" contains "deal"), acceptance wins
    over offers, and a price question without an amount is pondering.
    Strategy comes from an embedded ``[strategy: ...]`` tag.
    """

    identifier = "scripted"

    def detect(self, context: Sequence[Utterance], last: Utterance, role: Role) -> Detection:
        raw = last.text
        body = _TAG_STRIP_RE.sub(" ", raw)
        prices = extract_prices(body)
        price = prices[-1] if prices else None
        if price is not None and price <= 0:
            price = None
        tag = strategy_tag(raw)
        if _DEAL_BREAK_RE.search(body):
            return Detection(NegotiationState.DEAL_BREAK, None, tag)
        if _ACCEPT_RE.search(body):
            return Detection(NegotiationState.ACCEPT, price, tag)
        if price is not None:
            return Detection(NegotiationState.OFFER, price, tag)
        if "?" in body and _PRICE_QUESTION_RE.search(body):
            return Detection(NegotiationState.PONDER, None, tag)
        return Detection(NegotiationState.CHIT_CHAT, None, tag)


DETECTOR_TEMPLATE = (
    "You will be given a partial dialogue in which a buyer and a seller negotiate about a deal.\n"
    "Predict the average product price, dialogue state and the strategy of the {role} "
    "by the end of the dialogue.\n\n{dialogue}"
)

DETECTOR_TOOL = {
    "type": "function",
    "function": {
        "name": "record_negotiation_state",
        "description": "Record the state of the negotiation after the last utterance.",
        "parameters": {
            "type": "object",
            "properties": {
                "state": {
                    "type": "string",
                    "enum": [s.value for s in NegotiationState],
                    "description": (
                        "offer: the speaker makes a price offer; ponder: considers whether to accept or "
                        "reject the other's offer; accept: accepts the current offer; deal-break: refuses "
                        "the last offer or walks away; chit-chat: talk not related to the negotiation."
                    ),
                },
                "price": {
                    "type": ["number", "null"],
                    "description": (
                        "Price currently proposed by the last speaker. Average the per-item price if "
                        "the deal covers more than one item. Null when no price is on the table."
                    ),
                },
                "strategy": {"type": "string", "description": "Negotiation strategy of the last speaker."},
            },
            "required": ["state", "price", "strategy"],
        },
    },
}

_STATE_ALIASES = {re.sub(r"[^a-z]", "", s.value): s for s in NegotiationState}


def render_detector_prompt(context: Sequence[Utterance], last: Utterance, role: Role) -> str:
    lines = "\n".join(f"{u.speaker.value}: {u.text}" for u in [*context, last])
    return DETECTOR_TEMPLATE.format(role=role.value, dialogue=lines)


def _to_price(value: Any) -> Decimal | None:
    if value is None or isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        value = repr(value)
    cleaned = str(value).replace("$", "").replace(",", "").strip()
    if not cleaned:
        return None
    try:
        price = Decimal(cleaned)
    except InvalidOperation:
        raise ValueError(f"unparseable price {value!r}") from None
    if not price.is_finite() or price <= 0:
        return None
    return price


def parse_detection(payload: Mapping[str, Any]) -> Detection:
    """Turn a structured detector reply into a :class:`Detection`.

    Raises ValueError when the payload does not describe a valid state.
    """
    raw_state = re.sub(r"[^a-z]", "", str(payload.get("state", "")).lower())
    if raw_state not in _STATE_ALIASES:
        raise ValueError(f"unknown state {payload.get('state')!r}")
    state = _STATE_ALIASES[raw_state]
    price = _to_price(payload.get("price"))
    strategy = payload.get("strategy") or None
    if strategy is not None:
        strategy = str(strategy).strip() or None
    if state is NegotiationState.OFFER and price is None:
        raise ValueError("offer without a price")
    return Detection(state, price, strategy)


def _payload_from_response(data: Mapping[str, Any]) -> Mapping[str, Any]:
    message = data["choices"][0]["message"]
    calls = message.get("tool_calls") or []
    if calls:
        args = calls[0]["function"]["arguments"]
        return json.loads(args) if isinstance(args, str) else args
    content = message.get("content") or ""
    m = re.search(r"\{.*\}", content, re.S)
    if not m:
        raise ValueError("no JSON object in detector reply")
    return json.loads(m.group(0))


class LLMDetector:
    """State detector backed by a chat-completion model with function calling.

    Malformed replies do not stop the dialogue: the turn is annotated as
    chit-chat with ``parse_failed`` set. Transport failures propagate.
    """

    def __init__(self, client: ChatClient):
        self.client = client
        self.identifier = f"chat:{client.identifier}"

    def detect(self, context: Sequence[Utterance], last: Utterance, role: Role) -> Detection:
        prompt = render_detector_prompt(context, last, role)
        data = self.client.complete(
            [{"role": "user", "content": prompt}],
            tools=[DETECTOR_TOOL],
            tool_choice={"type": "function", "function": {"name": "record_negotiation_state"}},
        )
        try:
            return parse_detection(_payload_from_response(data))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            log.warning("detector reply for turn %d unusable: %s", last.index, exc)
            return Detection(NegotiationState.CHIT_CHAT, None, None, parse_failed=True)


def _deal_price(turns: Sequence[AnnotatedTurn], accepting: AnnotatedTurn, scenario: NegotiationScenario) -> Decimal:
    if accepting.price is not None:
        return accepting.price
    for turn in reversed(turns):
        if turn.state is NegotiationState.OFFER:
            return turn.price
    # Nothing was ever offered: the listing price is the only price on the table.
    return scenario.seller_ideal


def run_negotiation(
    seller: AgentConfig,
    buyer: AgentConfig,
    detector: StateDetector,
    t_max: int = DEFAULT_T_MAX,
    *,
    dialogue_id: str = "",
) -> DialogueRecord:
    """Simulate one dialogue and return its annotated record.

    Utterance 1 is the fixed seller opener. Agents then alternate; each new
    utterance is annotated by ``detector``. The dialogue ends on an accept
    (success), a deal-break, a backend error, or after ``t_max`` utterances
    (both failures). Errors never escape: they become failure outcomes.
    """
    if seller.role is not Role.SELLER or buyer.role is not Role.BUYER:
        raise ValueError("expected a seller and a buyer agent")
    if seller.scenario != buyer.scenario:
        raise ValueError("agents are bound to different scenarios")
    if t_max < 2:
        raise ValueError("t_max must be at least 2")

    agents = {Role.SELLER: seller, Role.BUYER: buyer}
    history: list[Utterance] = [Utterance(1, Role.SELLER, OPENER)]
    turns: list[AnnotatedTurn] = [AnnotatedTurn(history[0], NegotiationState.CHIT_CHAT)]
    outcome: Outcome | None = None

    while outcome is None:
        index = len(history) + 1
        if index > t_max:
            outcome = Outcome.failure(FailureReason.MAX_ROUNDS, len(turns))
            break
        agent = agents[expected_speaker(index)]
        try:
            utt = generate_reply(agent, history)
            det = detector.detect(list(history), utt, agent.role)
        except BackendError as exc:
            outcome = Outcome.failure(FailureReason.BACKEND_ERROR, len(turns), f"{type(exc).__name__}: {exc}")
            break
        except Exception as exc:  # every started dialogue must yield a record
            log.exception("unexpected error in dialogue %s at turn %d", dialogue_id, index)
            outcome = Outcome.failure(FailureReason.BACKEND_ERROR, len(turns), f"{type(exc).__name__}: {exc}")
            break
        turn = AnnotatedTurn(utt, det.state, det.price, det.strategy, det.parse_failed)
        history.append(utt)
        turns.append(turn)
        if turn.state is NegotiationState.ACCEPT:
            outcome = Outcome.deal(_deal_price(turns[:-1], turn, seller.scenario), len(turns))
        elif turn.state is NegotiationState.DEAL_BREAK:
            outcome = Outcome.failure(FailureReason.DEAL_BREAK, len(turns))

    return DialogueRecord(
        scenario=seller.scenario,
        seller_profile=seller.profile,
        buyer_profile=buyer.profile,
        turns=tuple(turns),
        outcome=outcome,
        id=dialogue_id,
        seller_persona=seller.persona.adjectives,
        buyer_persona=buyer.persona.adjectives,
    )
