"""Role prompts, agent configuration and reply generation.

An agent is a role bound to a scenario, a persona instruction and a text
generation backend. Two backends ship: :class:`ChatBackend` talks to a
chat-completion endpoint, :class:`ScriptedBackend` produces deterministic
offers along a time-discounted price path and serves as a test oracle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Mapping, Protocol, Sequence

from .errors import BackendRefusal, ProtocolError
from .llm import ChatClient
from .metrics import scripted_price_path
from .personality import PersonaInstruction, PersonalityProfile
from .roles import Role
from .scenario import NegotiationScenario, format_price

OPENER = "Hi, how can I help you?"
DEFAULT_MAX_REPLY_CHARS = 2000

BUYER_TEMPLATE = (
    "Act as a buyer and try to strike a deal for a {product} with a lower price through conversation. "
    "Your reply should not be too long. You would like to pay for {target}. "
    "You can accept a higher price if the item is really good or there are other perks."
)
SELLER_TEMPLATE = (
    "Act as a seller that sells a {product}, bargains with the buyer to get a higher deal price. "
    "Your reply should not be too long. Your listing price for this item is {listing}. "
    "The detail of the product is the following: \n{description}"
)


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: Role
    text: str
    truncated: bool = False


def render_buyer_prompt(scenario: NegotiationScenario, persona: PersonaInstruction) -> str:
    objective = BUYER_TEMPLATE.format(product=scenario.product, target=format_price(scenario.buyer_ideal))
    return f"{objective}\n\n{persona.rendered}"


def render_seller_prompt(scenario: NegotiationScenario, persona: PersonaInstruction) -> str:
    objective = SELLER_TEMPLATE.format(
        product=scenario.product,
        listing=format_price(scenario.seller_ideal),
        description=scenario.description,
    )
    return f"{objective}\n\n{persona.rendered}"


def render_prompt(role: Role, scenario: NegotiationScenario, persona: PersonaInstruction) -> str:
    if role is Role.BUYER:
        return render_buyer_prompt(scenario, persona)
    return render_seller_prompt(scenario, persona)


class GenerationBackend(Protocol):
    identifier: str

    def generate(self, system: str, messages: Sequence[dict[str, str]], **params: Any) -> str:
        """Return the next reply given the system prompt and the chat history.

        ``messages`` use the agent's own perspective: its turns are
        ``assistant``, the opponent's are ``user``. Must not mutate ``messages``.
        """
        ...


class ChatBackend:
    def __init__(self, client: ChatClient):
        self.client = client
        self.identifier = f"chat:{client.identifier}"

    def generate(self, system: str, messages: Sequence[dict[str, str]], **params: Any) -> str:
        return self.client.reply_text([{"role": "system", "content": system}, *messages], **params)


# "$1,234.50", "$60", "$ 41.25"
_DOLLAR_RE = re.compile(r"\$\s?((?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)")
_DOLLARS_WORD_RE = re.compile(r"\b((?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)\s*(?:dollars|usd|bucks)\b", re.I)
_TAG_RE = re.compile(r"\[strategy:\s*([^\]]*)\]", re.I)


def extract_prices(text: str) -> list[Decimal]:
    """Currency amounts in order of appearance (``$N`` or ``N dollars``)."""
    text = _TAG_RE.sub(" ", text)
    found = [(m.start(), m.group(1)) for m in _DOLLAR_RE.finditer(text)]
    found += [(m.start(), m.group(1)) for m in _DOLLARS_WORD_RE.finditer(text)]
    found.sort()
    return [Decimal(s.replace(",", "")) for _, s in found]


def last_price(text: str) -> Decimal | None:
    prices = extract_prices(text)
    return prices[-1] if prices else None


def strategy_tag(text: str) -> str | None:
    m = _TAG_RE.search(text)
    return m.group(1).strip() if m else None


@dataclass
class ScriptedBackend:
    """Deterministic bargainer following a time-discounted price path.

    At utterance ``t`` the agent's current price is
    ``scripted_price_path(reservation, ideal, concession, horizon, min(t, horizon))``.
    It accepts as soon as the opponent's latest offer is at least as good as
    that price, walks away once ``t >= patience`` (when set), and otherwise
    offers its current price. Prices are written with full float precision
    unless ``price_digits`` is given, so the offers parsed back from the
    transcript equal the path exactly.
    """

    role: Role
    ideal: float
    reservation: float
    concession: float = 1.0
    horizon: int = 20
    patience: int | None = None
    price_digits: int | None = None
    identifier: str = field(default="scripted", init=False)

    @classmethod
    def for_scenario(cls, role: Role, scenario: NegotiationScenario, **kwargs) -> ScriptedBackend:
        # Each side only ever sees its own two prices.
        if role is Role.SELLER:
            ideal, reservation = scenario.seller_ideal, scenario.seller_reservation
        else:
            ideal, reservation = scenario.buyer_ideal, scenario.buyer_reservation
        return cls(role, float(ideal), float(reservation), **kwargs)

    def price_at(self, t: int) -> float:
        return scripted_price_path(self.reservation, self.ideal, self.concession, self.horizon, min(t, self.horizon))

    def _crosses(self, offer: float, own: float) -> bool:
        return offer >= own if self.role is Role.SELLER else offer <= own

    def _fmt(self, price: float) -> str:
        if self.price_digits is None:
            return repr(float(price))
        return f"{price:.{self.price_digits}f}"

    def generate(self, system: str, messages: Sequence[dict[str, str]], **params: Any) -> str:
        t = len(messages) + 1
        own = self.price_at(t)
        if messages and messages[-1]["role"] == "user":
            offered = last_price(messages[-1]["content"])
            if offered is not None and self._crosses(float(offered), own):
                return "Okay, it's a deal. [strategy: accept the offer]"
        if self.patience is not None and t >= self.patience:
            return "No deal, I'm walking away. [strategy: walk away]"

        own_turns = [
            i + 1 for i, m in enumerate(messages)
            if m["role"] == "assistant" and last_price(m["content"]) is not None
        ]
        if not own_turns:
            tag = "emphasize the listing price" if self.role is Role.SELLER else "firm opening offer"
        elif abs(self.price_at(own_turns[-1]) - own) < 0.01 * abs(self.ideal - self.reservation):
            tag = "take-it-or-leave-it stance"
        else:
            tag = "concede on price"
        price = self._fmt(own)
        if self.role is Role.SELLER:
            return f"I can do ${price}. [strategy: {tag}]"
        return f"How about ${price}? [strategy: {tag}]"


@dataclass(frozen=True)
class AgentConfig:
    role: Role
    scenario: NegotiationScenario
    persona: PersonaInstruction
    backend: GenerationBackend
    profile: PersonalityProfile | None = None
    params: Mapping[str, Any] = field(default_factory=dict)
    max_reply_chars: int = DEFAULT_MAX_REPLY_CHARS

    @property
    def system_prompt(self) -> str:
        return render_prompt(self.role, self.scenario, self.persona)


def expected_speaker(index: int) -> Role:
    """Seller speaks on odd utterances (it opens), buyer on even ones."""
    return Role.SELLER if index % 2 == 1 else Role.BUYER


def check_history(history: Sequence[Utterance]) -> None:
    for pos, utt in enumerate(history, 1):
        if utt.index != pos:
            raise ProtocolError(f"utterance {pos} carries index {utt.index}")
        if utt.speaker is not expected_speaker(pos):
            raise ProtocolError(f"utterance {pos} spoken by {utt.speaker.value}, expected {expected_speaker(pos).value}")


def to_messages(role: Role, history: Sequence[Utterance]) -> list[dict[str, str]]:
    return [
        {"role": "assistant" if u.speaker is role else "user", "content": u.text}
        for u in history
    ]


_SENTENCE_END = re.compile(r"[.!?][\"')\]]*(?=\s|$)")


def truncate_reply(text: str, limit: int) -> tuple[str, bool]:
    """Cut ``text`` to at most ``limit`` characters, preferring a sentence boundary."""
    if len(text) <= limit:
        return text, False
    head = text[:limit]
    ends = [m.end() for m in _SENTENCE_END.finditer(head)]
    if ends:
        return head[: ends[-1]].rstrip(), True
    return head.rstrip(), True


def generate_reply(agent: AgentConfig, history: Sequence[Utterance]) -> Utterance:
    """Produce the next utterance for ``agent``.

    Raises :class:`ProtocolError` when it is not the agent's turn (the buyer
    never opens) and :class:`BackendRefusal` on an empty reply; backend
    transport failures surface as :class:`BackendUnavailable`.
    """
    check_history(history)
    index = len(history) + 1
    if expected_speaker(index) is not agent.role:
        raise ProtocolError(f"turn {index} belongs to the {expected_speaker(index).value}")
    text = agent.backend.generate(agent.system_prompt, to_messages(agent.role, history), **agent.params)
    if not text or not text.strip():
        raise BackendRefusal(f"{agent.role.value} backend returned an empty reply")
    text, truncated = truncate_reply(text.strip(), agent.max_reply_chars)
    return Utterance(index, agent.role, text, truncated)
