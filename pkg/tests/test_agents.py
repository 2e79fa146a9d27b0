from __future__ import annotations

import json
import random

import httpx
import pytest
from hypothesis import given, strategies as st

from negosim.agents import (
    OPENER,
    AgentConfig,
    ChatBackend,
    ScriptedBackend,
    Utterance,
    extract_prices,
    generate_reply,
    render_buyer_prompt,
    render_seller_prompt,
    strategy_tag,
    truncate_reply,
)
from negosim.errors import BackendRefusal, BackendUnavailable, ProtocolError
from negosim.llm import ChatClient
from negosim.metrics import scripted_price_path
from negosim.personality import PersonaInstruction
from negosim.roles import Role
from negosim.scenario import NegotiationScenario, format_price

PERSONA = PersonaInstruction.from_adjectives(["very friendly", "a bit lazy", "curious"])


def test_buyer_prompt_contents(speaker_scenario):
    text = render_buyer_prompt(speaker_scenario, PERSONA)
    assert "strike a deal for a Stereo Speaker" in text
    assert "pay for 30" in text
    assert text.index("Act as a buyer") < text.index("You have following personality:")
    assert text.endswith(PERSONA.rendered)


def test_seller_prompt_contents(speaker_scenario):
    sc = NegotiationScenario.from_prices("Lamp", "Brass lamp,\nworks fine.", 160, 144)
    text = render_seller_prompt(sc, PERSONA)
    assert "listing price for this item is 160" in text
    assert "Brass lamp,\nworks fine." in text
    assert text.index("Act as a seller") < text.index("You have following personality:")


def test_rendering_is_pure(speaker_scenario):
    assert render_buyer_prompt(speaker_scenario, PERSONA) == render_buyer_prompt(speaker_scenario, PERSONA)
    assert render_seller_prompt(speaker_scenario, PERSONA) == render_seller_prompt(speaker_scenario, PERSONA)


@given(listing=st.integers(200, 99_999), gap=st.integers(20, 150))
def test_private_prices_never_leak(listing, gap):
    target = listing - gap
    sc = NegotiationScenario.from_prices("Thing", "A thing.", listing, target)
    buyer = render_buyer_prompt(sc, PERSONA)
    seller = render_seller_prompt(sc, PERSONA)
    for p in (sc.seller_ideal, sc.seller_reservation, sc.buyer_reservation):
        assert format_price(p) not in buyer.replace(format_price(sc.buyer_ideal), "")
    for p in (sc.buyer_ideal, sc.buyer_reservation):
        assert format_price(p) not in seller.replace(format_price(sc.seller_ideal), "")


def test_extract_prices():
    assert extract_prices("Its price is $80.") == [80]
    assert extract_prices("$1,250.50 or 900 dollars") == [1250.50, 900]
    assert extract_prices("was $80 ... now $75") == [80, 75]
    assert extract_prices("two items, 3 years old") == []
    assert extract_prices("$70 [strategy: $90 anchor]") == [70]


def test_strategy_tag():
    assert strategy_tag("ok [strategy: concede on price]") == "concede on price"
    assert strategy_tag("no tag") is None


def test_truncation_prefers_sentence_boundary():
    text = "First sentence. Second one is longer! Third"
    assert truncate_reply(text, 100) == (text, False)
    assert truncate_reply(text, 30) == ("First sentence.", True)
    assert truncate_reply("abcdefghij", 4) == ("abcd", True)


def _agent(role, scenario, backend, **kw):
    return AgentConfig(role, scenario, PERSONA, backend, **kw)


def test_buyer_never_opens(speaker_scenario):
    buyer = _agent(Role.BUYER, speaker_scenario, ScriptedBackend.for_scenario(Role.BUYER, speaker_scenario))
    with pytest.raises(ProtocolError):
        generate_reply(buyer, [])


def test_out_of_order_history_rejected(speaker_scenario):
    seller = _agent(Role.SELLER, speaker_scenario, ScriptedBackend.for_scenario(Role.SELLER, speaker_scenario))
    with pytest.raises(ProtocolError):
        generate_reply(seller, [Utterance(1, Role.BUYER, "hello")])


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_scripted_reply_carries_path_price(speaker_scenario, c):
    backend = ScriptedBackend.for_scenario(Role.SELLER, speaker_scenario, concession=c, horizon=10)
    seller = _agent(Role.SELLER, speaker_scenario, backend)
    history = [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "Could you go lower?")]
    utt = generate_reply(seller, history)
    expected = scripted_price_path(33.0, 50.0, c, 10, 3)
    assert utt.index == 3 and utt.speaker is Role.SELLER
    assert [float(p) for p in extract_prices(utt.text)] == [expected]


def test_scripted_accepts_crossing_offer(speaker_scenario):
    backend = ScriptedBackend.for_scenario(Role.SELLER, speaker_scenario, horizon=10)
    history = [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "I'll pay $49")]
    assert "deal" in generate_reply(_agent(Role.SELLER, speaker_scenario, backend), history).text


def test_scripted_patience_walks_away(speaker_scenario):
    backend = ScriptedBackend.for_scenario(Role.BUYER, speaker_scenario, patience=2)
    history = [Utterance(1, Role.SELLER, OPENER)]
    assert "walking away" in generate_reply(_agent(Role.BUYER, speaker_scenario, backend), history).text


def test_scripted_only_sees_own_prices(speaker_scenario):
    b = ScriptedBackend.for_scenario(Role.BUYER, speaker_scenario)
    assert (b.ideal, b.reservation) == (30.0, 47.0)
    s = ScriptedBackend.for_scenario(Role.SELLER, speaker_scenario)
    assert (s.ideal, s.reservation) == (50.0, 33.0)


class _Empty:
    identifier = "empty"

    def generate(self, system, messages, **params):
        return "   "


def test_empty_reply_is_refusal(speaker_scenario):
    seller = _agent(Role.SELLER, speaker_scenario, _Empty())
    with pytest.raises(BackendRefusal):
        generate_reply(seller, [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "hi")])


def test_long_reply_is_truncated_and_flagged(speaker_scenario):
    class Chatty:
        identifier = "chatty"

        def generate(self, system, messages, **params):
            return "This is great. " * 50

    seller = _agent(Role.SELLER, speaker_scenario, Chatty(), max_reply_chars=40)
    utt = generate_reply(seller, [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "hi")])
    assert utt.truncated and len(utt.text) <= 40 and utt.text.endswith(".")


def test_chat_backend_echo(speaker_scenario):
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": "canned reply"},
                                                      "finish_reason": "stop"}]})

    client = ChatClient("echo-model", api_key="k", transport=httpx.MockTransport(handler), params={"temperature": 0})
    seller = _agent(Role.SELLER, speaker_scenario, ChatBackend(client))
    utt = generate_reply(seller, [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "Is it new?")])
    assert utt.text == "canned reply"
    msgs = seen["body"]["messages"]
    assert msgs[0]["role"] == "system" and "Act as a seller" in msgs[0]["content"]
    assert [m["role"] for m in msgs[1:]] == ["assistant", "user"]
    assert seen["body"]["temperature"] == 0 and seen["body"]["model"] == "echo-model"


def test_chat_backend_unavailable(speaker_scenario):
    client = ChatClient("m", api_key="k", transport=httpx.MockTransport(lambda r: httpx.Response(401, text="no")))
    seller = _agent(Role.SELLER, speaker_scenario, ChatBackend(client))
    with pytest.raises(BackendUnavailable):
        generate_reply(seller, [Utterance(1, Role.SELLER, OPENER), Utterance(2, Role.BUYER, "hi")])


def test_random_history_lengths_follow_turn_order(speaker_scenario):
    rng = random.Random(0)
    seller = _agent(Role.SELLER, speaker_scenario, ScriptedBackend.for_scenario(Role.SELLER, speaker_scenario))
    buyer = _agent(Role.BUYER, speaker_scenario, ScriptedBackend.for_scenario(Role.BUYER, speaker_scenario))
    for _ in range(50):
        n = rng.randint(1, 12)
        history = [Utterance(i, Role.SELLER if i % 2 else Role.BUYER, "hm") for i in range(1, n + 1)]
        right, wrong = (seller, buyer) if (n + 1) % 2 else (buyer, seller)
        assert generate_reply(right, history).index == n + 1
        with pytest.raises(ProtocolError):
            generate_reply(wrong, history)
