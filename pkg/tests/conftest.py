from __future__ import annotations

import json
from decimal import Decimal

import pytest

from negosim.agents import Utterance
from negosim.dialogue import AnnotatedTurn, DialogueRecord, NegotiationState, Outcome, FailureReason
from negosim.personality import DIMENSIONS, TRAIT_LEVELS, PersonalityProfile
from negosim.roles import Role
from negosim.scenario import NegotiationScenario

# (criterion, passed, detail) collected by test_acceptance and echoed at the end of the run.
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


SCENARIOS = [
    {"product": "Road bike", "description": "Aluminium frame, 54cm, new tyres.", "listing_price": 400,
     "target_price": 250, "category": "bikes"},
    {"product": "Oak desk", "description": "Solid oak, two drawers.", "listing_price": 160,
     "target_price": 100, "category": "furniture"},
    {"product": "Used phone", "description": "64GB, small scratch on the back.", "listing_price": 300,
     "target_price": 200, "category": "phones"},
    {"product": "Stereo Speaker", "description": "Bookshelf speaker pair.", "listing_price": 50,
     "target_price": 30, "category": "electronics"},
]


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenarios.json"
    path.write_text(json.dumps(SCENARIOS, indent=1), encoding="utf-8")
    return path


@pytest.fixture
def speaker_scenario():
    return NegotiationScenario.from_prices("Stereo Speaker", "Bookshelf speaker pair.", 50, 30, category="electronics")


def uniform_profile(code: str) -> PersonalityProfile:
    return PersonalityProfile.from_dict({d.value: code for d in DIMENSIONS})


def make_record(scenario, steps, *, success=None, price=None, reason=FailureReason.MAX_ROUNDS,
                seller_profile=None, buyer_profile=None, id="x"):
    """Build a record from ``(state, price, strategy)`` tuples after the opener.

    The outcome is inferred from the final state unless ``success`` is given.
    """
    opener = Utterance(1, Role.SELLER, "Hi, how can I help you?")
    turns = [AnnotatedTurn(opener, NegotiationState.CHIT_CHAT)]
    for k, (state, p, strategy) in enumerate(steps, start=2):
        speaker = Role.SELLER if k % 2 else Role.BUYER
        text = f"turn {k}" + (f" ${p}" if p is not None else "")
        turns.append(AnnotatedTurn(Utterance(k, speaker, text), NegotiationState(state),
                                   None if p is None else Decimal(str(p)), strategy))
    last = turns[-1].state
    if success is None:
        success = last is NegotiationState.ACCEPT
    if success:
        if price is None:
            price = next(t.price for t in reversed(turns) if t.price is not None)
        outcome = Outcome.deal(Decimal(str(price)), len(turns))
    else:
        if last is NegotiationState.DEAL_BREAK:
            reason = FailureReason.DEAL_BREAK
        outcome = Outcome.failure(reason, len(turns))
    return DialogueRecord(scenario, seller_profile or uniform_profile("+"), buyer_profile or uniform_profile("+"),
                          tuple(turns), outcome, id=id)


__all__ = ["make_record", "uniform_profile", "SCENARIOS", "TRAIT_LEVELS"]
