"""IPIP-50 self-report test for persona-conditioned agents.

Each of the 50 statements is rated on a 1-5 Likert scale in a fresh context.
Negatively keyed items are reverse-scored before averaging per dimension.
Correlating the assigned trait levels with the resulting scores checks that
the persona instructions are actually reflected by the agent.
"""

from __future__ import annotations

import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import BackendError, ConstantSeries, MissingItems, TableFormatError, UnparseableReply
from .llm import ChatClient
from .personality import (
    DIMENSIONS,
    AdjectivePair,
    Dimension,
    PersonalityProfile,
    load_adjective_table,
    sample_profile,
    select_adjectives,
)
from .stats import DEFAULT_ORDINALS, RankCorrelation, significance_stars, spearman

log = logging.getLogger(__name__)

ITEMS_PER_DIMENSION = 10
MIN_AGENTS = 30

IPIP_TEMPLATE = (
    "Act as person with following personality: \n{adjectives}\n"
    "Evaluate the following statement:\n{statement}.\n\n"
    'Please rate how accurately this describes you on a scale from 1 to 5 (where 1 = "very inaccurate", '
    '2 = "moderately inaccurate", 3 = "neither accurate nor inaccurate", 4 = "moderately accurate", '
    'and 5 = "very accurate"). Please answer using EXACTLY one of the following:  1, 2, 3, 4, or 5.'
)


@dataclass(frozen=True)
class IpipItem:
    id: int
    statement: str
    dimension: Dimension
    positive: bool

    @property
    def first_person(self) -> str:
        """``"Am the life of the party"`` -> ``"I am the life of the party"``."""
        s = self.statement
        return "I " + s[:1].lower() + s[1:]


def parse_items(lines: Iterable[str]) -> list[IpipItem]:
    items = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise TableFormatError(f"line {lineno}: expected id<TAB>dimension<TAB>keying<TAB>statement")
        id_s, dim_s, key_s, statement = (p.strip() for p in parts)
        if key_s not in ("positive", "negative"):
            raise TableFormatError(f"line {lineno}: keying must be positive or negative")
        try:
            items.append(IpipItem(int(id_s), statement, Dimension(dim_s), key_s == "positive"))
        except ValueError as exc:
            raise TableFormatError(f"line {lineno}: {exc}") from None
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise TableFormatError("duplicate item ids")
    for dim in DIMENSIONS:
        count = sum(1 for it in items if it.dimension is dim)
        if count != ITEMS_PER_DIMENSION:
            raise TableFormatError(f"{dim.value} has {count} items, expected {ITEMS_PER_DIMENSION}")
    return items


def load_ipip_items(path: str | Path | None = None) -> list[IpipItem]:
    if path is None:
        text = resources.files("negosim.data").joinpath("ipip50.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_items(text.splitlines())


def render_ipip_prompt(adjectives: Sequence[str], statement: str) -> str:
    return IPIP_TEMPLATE.format(adjectives=", ".join(adjectives), statement=statement)


_STANDALONE_DIGIT = re.compile(r"(?<![\d.])([1-5])(?![\d]|\.\d)")


def parse_likert(reply: str, *, strict: bool = False) -> int:
    """Extract a 1-5 rating.

    Lenient mode takes the first standalone digit 1-5. Strict mode also
    rejects replies containing any other number.
    """
    numbers = re.findall(r"\d+(?:\.\d+)?", reply)
    if strict:
        if len(numbers) != 1 or numbers[0] not in {"1", "2", "3", "4", "5"}:
            raise UnparseableReply(f"expected exactly one rating 1-5, got {reply!r}")
        return int(numbers[0])
    m = _STANDALONE_DIGIT.search(reply)
    if not m:
        raise UnparseableReply(f"no rating 1-5 in {reply!r}")
    return int(m.group(1))


def reverse_key(score: int) -> int:
    return 6 - score


@dataclass(frozen=True)
class IpipResult:
    means: Mapping[Dimension, float | None]
    answered: Mapping[Dimension, int]

    @property
    def complete(self) -> bool:
        return all(n == ITEMS_PER_DIMENSION for n in self.answered.values())


def score_ipip(
    responses: Mapping[int, int | None],
    items: Sequence[IpipItem],
    *,
    strict: bool = False,
) -> IpipResult:
    """Per-dimension mean of keyed scores; negative items count as ``6 - score``.

    Missing or ``None`` responses are skipped (``answered`` records how many
    remain); in strict mode they raise :class:`MissingItems`.
    """
    missing = [it.id for it in items if responses.get(it.id) is None]
    if strict and missing:
        raise MissingItems(f"no response for items {missing}")
    sums = {d: 0 for d in DIMENSIONS}
    counts = {d: 0 for d in DIMENSIONS}
    for it in items:
        score = responses.get(it.id)
        if score is None:
            continue
        if score not in (1, 2, 3, 4, 5):
            raise ValueError(f"item {it.id}: score {score} outside 1..5")
        sums[it.dimension] += score if it.positive else reverse_key(score)
        counts[it.dimension] += 1
    means = {d: (sums[d] / counts[d] if counts[d] else None) for d in DIMENSIONS}
    return IpipResult(means, counts)


Responder = Callable[[str], str]


class ChatResponder:
    """Answers each item with one fresh chat-completion call."""

    def __init__(self, client: ChatClient):
        self.client = client

    def __call__(self, prompt: str) -> str:
        return self.client.reply_text([{"role": "user", "content": prompt}])


_FAITHFUL_SCORES = {-3: 1, -2: 2, -1: 3, 1: 3, 2: 4, 3: 5}


class ScriptedFaithfulResponder:
    """Rates every item according to the assigned trait level.

    The level maps monotonically onto 1..5 (highly negative -> 1, highly
    positive -> 5); negatively keyed items get the mirrored answer. The item
    is recognised from its statement inside the prompt.
    """

    def __init__(self, profile: PersonalityProfile, items: Sequence[IpipItem]):
        self.profile = profile
        self._by_text = sorted(((it.first_person, it) for it in items), key=lambda p: -len(p[0]))

    def __call__(self, prompt: str) -> str:
        for text, item in self._by_text:
            if f"\n{text}.\n" in prompt:
                base = _FAITHFUL_SCORES[self.profile.ordinal(item.dimension)]
                return str(base if item.positive else reverse_key(base))
        return "I am not sure."


def administer(
    responder: Responder,
    adjectives: Sequence[str],
    items: Sequence[IpipItem],
    *,
    workers: int = 1,
    strict: bool = False,
) -> dict[int, int | None]:
    """Ask every item in its own context; unparseable answers become ``None``."""

    def ask(item: IpipItem) -> tuple[int, int | None]:
        reply = responder(render_ipip_prompt(adjectives, item.first_person))
        try:
            return item.id, parse_likert(reply, strict=strict)
        except UnparseableReply:
            log.info("item %d: unparseable reply %r", item.id, reply[:80])
            return item.id, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(ask, items))
    return dict(ask(it) for it in items)


@dataclass(frozen=True)
class IpipValidation:
    """Spearman grid keyed by ``(ipip_dimension, assigned_dimension)``."""

    grid: Mapping[tuple[Dimension, Dimension], RankCorrelation | None]
    n_agents: int
    profiles: tuple[PersonalityProfile, ...]
    results: tuple[IpipResult, ...]
    failures: tuple[str, ...] = field(default=())

    def rows(self) -> list[list[str]]:
        out = [[""] + [d.value for d in DIMENSIONS]]
        for r in DIMENSIONS:
            line = [f"IPIP {r.value}"]
            for c in DIMENSIONS:
                cell = self.grid[(r, c)]
                line.append("n/a" if cell is None else f"{cell.rho:.2f}{significance_stars(cell.p_value, ((0.05, '*'),))}")
            out.append(line)
        return out


def validate_profiles(
    make_responder: Callable[[PersonalityProfile], Responder],
    n_agents: int,
    *,
    seed: int | str = 0,
    n_adjectives: int = 3,
    table: Sequence[AdjectivePair] | None = None,
    items: Sequence[IpipItem] | None = None,
    workers: int = 1,
    ordinals: Mapping[str, float] = DEFAULT_ORDINALS,
) -> IpipValidation:
    """Sample profiles, run the test on each agent and correlate levels with scores."""
    if n_agents < MIN_AGENTS:
        raise ValueError(f"need at least {MIN_AGENTS} agents, got {n_agents}")
    table = table if table is not None else load_adjective_table()
    items = items if items is not None else load_ipip_items()
    rng = random.Random(seed)

    profiles, results, failures = [], [], []
    for k in range(n_agents):
        profile = sample_profile(rng)
        adjectives = select_adjectives(profile, table, n_adjectives, rng)
        try:
            responses = administer(make_responder(profile), adjectives, items, workers=workers)
        except BackendError as exc:
            failures.append(f"agent {k}: {exc}")
            continue
        profiles.append(profile)
        results.append(score_ipip(responses, items))

    grid: dict[tuple[Dimension, Dimension], RankCorrelation | None] = {}
    for measured in DIMENSIONS:
        for assigned in DIMENSIONS:
            xs, ys = [], []
            for prof, res in zip(profiles, results):
                if res.means[measured] is None:
                    continue
                xs.append(float(ordinals[prof[assigned].code]))
                ys.append(res.means[measured])
            try:
                grid[(measured, assigned)] = spearman(xs, ys)
            except (ConstantSeries, ValueError):
                grid[(measured, assigned)] = None
    if failures:
        log.warning("%d of %d agents failed the test", len(failures), n_agents)
    return IpipValidation(grid, len(profiles), tuple(profiles), tuple(results), tuple(failures))
