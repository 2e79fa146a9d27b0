"""Big Five trait space, profile sampling and persona instructions.

A profile assigns each of the five dimensions one of six trait levels
(negative/positive polarity times low/moderate/high degree). Agents are
conditioned on a profile through personality-describing adjectives drawn
from a bundled table of bipolar pairs.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyAdjectiveList, InsufficientAdjectives, TableFormatError


class Dimension(str, enum.Enum):
    OPE = "OPE"
    CON = "CON"
    EXT = "EXT"
    AGR = "AGR"
    NEU = "NEU"


DIMENSIONS: tuple[Dimension, ...] = tuple(Dimension)


class Polarity(str, enum.Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"


class Degree(str, enum.Enum):
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"


_DEGREE_RANK = {Degree.LOW: 1, Degree.MODERATE: 2, Degree.HIGH: 3}
_MODIFIERS = {Degree.HIGH: "very ", Degree.LOW: "a bit ", Degree.MODERATE: ""}


@dataclass(frozen=True, order=False)
class TraitLevel:
    polarity: Polarity
    degree: Degree

    @property
    def code(self) -> str:
        """Sign notation, e.g. ``"---"`` for highly negative, ``"+"`` for lowly positive."""
        sign = "+" if self.polarity is Polarity.POSITIVE else "-"
        return sign * _DEGREE_RANK[self.degree]

    @property
    def ordinal(self) -> int:
        """Position on the -3..-1, +1..+3 spectrum."""
        rank = _DEGREE_RANK[self.degree]
        return rank if self.polarity is Polarity.POSITIVE else -rank

    @property
    def modifier(self) -> str:
        return _MODIFIERS[self.degree]

    @classmethod
    def from_code(cls, code: str) -> TraitLevel:
        if not code or set(code) not in ({"+"}, {"-"}) or len(code) > 3:
            raise ValueError(f"invalid trait level code {code!r}")
        polarity = Polarity.POSITIVE if code[0] == "+" else Polarity.NEGATIVE
        degree = {1: Degree.LOW, 2: Degree.MODERATE, 3: Degree.HIGH}[len(code)]
        return cls(polarity, degree)

    def __str__(self) -> str:
        return self.code


# Fixed order: highly negative ... highly positive.
TRAIT_LEVELS: tuple[TraitLevel, ...] = tuple(
    TraitLevel.from_code(c) for c in ("---", "--", "-", "+", "++", "+++")
)


@dataclass(frozen=True)
class PersonalityProfile:
    levels: Mapping[Dimension, TraitLevel]

    def __post_init__(self):
        keys = set(self.levels)
        if keys != set(DIMENSIONS) or len(self.levels) != len(DIMENSIONS):
            raise ValueError(f"profile must cover all five dimensions, got {sorted(k.value for k in keys)}")
        # Normalise to dimension order so equality and serialization are stable.
        object.__setattr__(self, "levels", {d: self.levels[d] for d in DIMENSIONS})

    def __getitem__(self, dim: Dimension) -> TraitLevel:
        return self.levels[dim]

    def __hash__(self):
        return hash(tuple(self.levels[d] for d in DIMENSIONS))

    def ordinal(self, dim: Dimension) -> int:
        return self.levels[dim].ordinal

    def to_dict(self) -> dict[str, str]:
        return {d.value: self.levels[d].code for d in DIMENSIONS}

    @classmethod
    def from_dict(cls, data: Mapping[str, str]) -> PersonalityProfile:
        return cls({Dimension(k): TraitLevel.from_code(v) for k, v in data.items()})

    def __str__(self) -> str:
        return ", ".join(f"{d.value}{self.levels[d].code}" for d in DIMENSIONS)


@dataclass(frozen=True)
class AdjectivePair:
    dimension: Dimension
    negative: str
    positive: str

    def __post_init__(self):
        if self.negative == self.positive:
            raise ValueError(f"degenerate pair for {self.dimension.value}: {self.negative!r}")

    def side(self, polarity: Polarity) -> str:
        return self.positive if polarity is Polarity.POSITIVE else self.negative


@dataclass(frozen=True)
class PersonaInstruction:
    adjectives: tuple[str, ...]
    rendered: str

    @classmethod
    def from_adjectives(cls, adjectives: Sequence[str]) -> PersonaInstruction:
        return cls(tuple(adjectives), render_personality_instruction(adjectives))


EXPECTED_PAIRS = 70


def parse_adjective_table(lines: Iterable[str], *, expected: int | None = EXPECTED_PAIRS) -> list[AdjectivePair]:
    """Parse ``dimension<TAB>negative<TAB>positive`` records.

    Blank lines and ``#`` comments are skipped. With ``expected`` set, the
    row count is enforced as well.
    """
    pairs: list[AdjectivePair] = []
    seen: dict[str, Dimension] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TableFormatError(f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
        dim_s, neg, pos = (f.strip() for f in fields)
        try:
            dim = Dimension(dim_s)
        except ValueError:
            raise TableFormatError(f"line {lineno}: unknown dimension {dim_s!r}") from None
        for word in (neg, pos):
            if not word:
                raise TableFormatError(f"line {lineno}: empty adjective")
            if word in seen:
                raise TableFormatError(f"line {lineno}: adjective {word!r} already listed")
            seen[word] = dim
        try:
            pairs.append(AdjectivePair(dim, neg, pos))
        except ValueError as exc:
            raise TableFormatError(f"line {lineno}: {exc}") from None
    if expected is not None and len(pairs) != expected:
        raise TableFormatError(f"expected {expected} adjective pairs, found {len(pairs)}")
    missing = set(DIMENSIONS) - {p.dimension for p in pairs}
    if missing:
        raise TableFormatError(f"no adjective pairs for {sorted(d.value for d in missing)}")
    return pairs


def load_adjective_table(path: str | Path | None = None) -> list[AdjectivePair]:
    """Load the adjective table; the bundled 70-pair table when ``path`` is None."""
    if path is None:
        text = resources.files("negosim.data").joinpath("adjectives.tsv").read_text(encoding="utf-8")
        return parse_adjective_table(text.splitlines())
    with open(path, encoding="utf-8") as fh:
        return parse_adjective_table(fh, expected=None)


def sample_profile(rng: random.Random) -> PersonalityProfile:
    """Draw each dimension independently and uniformly from the six trait levels."""
    return PersonalityProfile({d: rng.choice(TRAIT_LEVELS) for d in DIMENSIONS})


def select_adjectives(
    profile: PersonalityProfile,
    table: Sequence[AdjectivePair],
    n: int,
    rng: random.Random,
) -> list[str]:
    """Pick ``n`` adjectives per dimension and shuffle all ``5 * n`` of them.

    Adjectives come from the side of each pair matching the profile's
    polarity, drawn without replacement, and carry the degree modifier
    ("very " for high, "a bit " for low, nothing for moderate).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    by_dim: dict[Dimension, list[AdjectivePair]] = {d: [] for d in DIMENSIONS}
    for pair in table:
        by_dim[pair.dimension].append(pair)

    chosen: list[str] = []
    for dim in DIMENSIONS:
        pool = by_dim[dim]
        if len(pool) < n:
            raise InsufficientAdjectives(f"{dim.value} has {len(pool)} pairs, need {n}")
        level = profile[dim]
        for pair in rng.sample(pool, n):
            chosen.append(level.modifier + pair.side(level.polarity))
    rng.shuffle(chosen)
    return chosen


def render_personality_instruction(adjectives: Sequence[str]) -> str:
    if not adjectives:
        raise EmptyAdjectiveList("personality instruction needs at least one adjective")
    listing = ", ".join(adjectives)
    return f"You have following personality: {listing}. Reflect your personality in the negotiation process."


def make_persona(
    profile: PersonalityProfile,
    table: Sequence[AdjectivePair],
    n: int,
    rng: random.Random,
) -> PersonaInstruction:
    return PersonaInstruction.from_adjectives(select_adjectives(profile, table, n, rng))
