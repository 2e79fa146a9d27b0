"""Batch orchestration: run configuration, corpus persistence and analysis outputs.

A run is described by a JSON config. ``simulate`` appends one JSON line per
dialogue to ``dialogues.jsonl`` and can be restarted: ids already on disk
are skipped. ``analyze``, ``report`` and ``ipip`` turn a corpus (or a
backend) into CSV, JSON and markdown files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import random
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .agents import BUYER_TEMPLATE, DEFAULT_MAX_REPLY_CHARS, OPENER, SELLER_TEMPLATE, AgentConfig, ChatBackend, ScriptedBackend
from .dialogue import DETECTOR_TEMPLATE, DialogueRecord, LLMDetector, ScriptedDetector, run_negotiation
from .errors import ConfigError, ConstantSeries, CorruptCorpus, EmptyCorpus, LengthMismatch, ZeroMarginal
from .ipip import IPIP_TEMPLATE, ChatResponder, IpipValidation, ScriptedFaithfulResponder, load_ipip_items, validate_profiles
from .llm import DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, ChatClient
from .metrics import MetricsRow, compute_metrics, summarize
from .personality import (
    DIMENSIONS,
    Dimension,
    PersonalityProfile,
    load_adjective_table,
    make_persona,
    render_personality_instruction,
    sample_profile,
)
from .roles import Role
from .scenario import DEFAULT_ZONE_FRACTION, PLACEMENTS, NegotiationScenario, load_scenarios, to_decimal
from .stats import (
    ContingencyTable,
    chi_square,
    canonicalize_strategy,
    frequency_filter,
    load_strategy_map,
    ols_regress,
    pearson,
    trait_metric_table,
    MIN_GRID_DIALOGUES,
)

log = logging.getLogger(__name__)

CORPUS_NAME = "dialogues.jsonl"
MANIFEST_NAME = "manifest.json"
LOGICAL_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def prompts_hash() -> str:
    """Hash of every prompt template; changes whenever wording changes."""
    sample = render_personality_instruction(["{adjectives}"])
    return _sha("\x00".join([BUYER_TEMPLATE, SELLER_TEMPLATE, OPENER, sample, DETECTOR_TEMPLATE, IPIP_TEMPLATE]))[:16]


# -- configuration ----------------------------------------------------------------

SCRIPTED_KEYS = {"type", "concession", "horizon", "patience", "price_digits", "trait", "trait_slope", "concession_spread"}
LIVE_KEYS = {"type", "model", "base_url", "api_key_env", "params", "timeout", "max_attempts", "max_requests_per_second", "max_reply_chars"}


def _check_backend_spec(name: str, spec: Mapping[str, Any]) -> dict[str, Any]:
    if not isinstance(spec, Mapping):
        raise ConfigError(f"{name}: backend spec must be an object")
    kind = spec.get("type", "scripted")
    allowed = {"scripted": SCRIPTED_KEYS, "live": LIVE_KEYS}.get(kind)
    if allowed is None:
        raise ConfigError(f"{name}: unknown backend type {kind!r}")
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"{name}: unknown keys {sorted(extra)}")
    if kind == "live" and not spec.get("model"):
        raise ConfigError(f"{name}: live backend needs a model")
    if kind == "scripted" and spec.get("trait") is not None:
        try:
            Dimension(spec["trait"])
        except ValueError:
            raise ConfigError(f"{name}: unknown trait {spec['trait']!r}") from None
    return {"type": kind, **{k: v for k, v in spec.items() if k != "type"}}


@dataclass(frozen=True)
class RunConfig:
    scenarios: str
    output_dir: str = "run"
    seed: int = 0
    n_dialogues: int = 20
    n_adjectives: int = 3
    t_max: int = 20
    zone_fraction: str = str(DEFAULT_ZONE_FRACTION)
    zone_placement: str = "centered"
    seller_backend: Mapping[str, Any] = field(default_factory=lambda: {"type": "scripted"})
    buyer_backend: Mapping[str, Any] = field(default_factory=lambda: {"type": "scripted"})
    detector: Mapping[str, Any] = field(default_factory=lambda: {"type": "scripted"})
    workers: int = 4
    clock: str = "auto"
    adjectives: str | None = None
    ipip_agents: int = 300
    ipip_backend: Mapping[str, Any] = field(default_factory=lambda: {"type": "scripted"})

    def __post_init__(self):
        if self.n_dialogues < 0:
            raise ConfigError("n_dialogues must be >= 0")
        if self.n_adjectives < 1:
            raise ConfigError("n_adjectives must be >= 1")
        if self.t_max < 2:
            raise ConfigError("t_max must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.zone_placement not in PLACEMENTS:
            raise ConfigError(f"zone_placement must be one of {PLACEMENTS}")
        if self.clock not in ("auto", "wall", "logical"):
            raise ConfigError("clock must be auto, wall or logical")
        try:
            frac = to_decimal(self.zone_fraction)
        except Exception:
            raise ConfigError(f"bad zone_fraction {self.zone_fraction!r}") from None
        if not 0 < frac < 1:
            raise ConfigError("zone_fraction must lie in (0, 1)")
        object.__setattr__(self, "zone_fraction", str(frac))
        for name in ("seller_backend", "buyer_backend", "detector", "ipip_backend"):
            object.__setattr__(self, name, _check_backend_spec(name, getattr(self, name)))
        for name in ("seller_backend", "buyer_backend"):
            if getattr(self, name).get("concession_spread", 0) < 0:
                raise ConfigError(f"{name}: concession_spread must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, base_dir: str | Path | None = None) -> RunConfig:
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "scenarios" not in data:
            raise ConfigError("config needs a scenarios path")
        data = dict(data)
        if base_dir is not None:
            for key in ("scenarios", "output_dir", "adjectives"):
                if data.get(key) and not os.path.isabs(data[key]):
                    data[key] = str(Path(base_dir) / data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @property
    def all_scripted(self) -> bool:
        return all(getattr(self, n)["type"] == "scripted" for n in ("seller_backend", "buyer_backend", "detector"))


def _plain(value):
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _file_hash(path: str | Path | None) -> str | None:
    if path is None:
        return None
    return _sha(Path(path).read_text(encoding="utf-8"))[:16]


def backend_identifier(spec: Mapping[str, Any]) -> str:
    if spec["type"] == "scripted":
        return "scripted"
    return f"chat:{spec['model']}@{spec.get('base_url', DEFAULT_BASE_URL)}"


def fingerprint(config: RunConfig) -> dict[str, Any]:
    """Provenance block stored in every record and output.

    ``hash`` covers everything that changes what a dialogue looks like; paths,
    worker count and clock mode are excluded so moving a run does not change it.
    """
    settings = config.to_dict()
    for key in ("output_dir", "workers", "clock", "scenarios", "adjectives", "ipip_agents", "ipip_backend"):
        settings.pop(key)
    block = {
        "seed": config.seed,
        "backends": {
            "seller": backend_identifier(config.seller_backend),
            "buyer": backend_identifier(config.buyer_backend),
            "detector": backend_identifier(config.detector),
        },
        "prompts_hash": prompts_hash(),
        "scenarios_hash": _file_hash(config.scenarios),
        "adjectives_hash": _file_hash(config.adjectives),
        "settings": settings,
    }
    block["hash"] = _sha(_canonical(block))[:16]
    return block


# -- backends ---------------------------------------------------------------------


def _client(spec: Mapping[str, Any], **overrides) -> ChatClient:
    return ChatClient(
        spec["model"],
        base_url=spec.get("base_url", DEFAULT_BASE_URL),
        api_key_env=spec.get("api_key_env", DEFAULT_API_KEY_ENV),
        params=spec.get("params") or {},
        timeout=spec.get("timeout", 60.0),
        max_attempts=spec.get("max_attempts", 3),
        max_requests_per_second=spec.get("max_requests_per_second"),
        **overrides,
    )


def scripted_concession(spec: Mapping[str, Any], profile: PersonalityProfile, rng: random.Random) -> float:
    """Concession exponent for one scripted agent.

    ``concession * exp(trait_slope * ordinal(trait))``, optionally scaled by
    ``exp(u)`` with ``u`` uniform in ``[-concession_spread, concession_spread]``.
    """
    c = float(spec.get("concession", 1.0))
    trait = spec.get("trait")
    if trait is not None:
        c *= math.exp(float(spec.get("trait_slope", 0.0)) * profile.ordinal(Dimension(trait)))
    spread = float(spec.get("concession_spread", 0.0))
    if spread:
        c *= math.exp(rng.uniform(-spread, spread))
    return c


@dataclass
class _Backends:
    """Factories built once per run so live clients are shared across dialogues."""

    config: RunConfig
    transport: Any = None
    clients: dict[str, ChatClient] = field(default_factory=dict)

    def client(self, name: str) -> ChatClient:
        if name not in self.clients:
            extra = {"transport": self.transport} if self.transport is not None else {}
            self.clients[name] = _client(getattr(self.config, name), **extra)
        return self.clients[name]

    def agent_backend(self, name: str, role: Role, scenario: NegotiationScenario,
                      profile: PersonalityProfile, rng: random.Random):
        spec = getattr(self.config, name)
        if spec["type"] == "live":
            return ChatBackend(self.client(name))
        return ScriptedBackend.for_scenario(
            role,
            scenario,
            concession=scripted_concession(spec, profile, rng),
            horizon=int(spec.get("horizon") or self.config.t_max),
            patience=spec.get("patience"),
            price_digits=spec.get("price_digits"),
        )

    def detector(self):
        if self.config.detector["type"] == "live":
            return LLMDetector(self.client("detector"))
        return ScriptedDetector()

    def close(self):
        for c in self.clients.values():
            c.close()


# -- simulation -------------------------------------------------------------------


def dialogue_id(index: int) -> str:
    return f"d{index:06d}"


@dataclass(frozen=True)
class RunManifest:
    fingerprint: Mapping[str, Any]
    config: Mapping[str, Any]
    started_at: str
    finished_at: str
    requested: int
    completed: int
    failed: Mapping[str, int]
    corpus: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": __version__,
            "fingerprint": dict(self.fingerprint),
            "config": dict(self.config),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "counts": {"requested": self.requested, "completed": self.completed, "failed": dict(self.failed)},
            "corpus": self.corpus,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def read_corpus(path: str | Path, *, repair: bool = False) -> list[DialogueRecord]:
    """Load a JSONL corpus.

    A corrupt final line (an interrupted append) is dropped, and with
    ``repair`` also cut from the file. Corruption anywhere else is an error.
    """
    path = Path(path)
    if not path.exists():
        return []
    data = path.read_bytes()
    records: list[DialogueRecord] = []
    offset = 0
    lines = data.split(b"\n")
    for k, raw in enumerate(lines):
        last = k == len(lines) - 1 or all(not x.strip() for x in lines[k + 1:])
        if raw.strip():
            try:
                records.append(DialogueRecord.from_json(raw.decode("utf-8")))
            except (ValueError, KeyError, TypeError) as exc:
                if not last:
                    raise CorruptCorpus(f"{path}: corrupt record on line {k + 1}: {exc}") from None
                log.warning("%s: dropping truncated final line", path)
                if repair:
                    with open(path, "r+b") as fh:
                        fh.truncate(offset)
                break
        offset += len(raw) + 1
    return records


def simulate(
    config: RunConfig,
    *,
    force: bool = False,
    transport: Any = None,
    on_record: Callable[[int, DialogueRecord], None] | None = None,
) -> RunManifest:
    """Run the configured batch, resuming any partial corpus in ``output_dir``.

    Dialogues run on a thread pool; records are written by this thread in id
    order, so reruns with scripted backends produce identical files.
    ``on_record`` is invoked after each write (used to inject interrupts).
    """
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    try:
        scenarios = load_scenarios(
            config.scenarios, zone_fraction=to_decimal(config.zone_fraction), placement=config.zone_placement
        )
    except OSError as exc:
        raise ConfigError(f"cannot read scenarios {config.scenarios}: {exc}") from None
    if config.n_dialogues and not scenarios:
        raise ConfigError(f"{config.scenarios} contains no scenarios")
    table = load_adjective_table(config.adjectives)
    fp = fingerprint(config)
    logical = config.clock == "logical" or (config.clock == "auto" and config.all_scripted)

    corpus = out / CORPUS_NAME
    existing = read_corpus(corpus, repair=True)
    foreign = {(r.fingerprint or {}).get("hash") for r in existing} - {fp["hash"]}
    if foreign and not force:
        raise ConfigError(f"{corpus} was produced by a different configuration; use a new output directory")
    done = {r.id for r in existing}
    todo = [i for i in range(config.n_dialogues) if dialogue_id(i) not in done]
    started = _now()
    log.info("%d of %d dialogues to run", len(todo), config.n_dialogues)

    backends = _Backends(config, transport)
    detector = backends.detector()

    def run_one(i: int) -> DialogueRecord:
        rng = random.Random(f"{config.seed}:{i}")
        scenario = scenarios[i % len(scenarios)]
        s_prof, b_prof = sample_profile(rng), sample_profile(rng)
        s_persona = make_persona(s_prof, table, config.n_adjectives, rng)
        b_persona = make_persona(b_prof, table, config.n_adjectives, rng)
        seller = AgentConfig(Role.SELLER, scenario, s_persona,
                             backends.agent_backend("seller_backend", Role.SELLER, scenario, s_prof, rng), s_prof,
                             max_reply_chars=config.seller_backend.get("max_reply_chars", DEFAULT_MAX_REPLY_CHARS))
        buyer = AgentConfig(Role.BUYER, scenario, b_persona,
                            backends.agent_backend("buyer_backend", Role.BUYER, scenario, b_prof, rng), b_prof,
                            max_reply_chars=config.buyer_backend.get("max_reply_chars", DEFAULT_MAX_REPLY_CHARS))
        t0 = (LOGICAL_EPOCH + timedelta(seconds=i)).isoformat() if logical else _now()
        rec = run_negotiation(seller, buyer, detector, config.t_max, dialogue_id=dialogue_id(i))
        t1 = (LOGICAL_EPOCH + timedelta(seconds=i, milliseconds=rec.outcome.rounds)).isoformat() if logical else _now()
        return dataclasses.replace(rec, started_at=t0, finished_at=t1, fingerprint=fp)

    try:
        fh = open(corpus, "a", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write {corpus}: {exc}") from None
    try:
        with fh, ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [(i, pool.submit(run_one, i)) for i in todo]
            try:
                for i, fut in futures:
                    rec = fut.result()
                    fh.write(rec.to_json() + "\n")
                    fh.flush()
                    if on_record is not None:
                        on_record(i, rec)
            except BaseException:
                for _, fut in futures:
                    fut.cancel()
                raise
    finally:
        backends.close()

    records = [r for r in read_corpus(corpus) if r.id in {dialogue_id(i) for i in range(config.n_dialogues)}]
    failed = Counter(r.outcome.reason.value for r in records if not r.outcome.success)
    manifest = RunManifest(
        fingerprint=fp,
        config=config.to_dict(),
        started_at=started,
        finished_at=_now(),
        requested=config.n_dialogues,
        completed=sum(1 for r in records if r.outcome.success),
        failed=dict(sorted(failed.items())),
        corpus=CORPUS_NAME,
    )
    (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# -- output helpers ---------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], *, comment: str | None = None) -> None:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _md_table(rows: Sequence[Sequence[str]]) -> str:
    head, *body = rows
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines)


def _num(x: float | None, digits: int = 3) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def load_checked_corpus(path: str | Path, *, force: bool = False) -> tuple[list[DialogueRecord], str]:
    """Read a corpus and check that every record shares one fingerprint.

    Returns the records and the fingerprint label written into outputs
    (``mixed:<h1>+<h2>`` when forced over several).
    """
    if not Path(path).is_file():
        raise FileNotFoundError(f"corpus {path} not found")
    records = read_corpus(path)
    if not records:
        raise EmptyCorpus(f"{path} holds no dialogues")
    hashes = sorted({(r.fingerprint or {}).get("hash") or "none" for r in records})
    if len(hashes) > 1 and not force:
        raise ConfigError(f"{path} mixes {len(hashes)} configurations ({', '.join(hashes)}); pass --force to analyse anyway")
    return records, hashes[0] if len(hashes) == 1 else "mixed:" + "+".join(hashes)


# -- analysis ---------------------------------------------------------------------

DEFAULT_MIN_STRATEGY_COUNT = 20


@dataclass(frozen=True)
class StrategyRegression:
    name: str
    role: Role
    outcome: str
    n: int
    coefficients: Mapping[str, float]
    intercept: float | None
    r_squared: float | None
    dropped: tuple[str, ...]
    skipped: str | None = None


@dataclass(frozen=True)
class ChiSquareRow:
    role: Role
    dimension: Dimension
    statistic: float | None
    p_value: float | None
    dof: int | None
    categories: tuple[str, ...]
    counts: tuple[tuple[float, float], ...]
    residuals: tuple[tuple[float, float], ...]
    skipped: str | None = None


@dataclass(frozen=True)
class Analysis:
    fingerprint: str
    rows: tuple[MetricsRow, ...]
    summary: Any
    grid: Any | None
    regressions: tuple[StrategyRegression, ...]
    chi_square: tuple[ChiSquareRow, ...]
    categories: Mapping[Role, tuple[str, ...]]


def _turn_categories(record: DialogueRecord, role: Role, rules) -> list[str]:
    return [canonicalize_strategy(s, rules) for s in record.strategies(role)]


def strategy_regressions(records, rows, rules, retained: Mapping[Role, Sequence[str]]) -> list[StrategyRegression]:
    """OLS of deal utilities on per-dialogue strategy indicators.

    For each role: joint utility and the role's intrinsic utility regressed on
    "used this strategy at least once" indicators, over successful dialogues.
    """
    out = []
    pairs = [(rec, row) for rec, row in zip(records, rows) if row.success]
    for role in (Role.BUYER, Role.SELLER):
        names = list(retained[role])
        design = [[1.0 if c in set(_turn_categories(rec, role, rules)) else 0.0 for c in names] for rec, _ in pairs]
        targets = {
            "joint_utility": [row.joint_utility for _, row in pairs],
            "intrinsic_utility": [row.utility(role) for _, row in pairs],
        }
        for outcome, y in targets.items():
            name = f"{outcome}~{role.value}_strategies"
            if not names:
                out.append(StrategyRegression(name, role, outcome, len(y), {}, None, None, (), "no strategy passes the frequency filter"))
                continue
            if len(y) <= len(names) + 1:
                out.append(StrategyRegression(name, role, outcome, len(y), {}, None, None, (), "too few successful dialogues"))
                continue
            res = ols_regress(design, y, names)
            r2 = None if math.isnan(res.r_squared) else res.r_squared
            out.append(StrategyRegression(name, role, outcome, res.n, dict(res.coefficients), res.intercept,
                                          r2, tuple(res.dropped)))
    return out


def strategy_chi_square(records, rules, retained: Mapping[Role, Sequence[str]]) -> list[ChiSquareRow]:
    """Independence test between trait polarity and strategy use, per role and dimension.

    Rows are the retained strategy categories, columns the negative and
    positive polarity of the dimension; cells count strategy-tagged turns.
    """
    out = []
    for role in (Role.BUYER, Role.SELLER):
        cats = list(retained[role])
        for dim in DIMENSIONS:
            counts = {c: [0.0, 0.0] for c in cats}
            for rec in records:
                prof = rec.profile(role)
                if prof is None:
                    continue
                col = 1 if prof[dim].ordinal > 0 else 0
                for c in _turn_categories(rec, role, rules):
                    if c in counts:
                        counts[c][col] += 1
            labels = (f"{dim.value}-", f"{dim.value}+")
            if len(cats) < 2:
                out.append(ChiSquareRow(role, dim, None, None, None, tuple(cats), (), (), "fewer than two strategies"))
                continue
            table = ContingencyTable.from_counts([counts[c] for c in cats], cats, labels)
            try:
                res = chi_square(table)
            except ZeroMarginal as exc:
                out.append(ChiSquareRow(role, dim, None, None, None, tuple(cats),
                                        tuple(tuple(counts[c]) for c in cats), (), str(exc)))
                continue
            out.append(ChiSquareRow(role, dim, res.statistic, res.p_value, res.dof, tuple(cats),
                                    tuple(tuple(counts[c]) for c in cats),
                                    tuple(tuple(r) for r in res.residuals)))
    return out


def run_analysis(
    records: Sequence[DialogueRecord],
    fingerprint_label: str = "",
    *,
    strategy_rules=None,
    min_strategy_count: int = DEFAULT_MIN_STRATEGY_COUNT,
) -> Analysis:
    rules = strategy_rules if strategy_rules is not None else load_strategy_map()
    rows = [compute_metrics(r) for r in records]
    summary = summarize(records, rows)
    grid = trait_metric_table(records, rows) if len(records) >= MIN_GRID_DIALOGUES else None
    retained = {}
    for role in (Role.BUYER, Role.SELLER):
        cats = [c for rec in records for c in _turn_categories(rec, role, rules) if c != "other"]
        retained[role] = tuple(sorted(frequency_filter(cats, min_strategy_count)))
    return Analysis(
        fingerprint_label,
        tuple(rows),
        summary,
        grid,
        tuple(strategy_regressions(records, rows, rules, retained)),
        tuple(strategy_chi_square(records, rules, retained)),
        retained,
    )


def render_report(a: Analysis) -> str:
    s = a.summary
    parts = [
        "# Negotiation corpus analysis",
        "",
        f"Fingerprint: `{a.fingerprint}`",
        "",
        "## Summary",
        "",
        f"- dialogues: {s.n}",
        f"- successful: {s.n_success}",
        f"- success rate (NSR): {s.nsr:.3f}",
        f"- average rounds of successful dialogues (ANR): {_num(s.anr, 2)}",
        "",
        "## Per category",
        "",
        _md_table([["category", "dialogues", "successes", "success rate", "avg rounds", "mean words"]] + [
            [c.category, str(c.dialogues), str(c.successes), f"{c.success_rate:.3f}", _num(c.avg_rounds, 2), f"{c.mean_words:.1f}"]
            for c in s.categories
        ]),
        "",
        "## Successful dialogues",
        "",
    ]
    succ = [r for r in a.rows if r.success]
    if succ:
        parts.append(_md_table([["dialogue", "deal price", "u_s", "u_b", "u_sb", "CR_s", "CR_b", "rounds"]] + [
            [r.dialogue_id, f"{r.deal_price:g}", _num(r.seller_utility), _num(r.buyer_utility), _num(r.joint_utility),
             _num(r.concession(Role.SELLER)), _num(r.concession(Role.BUYER)), str(r.rounds)]
            for r in succ
        ]))
    else:
        parts.append("No successful dialogues.")
    parts += ["", "## Trait x metric Spearman correlations", ""]
    if a.grid is None:
        parts.append(f"Skipped: fewer than {MIN_GRID_DIALOGUES} dialogues.")
    else:
        parts.append(_md_table(a.grid.rows()))
        parts += ["", "`**` p < 0.05, `*` p < 0.1; n/a marks constant or too-short series."]
    parts += ["", "## Strategy regressions", ""]
    for reg in a.regressions:
        if reg.skipped:
            parts.append(f"- `{reg.name}`: skipped ({reg.skipped})")
            continue
        terms = [f"intercept={reg.intercept:+.4f}"] + [f"{k}={v:+.4f}" for k, v in sorted(reg.coefficients.items())]
        dropped = f"; dropped {', '.join(reg.dropped)}" if reg.dropped else ""
        parts.append(f"- `{reg.name}` (n={reg.n}, R^2={_num(reg.r_squared)}): {', '.join(terms)}{dropped}")
    parts += ["", "## Trait polarity x strategy chi-square", ""]
    rows = [["role", "dimension", "chi2", "dof", "p"]]
    for c in a.chi_square:
        if c.skipped:
            rows.append([c.role.value, c.dimension.value, "n/a", "", c.skipped])
        else:
            rows.append([c.role.value, c.dimension.value, f"{c.statistic:.3f}", str(c.dof), f"{c.p_value:.4f}"])
    parts.append(_md_table(rows))
    return "\n".join(parts) + "\n"


def write_analysis(a: Analysis, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    note = f"fingerprint {a.fingerprint}"
    written = []

    p = out / "metrics.csv"
    _write_csv(p, MetricsRow.FIELDS, [r.as_row() for r in a.rows], comment=note)
    written.append(p)

    p = out / "summary.json"
    _write_json(p, {"fingerprint": a.fingerprint, **a.summary.to_dict()})
    written.append(p)

    if a.grid is not None:
        p = out / "trait_metrics.csv"
        head, *body = a.grid.rows()
        _write_csv(p, head, body, comment=note)
        written.append(p)
        p = out / "trait_metrics.json"
        _write_json(p, {
            "fingerprint": a.fingerprint,
            "cells": [
                {"metric": m, "dimension": d.value, "role": r.value, "rho": c.rho, "p_value": c.p_value, "n": c.n}
                for (m, d, r), c in sorted(a.grid.cells.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value))
            ],
        })
        written.append(p)

    p = out / "regressions.json"
    _write_json(p, {
        "fingerprint": a.fingerprint,
        "strategies": {r.value: list(c) for r, c in a.categories.items()},
        "models": [
            {"name": r.name, "role": r.role.value, "outcome": r.outcome, "n": r.n, "intercept": r.intercept,
             "coefficients": dict(r.coefficients), "r_squared": r.r_squared, "dropped": list(r.dropped), "skipped": r.skipped}
            for r in a.regressions
        ],
    })
    written.append(p)

    p = out / "chi_square.csv"
    rows = []
    for c in a.chi_square:
        if c.skipped or not c.residuals:
            rows.append([c.role.value, c.dimension.value, "", "", "", "", "", c.statistic, c.dof, c.p_value])
            continue
        for cat, cnt, res in zip(c.categories, c.counts, c.residuals):
            rows.append([c.role.value, c.dimension.value, cat, cnt[0], cnt[1], res[0], res[1], c.statistic, c.dof, c.p_value])
    _write_csv(p, ["role", "dimension", "strategy", "count_neg", "count_pos", "residual_neg", "residual_pos",
                   "chi2", "dof", "p_value"], rows, comment=note)
    written.append(p)

    p = out / "report.md"
    p.write_text(render_report(a), encoding="utf-8")
    written.append(p)
    return written


def analyze(corpus: str | Path, out_dir: str | Path, *, force: bool = False, strategy_map: str | Path | None = None,
            min_strategy_count: int = DEFAULT_MIN_STRATEGY_COUNT) -> Analysis:
    records, label = load_checked_corpus(corpus, force=force)
    rules = load_strategy_map(strategy_map) if strategy_map else None
    a = run_analysis(records, label, strategy_rules=rules, min_strategy_count=min_strategy_count)
    write_analysis(a, out_dir)
    return a


# -- price / length report --------------------------------------------------------

LENGTH_PAIRS = (
    ("listing_price", "rounds"),
    ("listing_price", "words"),
    ("log10_price", "rounds"),
    ("log10_price", "words"),
)


def _safe_pearson(x, y) -> float | None:
    try:
        return pearson(x, y)
    except (ConstantSeries, LengthMismatch, ValueError):
        return None


def length_correlations(rows: Sequence[MetricsRow]) -> dict[tuple[str, str], float | None]:
    """Pearson coefficients of price (raw and log10) against dialogue length."""
    cols = {
        "listing_price": [r.listing_price for r in rows],
        "log10_price": [math.log10(r.listing_price) for r in rows],
        "rounds": [float(r.rounds) for r in rows],
        "words": [float(r.words) for r in rows],
    }
    return {(a, b): _safe_pearson(cols[a], cols[b]) for a, b in LENGTH_PAIRS}


def report(corpus: str | Path, out_dir: str | Path, *, force: bool = False) -> dict[str, Any]:
    """Per-category aggregates and price-versus-length series.

    Length is measured both in utterances and in whitespace-delimited words.
    """
    records, label = load_checked_corpus(corpus, force=force)
    rows = [compute_metrics(r) for r in records]
    summary = summarize(records, rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    note = f"fingerprint {label}"

    _write_csv(
        out / "price_series.csv",
        ["dialogue_id", "category", "listing_price", "log10_price", "rounds", "words", "success"],
        [[r.dialogue_id, r.category or "uncategorized", r.listing_price, math.log10(r.listing_price), r.rounds, r.words, r.success]
         for r in rows],
        comment=note,
    )
    _write_csv(
        out / "category_aggregates.csv",
        ["category", "dialogues", "successes", "success_rate", "avg_rounds", "mean_listing_price", "mean_rounds_all", "mean_words"],
        [[c.category, c.dialogues, c.successes, c.success_rate, c.avg_rounds, c.mean_listing_price, c.mean_rounds_all, c.mean_words]
         for c in summary.categories],
        comment=note,
    )
    overall = length_correlations(rows)
    per_cat = {}
    by_cat = defaultdict(list)
    for r in rows:
        by_cat[r.category or "uncategorized"].append(r)
    for name in sorted(by_cat):
        per_cat[name] = length_correlations(by_cat[name])

    _write_csv(
        out / "length_correlations.csv",
        ["scope", "x", "y", "pearson"],
        [["all", a, b, overall[(a, b)]] for a, b in LENGTH_PAIRS]
        + [[name, a, b, corr[(a, b)]] for name, corr in per_cat.items() for a, b in LENGTH_PAIRS],
        comment=note,
    )
    md = [
        "# Price and dialogue length",
        "",
        f"Fingerprint: `{label}`",
        "",
        "Words are whitespace-delimited tokens over all utterances; rounds count utterances.",
        "",
        _md_table([["category", "dialogues", "mean listing price", "mean rounds", "mean words"]] + [
            [c.category, str(c.dialogues), f"{c.mean_listing_price:.2f}", f"{c.mean_rounds_all:.2f}", f"{c.mean_words:.1f}"]
            for c in summary.categories
        ]),
        "",
        "## Pearson correlations (all dialogues)",
        "",
        _md_table([["x", "y", "r"]] + [[a, b, _num(overall[(a, b)])] for a, b in LENGTH_PAIRS]),
    ]
    (out / "length_report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    return {"fingerprint": label, "overall": overall, "categories": per_cat, "summary": summary}


# -- IPIP validation --------------------------------------------------------------


def run_ipip(config: RunConfig, *, n_agents: int | None = None, transport: Any = None) -> IpipValidation:
    spec = config.ipip_backend
    items = load_ipip_items()
    table = load_adjective_table(config.adjectives)
    n = n_agents if n_agents is not None else config.ipip_agents
    client = None
    if spec["type"] == "live":
        client = _client(spec, **({"transport": transport} if transport is not None else {}))
        make = lambda profile: ChatResponder(client)  # noqa: E731
    else:
        make = lambda profile: ScriptedFaithfulResponder(profile, items)  # noqa: E731
    try:
        result = validate_profiles(make, n, seed=config.seed, n_adjectives=config.n_adjectives, table=table,
                                   items=items, workers=config.workers)
    finally:
        if client is not None:
            client.close()

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = f"seed {config.seed}, backend {backend_identifier(spec)}, prompts {prompts_hash()}"
    head, *body = result.rows()
    _write_csv(out / "ipip_grid.csv", head, body, comment=label)
    md = [
        "# IPIP-50 validation",
        "",
        f"Provenance: {label}",
        "",
        f"Agents scored: {result.n_agents} (failed: {len(result.failures)})",
        "",
        "Rows are measured dimensions, columns assigned dimensions; `*` marks p < 0.05.",
        "",
        _md_table(result.rows()),
    ]
    (out / "ipip_report.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    return result
