"""Rank and product-moment correlation, chi-square dependence, OLS and strategy labels.

The p-value machinery (regularized incomplete beta and gamma functions) is
implemented here directly so results do not depend on a particular SciPy
version; tests cross-check it against exhaustive enumeration and SciPy.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConstantSeries, LengthMismatch, TableFormatError, ZeroMarginal
from .personality import DIMENSIONS, Dimension
from .roles import Role

if TYPE_CHECKING:
    from .dialogue import DialogueRecord
    from .metrics import MetricsRow

_EPS = 3e-16
_FPMIN = 1e-300
_MAXIT = 500


# -- special functions ---------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def regularized_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _gamma_series(a: float, x: float) -> float:
    ap = a
    total = delta = 1.0 / a
    for _ in range(_MAXIT * 10):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"gamma series did not converge (a={a}, x={x})")


def _gamma_contfrac(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT * 10):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = b + an / c
        c = c if abs(c) > _FPMIN else _FPMIN
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ArithmeticError(f"gamma continued fraction did not converge (a={a}, x={x})")


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("need a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_contfrac(a, x)


def chi2_sf(statistic: float, dof: int) -> float:
    return regularized_gamma_q(dof / 2.0, statistic / 2.0)


def t_two_sided_p(t: float, dof: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_beta(dof / (dof + t * t), dof / 2.0, 0.5)


# -- correlation ----------------------------------------------------------------

def rankdata(values: Sequence[float]) -> list[float]:
    """1-based ranks; ties share the average of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _check_pair(x: Sequence[float], y: Sequence[float], min_n: int) -> None:
    if len(x) != len(y):
        raise LengthMismatch(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < min_n:
        raise ValueError(f"need at least {min_n} observations, got {len(x)}")


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    _check_pair(x, y, 2)
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    sxx = math.fsum(v * v for v in dx)
    syy = math.fsum(v * v for v in dy)
    if sxx == 0 or syy == 0:
        raise ConstantSeries("correlation undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class RankCorrelation:
    rho: float
    p_value: float
    n: int


def spearman_exact_p(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided permutation p-value over every ordering of ``y`` (small n only)."""
    n = len(x)
    if n > 10:
        raise ValueError("exact enumeration is limited to n <= 10")
    rx, ry = rankdata(x), rankdata(y)
    observed = abs(pearson(rx, ry))
    xc = np.asarray(rx) - np.mean(rx)
    yc = np.asarray(ry) - np.mean(ry)
    scale = math.sqrt(float(xc @ xc) * float(yc @ yc))
    hits = total = 0
    perms = itertools.permutations(yc)
    while chunk := list(itertools.islice(perms, 50_000)):
        r = np.abs(np.asarray(chunk) @ xc) / scale
        hits += int(np.count_nonzero(r >= observed - 1e-12))
        total += len(chunk)
    return hits / total


def spearman(x: Sequence[float], y: Sequence[float], *, exact: bool = False) -> RankCorrelation:
    """Spearman's rho with a two-sided p-value.

    The p-value uses the t approximation with ``n - 2`` degrees of freedom,
    or full permutation enumeration when ``exact`` is set.
    """
    _check_pair(x, y, 3)
    n = len(x)
    rho = pearson(rankdata(x), rankdata(y))
    if exact:
        p = spearman_exact_p(x, y)
    elif abs(rho) >= 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = t_two_sided_p(t, n - 2)
    return RankCorrelation(rho, p, n)


def significance_stars(p: float, levels: Sequence[tuple[float, str]] = ((0.05, "**"), (0.1, "*"))) -> str:
    for threshold, mark in levels:
        if p < threshold:
            return mark
    return ""


# -- chi-square -----------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    counts: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.rows) < 2 or len(self.cols) < 2:
            raise ValueError("contingency table must be at least 2x2")
        if len(self.counts) != len(self.rows) or any(len(r) != len(self.cols) for r in self.counts):
            raise ValueError("counts shape does not match labels")
        if any(c < 0 for r in self.counts for c in r):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_counts(cls, counts: Sequence[Sequence[float]], rows=None, cols=None) -> ContingencyTable:
        rows = tuple(rows) if rows is not None else tuple(f"r{i}" for i in range(len(counts)))
        cols = tuple(cols) if cols is not None else tuple(f"c{j}" for j in range(len(counts[0])))
        return cls(rows, cols, tuple(tuple(float(c) for c in r) for r in counts))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int
    expected: tuple[tuple[float, ...], ...]
    residuals: tuple[tuple[float, ...], ...]


def chi_square(table: ContingencyTable | Sequence[Sequence[float]]) -> ChiSquareResult:
    """Pearson's chi-square test of independence with standardized residuals ``(O - E) / sqrt(E)``."""
    if not isinstance(table, ContingencyTable):
        table = ContingencyTable.from_counts(table)
    obs = table.counts
    row_tot = [math.fsum(r) for r in obs]
    col_tot = [math.fsum(obs[i][j] for i in range(len(obs))) for j in range(len(obs[0]))]
    if any(t == 0 for t in row_tot) or any(t == 0 for t in col_tot):
        raise ZeroMarginal("a row or column total is zero")
    grand = math.fsum(row_tot)
    expected = tuple(tuple(rt * ct / grand for ct in col_tot) for rt in row_tot)
    resid = tuple(
        tuple((o - e) / math.sqrt(e) for o, e in zip(orow, erow)) for orow, erow in zip(obs, expected)
    )
    stat = math.fsum(r * r for row in resid for r in row)
    dof = (len(obs) - 1) * (len(obs[0]) - 1)
    return ChiSquareResult(stat, chi2_sf(stat, dof), dof, expected, resid)


# -- regression -----------------------------------------------------------------

@dataclass(frozen=True)
class RegressionResult:
    coefficients: Mapping[str, float]
    intercept: float
    residuals: tuple[float, ...]
    r_squared: float
    n: int
    dropped: tuple[str, ...] = ()


def ols_regress(
    design: Sequence[Sequence[float]] | np.ndarray,
    outcome: Sequence[float],
    names: Sequence[str] | None = None,
    *,
    intercept: bool = True,
) -> RegressionResult:
    """Least squares via QR of the design matrix.

    Columns that are linear combinations of earlier ones (or of the
    intercept) are dropped and listed in ``dropped``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if len(y) != n:
        raise LengthMismatch(f"{n} design rows vs {len(y)} outcomes")
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if len(names) != k:
        raise ValueError("names do not match design columns")

    basis = np.ones((n, 1)) if intercept else np.empty((n, 0))
    kept: list[int] = []
    dropped: list[str] = []
    for j in range(k):
        cand = np.column_stack([basis, X[:, j]])
        if np.linalg.matrix_rank(cand) == cand.shape[1]:
            basis = cand
            kept.append(j)
        else:
            dropped.append(names[j])
    p = basis.shape[1]
    if p == 0:
        raise ValueError("no usable design columns")
    if n <= p:
        raise ValueError(f"need more observations ({n}) than parameters ({p})")

    q, r = np.linalg.qr(basis)
    beta = np.linalg.solve(r, q.T @ y)
    fitted = basis @ beta
    resid = y - fitted
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # A constant outcome (up to rounding) leaves R^2 undefined.
    if ss_tot <= 1e-24 * max(1.0, float(y @ y)):
        r2 = math.nan
    else:
        r2 = 1.0 - float(resid @ resid) / ss_tot
    offset = 1 if intercept else 0
    coefs = {names[j]: float(beta[offset + i]) for i, j in enumerate(kept)}
    return RegressionResult(coefs, float(beta[0]) if intercept else 0.0, tuple(float(v) for v in resid), r2, n, tuple(dropped))


# -- strategies -----------------------------------------------------------------

STRATEGY_CATEGORIES = ("assertive", "aggressive", "conceding", "accommodating", "empathetic", "soft", "emphasize", "other")


def parse_strategy_map(lines: Iterable[str]) -> list[tuple[str, str]]:
    rules = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip():
            raise TableFormatError(f"line {lineno}: expected 'phrase<TAB>category'")
        phrase, cat = parts[0].strip().lower(), parts[1].strip()
        if cat not in STRATEGY_CATEGORIES:
            raise TableFormatError(f"line {lineno}: unknown category {cat!r}")
        rules.append((phrase, cat))
    return rules


def load_strategy_map(path: str | Path | None = None) -> list[tuple[str, str]]:
    if path is None:
        text = resources.files("negosim.data").joinpath("strategies.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_strategy_map(text.splitlines())


_DEFAULT_RULES: list[tuple[str, str]] | None = None


def canonicalize_strategy(free_text: str | None, rules: Sequence[tuple[str, str]] | None = None) -> str:
    """Map a free-text strategy onto a category; first matching phrase wins, else ``other``."""
    global _DEFAULT_RULES
    if rules is None:
        if _DEFAULT_RULES is None:
            _DEFAULT_RULES = load_strategy_map()
        rules = _DEFAULT_RULES
    text = (free_text or "").lower()
    if not text.strip():
        return "other"
    for phrase, cat in rules:
        if phrase in text:
            return cat
    return "other"


def frequency_filter(categories: Iterable[str], min_count: int = 20) -> set[str]:
    """Categories occurring strictly more than ``min_count`` times."""
    return {c for c, n in Counter(categories).items() if n > min_count}


# -- trait x metric grid -----------------------------------------------------------

DEFAULT_ORDINALS = {"---": -3, "--": -2, "-": -1, "+": 1, "++": 2, "+++": 3}
METRICS = ("intrinsic_utility", "joint_utility", "concession_rate", "success_rate", "negotiation_rounds")
METRIC_LABELS = {
    "intrinsic_utility": "Intrinsic Utility",
    "joint_utility": "Joint Utility",
    "concession_rate": "Concession Rate",
    "success_rate": "Success Rate",
    "negotiation_rounds": "Negotiation Rounds",
}
# Column order of the published grid.
GRID_DIMENSIONS = (Dimension.EXT, Dimension.AGR, Dimension.CON, Dimension.NEU, Dimension.OPE)
GRID_ROLES = (Role.BUYER, Role.SELLER)


def metric_value(row: MetricsRow, metric: str, role: Role) -> float | None:
    if metric == "success_rate":
        return 1.0 if row.success else 0.0
    if not row.success:
        return None
    if metric == "intrinsic_utility":
        return row.utility(role)
    if metric == "joint_utility":
        return row.joint_utility
    if metric == "concession_rate":
        return row.concession(role)
    if metric == "negotiation_rounds":
        return float(row.rounds)
    raise KeyError(metric)


@dataclass(frozen=True)
class GridCell:
    rho: float | None
    p_value: float | None
    n: int

    @property
    def stars(self) -> str:
        return "" if self.p_value is None else significance_stars(self.p_value)

    def label(self) -> str:
        return "n/a" if self.rho is None else f"{self.rho:.3f}{self.stars}"


@dataclass(frozen=True)
class TraitMetricGrid:
    cells: Mapping[tuple[str, Dimension, Role], GridCell] = field(default_factory=dict)

    def __getitem__(self, key: tuple[str, Dimension, Role]) -> GridCell:
        return self.cells[key]

    def rows(self) -> list[list[str]]:
        header = ["metric"] + [f"{d.value}_{r.value}" for d in GRID_DIMENSIONS for r in GRID_ROLES]
        out = [header]
        for m in METRICS:
            out.append([METRIC_LABELS[m]] + [self.cells[(m, d, r)].label() for d in GRID_DIMENSIONS for r in GRID_ROLES])
        return out


MIN_GRID_DIALOGUES = 10
METRIC_DECIMALS = 10
# Below this size the grid enumerates permutations instead of using the t approximation.
EXACT_MAX_N = 8


def trait_metric_table(
    records: Sequence[DialogueRecord],
    rows: Sequence[MetricsRow] | None = None,
    *,
    ordinals: Mapping[str, float] = DEFAULT_ORDINALS,
) -> TraitMetricGrid:
    """Spearman correlation of each trait level with each metric, per role.

    Trait levels are coded on an ordinal scale (default -3..-1, +1..+3).
    Cells with fewer than three usable dialogues or a constant series are
    reported as ``rho=None``.
    """
    from .metrics import compute_metrics

    if len(records) < MIN_GRID_DIALOGUES:
        raise ValueError(f"need at least {MIN_GRID_DIALOGUES} dialogues, got {len(records)}")
    rows = list(rows) if rows is not None else [compute_metrics(r) for r in records]
    cells = {}
    for metric in METRICS:
        for dim in DIMENSIONS:
            for role in GRID_ROLES:
                xs, ys = [], []
                for rec, row in zip(records, rows):
                    prof = rec.profile(role)
                    val = metric_value(row, metric, role)
                    if prof is None or val is None:
                        continue
                    xs.append(float(ordinals[prof[dim].code]))
                    # Values equal up to float noise must tie when ranked.
                    ys.append(round(val, METRIC_DECIMALS))
                try:
                    rc = spearman(xs, ys, exact=len(xs) <= EXACT_MAX_N)
                    cells[(metric, dim, role)] = GridCell(rc.rho, rc.p_value, rc.n)
                except (ConstantSeries, ValueError):
                    cells[(metric, dim, role)] = GridCell(None, None, len(xs))
    return TraitMetricGrid(cells)
