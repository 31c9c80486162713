"""Evaluation and analysis: pairwise ranking accuracy, correlations, the
leave-one-review-out human-consistency baseline, review-dimension and
citation-vs-review studies, and round-robin / Swiss tournament ranking.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import NUMERIC_REVIEW_FIELDS, Corpus, Decision
from .harmonize import citation_target, elapsed_months, mean_review_score

DEFAULT_MAX_PAIRS = 100_000


class MetricsError(ValueError):
    """Raised when a metric's preconditions are not met."""


# ---------------------------------------------------------------------------
# correlations

def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise MetricsError("inputs must be equal-length 1-D sequences")
    if xs.size < 2:
        raise MetricsError(f"need at least 2 observations, got {xs.size}")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise MetricsError("zero variance input")
    return float((dx @ dy) / np.sqrt(vx * vy))


def average_ranks(xs) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    xs = np.asarray(xs, dtype=np.float64)
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(xs.size, dtype=np.float64)
    sorted_vals = xs[order]
    i = 0
    while i < xs.size:
        j = i
        while j + 1 < xs.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    return pearson(average_ranks(xs), average_ranks(ys))


def mean_l1(predicted, targets) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predicted.shape != targets.shape:
        raise MetricsError("predicted/target length mismatch")
    if predicted.size == 0:
        raise MetricsError("empty inputs")
    return float(np.mean(np.abs(predicted - targets)))


# ---------------------------------------------------------------------------
# pairwise ranking accuracy

def _pair_outcomes(predicted, targets, seed: int, max_pairs: int):
    """Yield (i, j) index pairs with distinct targets: every pair when the
    non-tied pair count fits max_pairs, else a uniform sample of max_pairs."""
    n = len(targets)
    tied = 0
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if targets[i] == targets[j]:
                tied += 1
            else:
                pairs.append((i, j))
    if not pairs:
        raise MetricsError("no non-tied target pairs to evaluate")
    if len(pairs) <= max_pairs:
        return pairs
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(pairs), size=max_pairs)
    return [pairs[k] for k in idx]


def pairwise_accuracy_from_scores(predicted, targets, seed: int = 0,
                                  max_pairs: int = DEFAULT_MAX_PAIRS):
    """Accuracy over non-tied target pairs, with model ties scoring 0.5.

    Returns (accuracy, n_pairs). All non-tied pairs are enumerated when they
    fit within max_pairs; otherwise max_pairs pairs are sampled uniformly
    (with replacement) from them.
    """
    predicted = [float(p) for p in predicted]
    targets = [float(t) for t in targets]
    if len(predicted) != len(targets):
        raise MetricsError("predicted/target length mismatch")
    if len(targets) < 2:
        raise MetricsError("need at least 2 scored items")
    pairs = _pair_outcomes(predicted, targets, seed, max_pairs)
    total = 0.0
    for i, j in pairs:
        df = predicted[i] - predicted[j]
        if df == 0.0:
            total += 0.5
        elif (df > 0) == (targets[i] > targets[j]):
            total += 1.0
    return total / len(pairs), len(pairs)


def pairwise_accuracy(model, test_set, seed: int = 0,
                      max_pairs: int = DEFAULT_MAX_PAIRS) -> float:
    """test_set is a sequence of (item, target); model maps item -> score."""
    items = [item for item, _ in test_set]
    targets = [target for _, target in test_set]
    predicted = [float(model(item)) for item in items]
    accuracy, _ = pairwise_accuracy_from_scores(predicted, targets, seed, max_pairs)
    return accuracy


# ---------------------------------------------------------------------------
# human consistency and correlation studies

def human_consistency(corpus: Corpus, attribute: str = "score", seed: int = 0) -> float:
    """Leave-one-review-out agreement among reviewers.

    For every submission with at least three reviews carrying the attribute,
    one review is removed uniformly at random; returns the Pearson correlation
    between the removed scores and the means of the remaining ones.
    """
    if attribute not in NUMERIC_REVIEW_FIELDS:
        raise MetricsError(f"unknown numeric review attribute {attribute!r}")
    rng = np.random.default_rng(seed)
    removed = []
    remaining_means = []
    for record in corpus:
        values = [getattr(r, attribute) for r in record.reviews
                  if getattr(r, attribute) is not None]
        if len(values) < 3:
            continue
        k = int(rng.integers(len(values)))
        removed.append(values[k])
        rest = values[:k] + values[k + 1 :]
        remaining_means.append(float(np.mean(rest)))
    if len(removed) < 2:
        raise MetricsError(
            f"need >= 2 submissions with >= 3 reviews carrying {attribute!r}, "
            f"got {len(removed)}")
    return pearson(removed, remaining_means)


@dataclass(frozen=True)
class DimensionCorrelations:
    """Pairwise-complete Pearson matrix over the numeric review attributes.

    matrix[i][j] is NaN where fewer than 2 co-present observations (or zero
    variance) make the cell undefined; counts[i][j] is the number of reviews
    carrying both attributes.
    """

    attributes: tuple
    matrix: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.attributes)]
        for i, name in enumerate(self.attributes):
            cells = []
            for j in range(len(self.attributes)):
                v = self.matrix[i, j]
                cells.append("" if np.isnan(v) else f"{v:.6f}")
            lines.append(name + "," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_svg(self, cell: int = 64) -> str:
        """Self-contained heat map; blue for -1 through white to red for +1."""
        names = self.attributes
        k = len(names)
        margin = 130
        width = margin + k * cell + 10
        height = margin + k * cell + 10
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
                 f'height="{height}" font-family="monospace" font-size="11">']
        for i in range(k):
            for j in range(k):
                v = self.matrix[i, j]
                if np.isnan(v):
                    fill = "#dddddd"
                    label = ""
                else:
                    t = (float(v) + 1.0) / 2.0
                    r = int(255 * min(1.0, 2 * t))
                    b = int(255 * min(1.0, 2 * (1 - t)))
                    g = int(255 * (1 - abs(2 * t - 1)))
                    fill = f"#{r:02x}{g:02x}{b:02x}"
                    label = f"{v:.2f}"
                x = margin + j * cell
                y = margin + i * cell
                parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                             f'fill="{fill}" stroke="#888"/>')
                if label:
                    parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" '
                                 f'text-anchor="middle">{label}</text>')
        for i, name in enumerate(names):
            y = margin + i * cell + cell / 2 + 4
            parts.append(f'<text x="{margin - 6}" y="{y}" text-anchor="end">{name}</text>')
            x = margin + i * cell + cell / 2
            parts.append(f'<text x="{x}" y="{margin - 8}" text-anchor="middle" '
                         f'transform="rotate(-45 {x} {margin - 8})">{name}</text>')
        parts.append("</svg>")
        return "\n".join(parts)


def review_dimension_correlations(corpus: Corpus) -> DimensionCorrelations:
    attributes = NUMERIC_REVIEW_FIELDS
    columns = {a: [] for a in attributes}
    for record in corpus:
        for review in record.reviews:
            for a in attributes:
                columns[a].append(getattr(review, a))
    k = len(attributes)
    matrix = np.full((k, k), np.nan)
    counts = np.zeros((k, k), dtype=np.int64)
    for i, a in enumerate(attributes):
        for j, b in enumerate(attributes):
            if j < i:
                continue
            xs = []
            ys = []
            for va, vb in zip(columns[a], columns[b]):
                if va is not None and vb is not None:
                    xs.append(va)
                    ys.append(vb)
            counts[i, j] = counts[j, i] = len(xs)
            if len(xs) < 2:
                continue
            if i == j:
                if float(np.var(xs)) > 0.0:
                    matrix[i, j] = 1.0
                continue
            try:
                value = pearson(xs, ys)
            except MetricsError:
                continue
            matrix[i, j] = matrix[j, i] = value
    return DimensionCorrelations(attributes, matrix, counts)


def citation_review_correlation(corpus: Corpus, venue: str = None, year: int = None,
                                max_year: int = None, field: str = None,
                                snapshot_date=None, attribute: str = "score"):
    """(n, Pearson rho) between ln(1 + citations/month) and mean review score,
    over accepted papers with at least one citation matching the filter."""
    if snapshot_date is None:
        raise MetricsError("snapshot_date is required to compute citation targets")
    targets = []
    scores = []
    for record in corpus:
        if record.decision is not Decision.ACCEPTED:
            continue
        if record.citation_count is None or record.citation_count < 1:
            continue
        if venue is not None and record.venue != venue:
            continue
        if year is not None and record.publication_date.year != year:
            continue
        if max_year is not None and record.publication_date.year > max_year:
            continue
        if field is not None and (record.field_of_study is None
                                  or field not in record.field_of_study):
            continue
        score = mean_review_score(record, attribute)
        if score is None:
            continue
        months = elapsed_months(record.publication_date, snapshot_date)
        targets.append(citation_target(record.citation_count, months))
        scores.append(score)
    if len(targets) < 2:
        raise MetricsError(f"filter left {len(targets)} papers, need >= 2")
    return len(targets), pearson(targets, scores)


# ---------------------------------------------------------------------------
# tournament ranking

def round_robin_rank(model, items, ids=None) -> list:
    """Compare every unordered pair once; rank by wins, then total predicted
    score, then id. Equal-score comparisons award half a win to each side, so
    with a scalar model the result equals sorting by the score."""
    if len(items) == 0:
        raise MetricsError("no items to rank")
    if ids is None:
        ids = [str(item) for item in items]
    scores = [float(model(item)) for item in items]
    n = len(items)
    wins = [0.0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if scores[i] > scores[j]:
                wins[i] += 1.0
            elif scores[j] > scores[i]:
                wins[j] += 1.0
            else:
                wins[i] += 0.5
                wins[j] += 0.5
    order = sorted(range(n), key=lambda i: (-wins[i], -scores[i], ids[i]))
    return [items[i] for i in order]


@dataclass(frozen=True)
class SwissResult:
    ranking: tuple
    wins: tuple
    n_comparisons: int


def swiss_rank(model, items, rounds: int, ids=None) -> SwissResult:
    """Swiss-system ranking with a scalar comparator.

    Round 1 pairs items adjacent in id order; later rounds pair adjacent
    standings (wins, then cumulative opponent wins, then id), greedily
    skipping rematches. With an odd field the lowest-standing item without a
    previous bye sits out and records a win. Drawn comparisons score half a
    win each. Exactly rounds * floor(n/2) comparisons are made.
    """
    if rounds < 1:
        raise MetricsError(f"rounds must be >= 1, got {rounds}")
    if len(items) == 0:
        raise MetricsError("no items to rank")
    if ids is None:
        ids = [str(item) for item in items]
    n = len(items)
    scores = [float(model(item)) for item in items]
    wins = [0.0] * n
    opponents = [[] for _ in range(n)]
    had_bye = [False] * n
    n_comparisons = 0

    def standing_key(i):
        opponent_wins = sum(wins[o] for o in opponents[i])
        return (-wins[i], -opponent_wins, ids[i])

    for rnd in range(rounds):
        if rnd == 0:
            order = sorted(range(n), key=lambda i: ids[i])
        else:
            order = sorted(range(n), key=standing_key)
        if n % 2 == 1:
            # lowest-standing item without a bye sits out with a free win
            bye = next((i for i in reversed(order) if not had_bye[i]), order[-1])
            had_bye[bye] = True
            wins[bye] += 1.0
            order = [i for i in order if i != bye]
        unpaired = list(order)
        while unpaired:
            a = unpaired.pop(0)
            pick = next((k for k, b in enumerate(unpaired) if b not in opponents[a]), 0)
            b = unpaired.pop(pick)
            opponents[a].append(b)
            opponents[b].append(a)
            n_comparisons += 1
            if scores[a] > scores[b]:
                wins[a] += 1.0
            elif scores[b] > scores[a]:
                wins[b] += 1.0
            else:
                wins[a] += 0.5
                wins[b] += 0.5

    final = sorted(range(n), key=standing_key)
    return SwissResult(tuple(items[i] for i in final),
                       tuple(wins[i] for i in final), n_comparisons)


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    """One evaluation row: any subset of the four headline numbers."""

    pairwise_accuracy: float = None
    spearman: float = None
    pearson: float = None
    l1: float = None
    n_items: int = 0
    n_pairs: int = 0
    seed: int = 0

    def to_json(self) -> dict:
        out = {"n_items": self.n_items, "n_pairs": self.n_pairs, "seed": self.seed}
        for key in ("pairwise_accuracy", "spearman", "pearson", "l1"):
            value = getattr(self, key)
            if value is not None:
                out[key] = float(value)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        return cls(**{k: obj[k] for k in ("pairwise_accuracy", "spearman", "pearson",
                                          "l1", "n_items", "n_pairs", "seed")
                      if k in obj})


_COLUMNS = (("pairwise_accuracy", "Accuracy"), ("spearman", "Spearman"),
            ("pearson", "Pearson"), ("l1", "L1"), ("n_items", "N"),
            ("n_pairs", "Pairs"))


def format_report_table(rows: dict) -> str:
    """Aligned text table from {row label: MetricReport}."""
    header = ["Model"] + [label for _, label in _COLUMNS]
    body = []
    for name, report in rows.items():
        cells = [name]
        for attr, _ in _COLUMNS:
            value = getattr(report, attr)
            if value is None:
                cells.append("-")
            elif attr in ("n_items", "n_pairs"):
                cells.append(str(value))
            else:
                cells.append(f"{value:.3f}")
        body.append(cells)
    widths = [max(len(header[c]), *(len(r[c]) for r in body)) if body else len(header[c])
              for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for cells in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines) + "\n"


def reports_to_json(rows: dict) -> str:
    return json.dumps({name: report.to_json() for name, report in rows.items()},
                      sort_keys=True, indent=2) + "\n"
