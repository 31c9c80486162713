"""Venue-specific review harmonization, citation targets and temporal splits.

Raw venue exports carry free-form field names ("rating", "recommended
decision", ...). A per-venue FieldMapping sends each of them to one attribute
of the unified review schema; numeric attributes are min-max normalized to
[0,1] using the venue's declared ScaleSpec, text attributes are concatenated
in mapping order. Citation enrichment talks to a scholarly-metadata HTTP API.
"""
from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass

import numpy as np
import requests

from .corpus import NUMERIC_REVIEW_FIELDS, Corpus, PaperRecord, ReviewRecord, YearMonth

log = logging.getLogger(__name__)

TEXT_TARGETS = ("text_review", "ethics")
TARGET_ATTRIBUTES = NUMERIC_REVIEW_FIELDS + TEXT_TARGETS


class HarmonizeError(ValueError):
    """Raised for bad mappings, unparseable values or wrong scales."""


def _canon(name: str) -> str:
    return name.strip().casefold()


@dataclass(frozen=True)
class FieldMapping:
    """Ordered (venue field name, target attribute) pairs for one venue."""

    entries: tuple

    def __post_init__(self):
        seen = set()
        for name, attr in self.entries:
            if attr not in TARGET_ATTRIBUTES:
                raise HarmonizeError(f"unknown target attribute {attr!r}")
            key = _canon(name)
            if key in seen:
                raise HarmonizeError(f"venue field {name!r} mapped twice")
            seen.add(key)

    def lookup(self) -> dict:
        return {_canon(name): attr for name, attr in self.entries}


@dataclass(frozen=True)
class ScaleSpec:
    """Declared raw numeric range of one attribute at one venue."""

    min_value: float
    max_value: float

    def __post_init__(self):
        if not self.max_value > self.min_value:
            raise HarmonizeError(
                f"scale max {self.max_value} must exceed min {self.min_value}")


@dataclass(frozen=True)
class SplitSpec:
    """Temporal split fractions, applied after sorting by publication date."""

    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        fractions = (self.train_fraction, self.validation_fraction, self.test_fraction)
        for f in fractions:
            if not 0.0 < f < 1.0:
                raise HarmonizeError(f"split fraction {f} outside (0,1)")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise HarmonizeError(f"split fractions sum to {sum(fractions)}, expected 1")


# value is "v" or "v: description"; the leading number wins
_NUMERIC_RE = re.compile(r"^\s*([+-]?\d+(?:\.\d+)?)\s*(?::.*)?$", re.DOTALL)


def parse_leading_number(value: str, field_name: str) -> float:
    m = _NUMERIC_RE.match(value)
    if not m:
        raise HarmonizeError(f"field {field_name!r}: cannot parse number from {value!r}")
    return float(m.group(1))


def normalize_score(value: float, scale: ScaleSpec, field_name: str) -> float:
    normalized = (value - scale.min_value) / (scale.max_value - scale.min_value)
    if normalized < -0.01 or normalized > 1.01:
        raise HarmonizeError(
            f"field {field_name!r}: value {value} normalizes to {normalized:.4f}, "
            f"outside [-0.01, 1.01] — ScaleSpec [{scale.min_value}, {scale.max_value}] "
            f"looks wrong for this venue")
    return min(1.0, max(0.0, normalized))


def harmonize_review(raw: dict, mapping: FieldMapping, scales: dict,
                     unmapped: list = None) -> ReviewRecord:
    """Map one raw review export to the unified schema.

    Text targets concatenate their mapped values in mapping order, separated
    by blank lines. When several venue fields land on the same numeric
    attribute (e.g. two novelty facets), their normalized values are averaged.
    Raw fields without a mapping entry are collected into ``unmapped`` (when
    given) and logged, never silently dropped. Empty raw values contribute
    nothing.
    """
    lookup = mapping.lookup()
    canon_raw = {}
    for name, value in raw.items():
        key = _canon(name)
        if key in lookup:
            canon_raw[key] = value
        else:
            if unmapped is not None:
                unmapped.append(name)
            log.warning("unmapped venue field %r", name)

    numeric_values: dict = {k: [] for k in NUMERIC_REVIEW_FIELDS}
    text_parts: dict = {k: [] for k in TEXT_TARGETS}
    for name, attr in mapping.entries:
        key = _canon(name)
        if key not in canon_raw:
            continue
        value = canon_raw[key]
        if attr in TEXT_TARGETS:
            if value.strip():
                text_parts[attr].append(value.strip())
            continue
        if not value.strip():
            continue
        if attr not in scales:
            raise HarmonizeError(f"no ScaleSpec for attribute {attr!r} (field {name!r})")
        number = parse_leading_number(value, name)
        numeric_values[attr].append(normalize_score(number, scales[attr], name))

    kwargs: dict = {"text_review": "\n\n".join(text_parts["text_review"])}
    for attr, values in numeric_values.items():
        if values:
            kwargs[attr] = float(np.mean(values))
    if text_parts["ethics"]:
        kwargs["ethics"] = "\n\n".join(text_parts["ethics"])
    return ReviewRecord(**kwargs)


def citation_target(citation_count: int, months_elapsed: int) -> float:
    """ln(1 + citations per month); zero citations give exactly 0."""
    if months_elapsed < 1:
        raise HarmonizeError(f"months_elapsed must be >= 1, got {months_elapsed}")
    if citation_count < 0:
        raise HarmonizeError(f"citation_count must be >= 0, got {citation_count}")
    return math.log1p(citation_count / months_elapsed)


def elapsed_months(publication_date: YearMonth, snapshot_date: YearMonth) -> int:
    """Whole months from publication to the citation snapshot, minimum 1."""
    return max(1, publication_date.months_until(snapshot_date))


def mean_review_score(record: PaperRecord, attribute: str):
    """Mean of one numeric attribute over a paper's reviews; None if absent."""
    if attribute not in NUMERIC_REVIEW_FIELDS:
        raise HarmonizeError(f"unknown numeric review attribute {attribute!r}")
    values = [getattr(r, attribute) for r in record.reviews
              if getattr(r, attribute) is not None]
    if not values:
        return None
    return float(np.mean(values))


def _split_sizes(n: int, fractions) -> list:
    floors = [math.floor(f * n) for f in fractions]
    remainder = n - sum(floors)
    # distribute leftover records by largest fractional part, ties in split order
    fracs = sorted(range(len(fractions)),
                   key=lambda i: (-(fractions[i] * n - floors[i]), i))
    sizes = list(floors)
    for i in fracs[:remainder]:
        sizes[i] += 1
    return sizes


def temporal_split(corpus: Corpus, spec: SplitSpec = SplitSpec()):
    """Date-ordered contiguous (train, validation, test) id lists."""
    if len(corpus) == 0:
        raise HarmonizeError("cannot split an empty corpus")
    ordered = sorted(corpus, key=lambda r: (r.publication_date, r.id))
    ids = [r.id for r in ordered]
    sizes = _split_sizes(len(ids), (spec.train_fraction, spec.validation_fraction,
                                    spec.test_fraction))
    train = ids[: sizes[0]]
    validation = ids[sizes[0] : sizes[0] + sizes[1]]
    test = ids[sizes[0] + sizes[1] :]
    return train, validation, test


# ---------------------------------------------------------------------------
# citation enrichment client

class CitationClient:
    """Batched lookups of (citations, influential citations) by corpus id.

    Speaks JSON over HTTP: POST {endpoint} with {"ids": [...]} returns a list
    aligned with the request, each entry {"citationCount": int,
    "influentialCitationCount": int} or null for ids unknown upstream.
    Requests are rate limited and retried with exponential backoff.
    """

    def __init__(self, endpoint: str, api_key: str = None, batch_size: int = 100,
                 retries: int = 3, requests_per_second: float = 1.0,
                 timeout: float = 30.0, backoff: float = 0.5):
        if batch_size < 1:
            raise HarmonizeError(f"batch_size must be >= 1, got {batch_size}")
        self.endpoint = endpoint
        self.api_key = api_key
        self.batch_size = batch_size
        self.retries = retries
        self.min_interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self.timeout = timeout
        self.backoff = backoff
        self._last_request = 0.0

    def _throttle(self) -> None:
        wait = self._last_request + self.min_interval - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        self._last_request = time.monotonic()

    def _post_batch(self, batch: list) -> list:
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["x-api-key"] = self.api_key
        last_error = None
        for attempt in range(self.retries + 1):
            self._throttle()
            try:
                resp = requests.post(self.endpoint, json={"ids": batch},
                                     headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = HarmonizeError(f"citation request failed: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        payload = resp.json()
                    except ValueError as exc:
                        raise HarmonizeError("citation API returned non-JSON body") from exc
                    if not isinstance(payload, list) or len(payload) != len(batch):
                        raise HarmonizeError(
                            f"citation API returned {type(payload).__name__} of length "
                            f"{len(payload) if isinstance(payload, list) else 'n/a'}, "
                            f"expected list of {len(batch)}")
                    return payload
                last_error = HarmonizeError(
                    f"citation API returned {resp.status_code}")
                if 400 <= resp.status_code < 500 and resp.status_code != 429:
                    raise last_error
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise last_error

    def fetch_citation_counts(self, ids: list) -> dict:
        """Map each id to (citations, influential citations); ids unknown
        upstream are absent from the result, never reported as zero."""
        result: dict = {}
        if not ids:
            return result
        for start in range(0, len(ids), self.batch_size):
            batch = list(ids[start : start + self.batch_size])
            payload = self._post_batch(batch)
            for paper_id, entry in zip(batch, payload):
                if entry is None:
                    continue
                try:
                    result[paper_id] = (int(entry["citationCount"]),
                                        int(entry["influentialCitationCount"]))
                except (KeyError, TypeError, ValueError) as exc:
                    raise HarmonizeError(
                        f"malformed citation entry for {paper_id!r}: {entry!r}") from exc
        return result


def fetch_citation_counts(ids: list, endpoint: str, api_key: str = None,
                          batch_size: int = 100, retries: int = 3,
                          requests_per_second: float = 1.0) -> dict:
    client = CitationClient(endpoint, api_key=api_key, batch_size=batch_size,
                            retries=retries, requests_per_second=requests_per_second)
    return client.fetch_citation_counts(ids)


# ---------------------------------------------------------------------------
# venue config loading

def parse_venue_config(data: dict):
    """Turn parsed YAML/JSON venue config into {venue: (FieldMapping, scales)}."""
    venues = data.get("venues")
    if not isinstance(venues, dict):
        raise HarmonizeError("venue config must have a top-level 'venues' map")
    out = {}
    for venue, cfg in venues.items():
        entries = []
        for pair in cfg.get("fields", []):
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise HarmonizeError(f"venue {venue!r}: field entry {pair!r} "
                                     "must be a [name, attribute] pair")
            entries.append((str(pair[0]), str(pair[1])))
        scales = {}
        for attr, bounds in (cfg.get("scales") or {}).items():
            if attr not in NUMERIC_REVIEW_FIELDS:
                raise HarmonizeError(f"venue {venue!r}: scale for unknown attribute {attr!r}")
            scales[attr] = ScaleSpec(float(bounds["min"]), float(bounds["max"]))
        out[venue] = (FieldMapping(tuple(entries)), scales)
    return out


def load_venue_config(path=None):
    """Load venue mappings from a YAML file, or the packaged defaults."""
    import yaml

    if path is None:
        from importlib import resources

        text = resources.files("sdqp").joinpath("configs/venues.yaml").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return parse_venue_config(yaml.safe_load(text))
