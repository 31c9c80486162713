"""Unified paper/review/reference data model and its JSONL persistence.

A corpus is a list of paper records, one JSON object per line. Serialization
is canonical: sorted keys, compact separators, absent optional fields omitted,
trailing newline. load(save(corpus)) is the identity.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional


class SectionType(str, Enum):
    INTRODUCTION = "introduction"
    BACKGROUND = "background"
    METHODOLOGY = "methodology"
    EXPERIMENTS_AND_RESULTS = "experiments_and_results"
    CONCLUSION = "conclusion"


class Decision(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    UNKNOWN = "unknown"


NUMERIC_REVIEW_FIELDS = (
    "score",
    "confidence",
    "novelty",
    "correctness",
    "clarity",
    "impact",
    "reproducibility",
)

_DATE_RE = re.compile(r"^(\d{4})-(\d{2})$")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid records."""


@dataclass(frozen=True, order=True)
class YearMonth:
    year: int
    month: int

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    @classmethod
    def parse(cls, text: str) -> "YearMonth":
        m = _DATE_RE.match(text)
        if not m:
            raise CorpusError(f"bad date {text!r}, expected YYYY-MM")
        return cls(int(m.group(1)), int(m.group(2)))

    def is_valid(self) -> bool:
        return 1 <= self.month <= 12 and self.year >= 1

    def months_until(self, other: "YearMonth") -> int:
        """Whole months from this date to `other` (may be negative)."""
        return (other.year - self.year) * 12 + (other.month - self.month)


@dataclass
class Hypothesis:
    problem: str
    methodology: str

    def to_json(self) -> dict:
        return {"problem": self.problem, "methodology": self.methodology}

    @classmethod
    def from_json(cls, obj: dict) -> "Hypothesis":
        return cls(problem=str(obj.get("problem", "")), methodology=str(obj.get("methodology", "")))


@dataclass
class ReviewRecord:
    text_review: str = ""
    score: Optional[float] = None
    confidence: Optional[float] = None
    novelty: Optional[float] = None
    correctness: Optional[float] = None
    clarity: Optional[float] = None
    impact: Optional[float] = None
    reproducibility: Optional[float] = None
    ethics: Optional[str] = None

    def numeric_fields(self) -> dict:
        return {k: getattr(self, k) for k in NUMERIC_REVIEW_FIELDS if getattr(self, k) is not None}

    def to_json(self) -> dict:
        out: dict = {"text_review": self.text_review}
        for k in NUMERIC_REVIEW_FIELDS:
            v = getattr(self, k)
            if v is not None:
                out[k] = float(v)
        if self.ethics is not None:
            out["ethics"] = self.ethics
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ReviewRecord":
        kwargs = {"text_review": str(obj.get("text_review", ""))}
        for k in NUMERIC_REVIEW_FIELDS:
            if k in obj:
                kwargs[k] = float(obj[k])
        if "ethics" in obj:
            kwargs["ethics"] = str(obj["ethics"])
        return cls(**kwargs)


@dataclass
class ReferenceRecord:
    title: str
    abstract: Optional[str] = None
    corpus_id: Optional[str] = None
    arxiv_id: Optional[str] = None
    intent: Optional[str] = None
    is_influential: bool = False

    def to_json(self) -> dict:
        out: dict = {"title": self.title, "is_influential": bool(self.is_influential)}
        for k in ("abstract", "corpus_id", "arxiv_id", "intent"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ReferenceRecord":
        kwargs = {"title": str(obj.get("title", "")), "is_influential": bool(obj.get("is_influential", False))}
        for k in ("abstract", "corpus_id", "arxiv_id", "intent"):
            if k in obj:
                kwargs[k] = str(obj[k])
        return cls(**kwargs)


@dataclass
class PaperRecord:
    id: str
    title: str
    abstract: str
    publication_date: YearMonth
    venue: str = ""
    sections: dict = field(default_factory=dict)  # SectionType -> text
    hypothesis: Optional[Hypothesis] = None
    reviews: list = field(default_factory=list)
    references: list = field(default_factory=list)
    decision: Optional[Decision] = None
    citation_count: Optional[int] = None
    influential_citation_count: Optional[int] = None
    field_of_study: Optional[list] = None

    def to_json(self) -> dict:
        out: dict = {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "publication_date": str(self.publication_date),
            "venue": self.venue,
            "sections": {st.value: txt for st, txt in sorted(self.sections.items(), key=lambda kv: kv[0].value)},
            "reviews": [r.to_json() for r in self.reviews],
            "references": [r.to_json() for r in self.references],
        }
        if self.hypothesis is not None:
            out["hypothesis"] = self.hypothesis.to_json()
        if self.decision is not None:
            out["decision"] = self.decision.value
        if self.citation_count is not None:
            out["citation_count"] = int(self.citation_count)
        if self.influential_citation_count is not None:
            out["influential_citation_count"] = int(self.influential_citation_count)
        if self.field_of_study is not None:
            out["field_of_study"] = list(self.field_of_study)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PaperRecord":
        if not isinstance(obj, dict):
            raise CorpusError("record is not a JSON object")
        for key in ("id", "title", "abstract", "publication_date"):
            if key not in obj:
                raise CorpusError(f"missing required key {key!r}")
        sections = {}
        for name, text in obj.get("sections", {}).items():
            try:
                sections[SectionType(name)] = str(text)
            except ValueError:
                raise CorpusError(f"unknown section type {name!r}") from None
        decision = None
        if "decision" in obj:
            try:
                decision = Decision(obj["decision"])
            except ValueError:
                raise CorpusError(f"unknown decision {obj['decision']!r}") from None
        return cls(
            id=str(obj["id"]),
            title=str(obj["title"]),
            abstract=str(obj["abstract"]),
            publication_date=YearMonth.parse(str(obj["publication_date"])),
            venue=str(obj.get("venue", "")),
            sections=sections,
            hypothesis=Hypothesis.from_json(obj["hypothesis"]) if "hypothesis" in obj else None,
            reviews=[ReviewRecord.from_json(r) for r in obj.get("reviews", [])],
            references=[ReferenceRecord.from_json(r) for r in obj.get("references", [])],
            decision=decision,
            citation_count=int(obj["citation_count"]) if "citation_count" in obj else None,
            influential_citation_count=(
                int(obj["influential_citation_count"]) if "influential_citation_count" in obj else None
            ),
            field_of_study=[str(x) for x in obj["field_of_study"]] if "field_of_study" in obj else None,
        )


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


def validate_record(record: PaperRecord) -> list:
    """Check every per-record invariant; returns [] when the record is valid.

    Id uniqueness is a corpus-level property and is checked by load/save.
    """
    out: list = []
    if not record.id:
        out.append(Violation("id", "must be nonempty"))
    if not record.title:
        out.append(Violation("title", "must be nonempty"))
    if not record.publication_date.is_valid():
        out.append(Violation("publication_date", f"invalid year+month {record.publication_date}"))
    if record.citation_count is not None:
        if record.citation_count < 0:
            out.append(Violation("citation_count", "must be nonnegative"))
        if record.decision not in (Decision.ACCEPTED, Decision.UNKNOWN):
            out.append(Violation("citation_count", "requires decision accepted or unknown"))
    if record.influential_citation_count is not None and record.influential_citation_count < 0:
        out.append(Violation("influential_citation_count", "must be nonnegative"))
    if record.hypothesis is not None:
        if not record.hypothesis.problem:
            out.append(Violation("hypothesis.problem", "must be nonempty"))
        if not record.hypothesis.methodology:
            out.append(Violation("hypothesis.methodology", "must be nonempty"))
    for i, review in enumerate(record.reviews):
        numeric = review.numeric_fields()
        for name in NUMERIC_REVIEW_FIELDS:
            v = getattr(review, name)
            if v is not None and not (0.0 <= v <= 1.0):
                out.append(Violation(f"reviews[{i}].{name}", f"value {v} outside [0, 1]"))
        if not review.text_review and not numeric:
            out.append(Violation(f"reviews[{i}].text_review", "empty review with no numeric field"))
    for i, ref in enumerate(record.references):
        if not ref.title:
            out.append(Violation(f"references[{i}].title", "must be nonempty"))
    return out


class Corpus:
    """Immutable-after-load list of paper records with an id index."""

    def __init__(self, papers: list):
        self.papers = list(papers)
        self.by_id = {}
        for p in self.papers:
            if p.id in self.by_id:
                raise CorpusError(f"duplicate id {p.id!r}")
            self.by_id[p.id] = p

    def __len__(self) -> int:
        return len(self.papers)

    def __iter__(self):
        return iter(self.papers)

    def __getitem__(self, paper_id: str) -> PaperRecord:
        return self.by_id[paper_id]


def record_to_line(record: PaperRecord) -> str:
    return json.dumps(record.to_json(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def load_corpus(path) -> Corpus:
    """Load a JSONL corpus, validating every record. Duplicate ids are rejected."""
    path = Path(path)
    papers = []
    seen = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            record = _parse_record(obj, path, lineno)
            violations = validate_record(record)
            if violations:
                details = "; ".join(str(v) for v in violations)
                raise CorpusError(f"{path}:{lineno}: invalid record {record.id!r}: {details}")
            if record.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {record.id!r}")
            seen.add(record.id)
            papers.append(record)
    return Corpus(papers)


def _parse_record(obj: dict, path, lineno: int) -> PaperRecord:
    try:
        return PaperRecord.from_json(obj)
    except CorpusError as exc:
        raise CorpusError(f"{path}:{lineno}: {exc}") from None


def save_corpus(corpus: Corpus, path) -> None:
    """Write canonical JSONL: sorted keys, one record per line, trailing newline."""
    path = Path(path)
    for record in corpus:
        violations = validate_record(record)
        if violations:
            details = "; ".join(str(v) for v in violations)
            raise CorpusError(f"cannot save invalid record {record.id!r}: {details}")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in corpus:
            fh.write(record_to_line(record))
            fh.write("\n")
    tmp.replace(path)
