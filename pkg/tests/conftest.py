"""Shared fixtures: record generators, tiny corpora and a stub provider."""
import random

import numpy as np
import pytest

from sdqp.corpus import (Corpus, Decision, Hypothesis, PaperRecord,
                         ReferenceRecord, ReviewRecord, YearMonth)
from sdqp.embed import DeterministicStubProvider, deterministic_test_embedder


def make_record(rng: random.Random, index: int) -> PaperRecord:
    """One random record satisfying every per-record invariant."""
    n_reviews = rng.randint(0, 4)
    reviews = []
    for _ in range(n_reviews):
        fields = {}
        for name in ("score", "confidence", "novelty", "correctness",
                     "clarity", "impact", "reproducibility"):
            if rng.random() < 0.6:
                fields[name] = round(rng.random(), 6)
        reviews.append(ReviewRecord(
            text_review=f"review text {rng.randint(0, 999)}",
            ethics="concern noted" if rng.random() < 0.1 else None,
            **fields))
    decision = rng.choice(list(Decision) + [None])
    citations = None
    if decision in (Decision.ACCEPTED, Decision.UNKNOWN) and rng.random() < 0.7:
        citations = rng.randint(0, 500)
    hypothesis = None
    if rng.random() < 0.3:
        hypothesis = Hypothesis(problem=f"problem {index}",
                                methodology=f"method {index}")
    references = []
    if rng.random() < 0.4:
        references = [ReferenceRecord(title=f"ref {rng.randint(0, 99)}",
                                      abstract="about something",
                                      is_influential=rng.random() < 0.2)
                      for _ in range(rng.randint(1, 3))]
    return PaperRecord(
        id=f"paper-{index:05d}",
        title=f"Title {index}",
        abstract=f"Abstract body {index}. More text here.",
        publication_date=YearMonth(rng.randint(1990, 2024), rng.randint(1, 12)),
        venue=rng.choice(["venue-a", "venue-b", ""]),
        reviews=reviews,
        references=references,
        decision=decision,
        citation_count=citations,
        influential_citation_count=rng.randint(0, 50) if citations else None,
        hypothesis=hypothesis,
        field_of_study=["ml"] if rng.random() < 0.5 else None,
    )


def make_corpus(n: int, seed: int = 0) -> Corpus:
    rng = random.Random(seed)
    return Corpus([make_record(rng, i) for i in range(n)])


@pytest.fixture
def stub_provider():
    return deterministic_test_embedder(seed=0)


@pytest.fixture
def small_corpus():
    return make_corpus(20, seed=1)


def planted_examples(n: int, dimension: int = 768, noise: float = 0.05,
                     seed: int = 0, provider=None):
    """Embedded examples whose target is a fixed linear readout plus noise."""
    from sdqp.scoremodel import EmbeddedExample

    if provider is None:
        provider = DeterministicStubProvider(seed=0, dimension=dimension)
    rng = np.random.default_rng(seed)
    token_rng = random.Random(seed)
    w = rng.standard_normal(dimension)
    vocab = [f"tok{k}" for k in range(400)]
    examples = []
    for i in range(n):
        text = " ".join(token_rng.choice(vocab) for _ in range(24))
        emb = provider.embed_chunk(text)
        target = float(emb.astype(np.float64) @ w + rng.normal(0.0, noise))
        examples.append(EmbeddedExample(
            paper_id=f"pl-{i:05d}", paper_embedding=emb, target=target,
            publication_date=YearMonth(2000 + i % 20, 1 + i % 12)))
    return examples
