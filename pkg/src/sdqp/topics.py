"""Unsupervised topic labeling of submissions via LDA on title+abstract.

Preprocessing lowercases, splits on non-alphanumerics, drops stopwords and
short tokens, applies rule-based suffix normalization, and appends corpus
bigrams/trigrams above a collocation threshold. Topics come from a collapsed
Gibbs sampler with symmetric Dirichlet priors; labels support per-topic
score-model training.
"""
from __future__ import annotations

import csv
import json
import os
import random
import re
import struct
import tempfile
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .metrics import (MetricReport, mean_l1, pairwise_accuracy_from_scores,
                      pearson, spearman)
from .scoremodel import (ModelKind, Objective, TrainConfig, build_model,
                         default_train_config, predict_batch, train)

MODEL_MAGIC = b"SDQT"
MODEL_VERSION = 1

DEFAULT_TOPICS = 13
DEFAULT_ITERATIONS = 1000
DEFAULT_COLLOCATION_THRESHOLD = 20
MIN_TOKEN_LENGTH = 3


class TopicsError(ValueError):
    """Raised for empty corpora, unknown topics or malformed model files."""


# ---------------------------------------------------------------------------
# preprocessing

_SPLIT_RE = re.compile(r"[^a-z0-9]+")
_VOWELS = frozenset("aeiou")
# final letters undoubled after -ing/-ed stripping (running -> run)
_UNDOUBLE = frozenset("bdgmnprt")


def _load_lines(name: str) -> list:
    from importlib import resources

    text = resources.files("sdqp").joinpath(f"configs/{name}").read_text("utf-8")
    return [line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")]


def load_stopwords() -> frozenset:
    return frozenset(_load_lines("stopwords.txt"))


def load_suffix_exceptions() -> dict:
    table = {}
    for line in _load_lines("suffix_exceptions.txt"):
        parts = line.split()
        table[parts[0]] = parts[1] if len(parts) > 1 else parts[0]
    return table


_STOPWORDS = None
_EXCEPTIONS = None


def _defaults():
    global _STOPWORDS, _EXCEPTIONS
    if _STOPWORDS is None:
        _STOPWORDS = load_stopwords()
        _EXCEPTIONS = load_suffix_exceptions()
    return _STOPWORDS, _EXCEPTIONS


def _has_vowel(word: str) -> bool:
    return any(c in _VOWELS for c in word)


def _strip_participle(token: str, suffix: str) -> str:
    stem = token[: -len(suffix)]
    if not _has_vowel(stem):
        return token
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] in _UNDOUBLE:
        stem = stem[:-1]
    return stem if len(stem) >= 3 else token


def normalize_suffix(token: str, exceptions: dict = None) -> str:
    """One-pass plural/-ing/-ed stripping with an exception table."""
    if exceptions is None:
        exceptions = _defaults()[1]
    if token in exceptions:
        return exceptions[token]
    if token.endswith("ies") and len(token) >= 5:
        return token[:-3] + "y"
    if token.endswith("sses"):
        return token[:-2]
    if token.endswith(("ches", "shes", "xes")):
        return token[:-2]
    if token.endswith("s") and len(token) >= 4 and not token.endswith(("ss", "us", "is")):
        return token[:-1]
    if token.endswith("ing") and len(token) >= 6:
        return _strip_participle(token, "ing")
    if token.endswith("ied") and len(token) >= 5:
        return token[:-3] + "y"
    if token.endswith("eed"):
        # root -eed words (speed, exceed) far outnumber past tenses; the
        # genuine past tenses (agreed, guaranteed) live in the exception table
        return token
    if token.endswith("ed") and len(token) >= 5:
        return _strip_participle(token, "ed")
    return token


def base_tokens(title: str, abstract: str, stopwords=None, exceptions=None) -> list:
    """Unigram tokens for one document, before n-gram generation."""
    if stopwords is None or exceptions is None:
        defaults = _defaults()
        stopwords = defaults[0] if stopwords is None else stopwords
        exceptions = defaults[1] if exceptions is None else exceptions
    text = f"{title} {abstract}".lower()
    out = []
    for raw in _SPLIT_RE.split(text):
        if len(raw) < MIN_TOKEN_LENGTH or raw in stopwords:
            continue
        out.append(normalize_suffix(raw, exceptions))
    return out


def count_collocations(token_lists) -> Counter:
    """Corpus-wide counts of adjacent bigram and trigram tuples."""
    counts = Counter()
    for tokens in token_lists:
        for i in range(len(tokens) - 1):
            counts[tuple(tokens[i : i + 2])] += 1
        for i in range(len(tokens) - 2):
            counts[tuple(tokens[i : i + 3])] += 1
    return counts


def _append_ngrams(tokens: list, collocations, threshold: int) -> list:
    out = list(tokens)
    for n in (2, 3):
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i : i + n])
            if collocations.get(gram, 0) >= threshold:
                out.append("_".join(gram))
    return out


def preprocess(title: str, abstract: str, collocations=None,
               threshold: int = DEFAULT_COLLOCATION_THRESHOLD,
               stopwords=None, exceptions=None) -> list:
    """Token list for one document; collocations gate appended n-grams."""
    tokens = base_tokens(title, abstract, stopwords, exceptions)
    if collocations:
        tokens = _append_ngrams(tokens, collocations, threshold)
    return tokens


def preprocess_corpus(pairs, threshold: int = DEFAULT_COLLOCATION_THRESHOLD):
    """Tokenize (title, abstract) pairs with corpus-level n-gram counts.

    Returns (token lists, collocation counter); n-grams whose adjacent count
    over the whole corpus reaches the threshold are appended to each document
    that contains them.
    """
    stopwords, exceptions = _defaults()
    base = [base_tokens(t, a, stopwords, exceptions) for t, a in pairs]
    collocations = count_collocations(base)
    docs = [_append_ngrams(tokens, collocations, threshold) for tokens in base]
    return docs, collocations


# ---------------------------------------------------------------------------
# LDA

@dataclass(frozen=True)
class LdaModel:
    """Collapsed-Gibbs LDA fit: vocabulary, topic-word matrix and priors."""

    n_topics: int
    vocabulary: tuple
    topic_word: np.ndarray
    alpha: float
    beta: float
    seed: int
    assignments: tuple = ()
    log_likelihoods: tuple = ()

    def __post_init__(self):
        if self.n_topics < 2:
            raise TopicsError("need at least 2 topics")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise TopicsError("vocabulary has duplicate entries")
        rows = np.asarray(self.topic_word)
        if rows.shape != (self.n_topics, len(self.vocabulary)):
            raise TopicsError(
                f"topic_word shape {rows.shape} does not match "
                f"{self.n_topics} topics x {len(self.vocabulary)} words")
        sums = rows.sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= 1e-9):
            raise TopicsError("topic_word rows must each sum to 1")

    def word_index(self) -> dict:
        return {w: i for i, w in enumerate(self.vocabulary)}


def _corpus_log_likelihood(doc_ids, n_dk, phi, alpha) -> float:
    total = 0.0
    k = n_dk.shape[1]
    for d, ids in enumerate(doc_ids):
        if len(ids) == 0:
            continue
        theta = (n_dk[d] + alpha) / (len(ids) + k * alpha)
        probs = theta @ phi[:, ids]
        total += float(np.log(probs).sum())
    return total


def fit_lda(docs, n_topics: int = DEFAULT_TOPICS, iterations: int = DEFAULT_ITERATIONS,
            seed: int = 0, alpha: float = None, beta: float = 0.01) -> LdaModel:
    """Collapsed Gibbs sampling over token lists with symmetric priors.

    alpha defaults to 50/n_topics. The sampler is seed-deterministic and
    verifies token-count conservation after every iteration; the per-iteration
    corpus log-likelihood trace is kept on the returned model.
    """
    docs = [list(doc) for doc in docs]
    if not docs or all(len(d) == 0 for d in docs):
        raise TopicsError("cannot fit a topic model on an empty corpus")
    if len(docs) < n_topics:
        raise TopicsError(f"need at least {n_topics} documents, got {len(docs)}")
    if alpha is None:
        alpha = 50.0 / n_topics

    vocabulary = tuple(sorted({str(t) for doc in docs for t in doc}))
    index = {w: i for i, w in enumerate(vocabulary)}
    doc_ids = [np.array([index[t] for t in doc], dtype=np.int64) for doc in docs]
    v = len(vocabulary)
    total_tokens = sum(len(ids) for ids in doc_ids)

    rng = random.Random(seed)
    n_dk = np.zeros((len(docs), n_topics), dtype=np.float64)
    n_kw = np.zeros((n_topics, v), dtype=np.float64)
    n_k = np.zeros(n_topics, dtype=np.float64)
    z = []
    for d, ids in enumerate(doc_ids):
        zd = np.empty(len(ids), dtype=np.int64)
        for j, w in enumerate(ids):
            k = rng.randrange(n_topics)
            zd[j] = k
            n_dk[d, k] += 1
            n_kw[k, w] += 1
            n_k[k] += 1
        z.append(zd)

    beta_v = beta * v
    trace = []
    for _ in range(iterations):
        for d, ids in enumerate(doc_ids):
            zd = z[d]
            row = n_dk[d]
            for j in range(len(ids)):
                w = ids[j]
                old = zd[j]
                row[old] -= 1
                n_kw[old, w] -= 1
                n_k[old] -= 1
                p = (n_kw[:, w] + beta) / (n_k + beta_v) * (row + alpha)
                c = np.cumsum(p)
                new = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
                if new >= n_topics:
                    new = n_topics - 1
                zd[j] = new
                row[new] += 1
                n_kw[new, w] += 1
                n_k[new] += 1
        if int(n_k.sum()) != total_tokens:
            raise TopicsError("token count not conserved during sampling")
        phi = (n_kw + beta) / (n_k + beta_v)[:, None]
        trace.append(_corpus_log_likelihood(doc_ids, n_dk, phi, alpha))

    phi = n_kw + beta
    phi /= phi.sum(axis=1, keepdims=True)
    return LdaModel(n_topics=n_topics, vocabulary=vocabulary, topic_word=phi,
                    alpha=alpha, beta=beta, seed=seed,
                    assignments=tuple(tuple(int(k) for k in zd) for zd in z),
                    log_likelihoods=tuple(trace))


def topic_posterior(model: LdaModel, doc, iterations: int = 50, seed: int = 0) -> np.ndarray:
    """Doc-topic posterior under fixed topic-word distributions.

    Gibbs-samples only the new document's assignments; tokens outside the
    vocabulary are ignored. Errors when nothing remains.
    """
    index = model.word_index()
    ids = np.array([index[t] for t in doc if t in index], dtype=np.int64)
    if len(ids) == 0:
        raise TopicsError("document has no tokens in the model vocabulary")
    rng = random.Random(seed)
    counts = np.zeros(model.n_topics, dtype=np.float64)
    zd = np.empty(len(ids), dtype=np.int64)
    for j in range(len(ids)):
        k = rng.randrange(model.n_topics)
        zd[j] = k
        counts[k] += 1
    phi = model.topic_word
    for _ in range(iterations):
        for j in range(len(ids)):
            counts[zd[j]] -= 1
            p = phi[:, ids[j]] * (counts + model.alpha)
            c = np.cumsum(p)
            new = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
            if new >= model.n_topics:
                new = model.n_topics - 1
            zd[j] = new
            counts[new] += 1
    posterior = (counts + model.alpha) / (len(ids) + model.n_topics * model.alpha)
    return posterior


def dominant_topic(model: LdaModel, doc, iterations: int = 50, seed: int = 0) -> int:
    """Argmax of the doc-topic posterior; ties resolve to the lowest id."""
    return int(np.argmax(topic_posterior(model, doc, iterations, seed)))


def top_words(model: LdaModel, topic: int, n: int = 10) -> list:
    if not 0 <= topic < model.n_topics:
        raise TopicsError(f"topic {topic} out of range for {model.n_topics} topics")
    order = np.argsort(-model.topic_word[topic], kind="stable")
    return [model.vocabulary[i] for i in order[: min(n, len(model.vocabulary))]]


def label_documents(model: LdaModel, docs, iterations: int = 50, seed: int = 0):
    """Label (paper_id, tokens) pairs; returns (rows, absent ids).

    Rows are (paper_id, topic_id, probability of that topic); documents with
    no in-vocabulary tokens get no label and land in the absent list.
    """
    rows = []
    absent = []
    for paper_id, doc in docs:
        try:
            posterior = topic_posterior(model, doc, iterations, seed)
        except TopicsError:
            absent.append(paper_id)
            continue
        topic = int(np.argmax(posterior))
        rows.append((paper_id, topic, float(posterior[topic])))
    return rows, absent


def frequency_table(values, top_n: Optional[int] = None) -> list:
    """(value, count) rows sorted by count descending then value."""
    counts = Counter(values)
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return rows if top_n is None else rows[:top_n]


# ---------------------------------------------------------------------------
# persistence

def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_lda(model: LdaModel, path: str) -> None:
    """Versioned binary: JSON header + row-major float64 topic-word matrix."""
    header = json.dumps({
        "version": MODEL_VERSION,
        "n_topics": model.n_topics,
        "alpha": model.alpha,
        "beta": model.beta,
        "seed": model.seed,
        "vocabulary": list(model.vocabulary),
    }, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(model.topic_word, dtype="<f8").tobytes()
    payload = MODEL_MAGIC + struct.pack("<HI", MODEL_VERSION, len(header)) + header + body
    _atomic_write(path, payload)


def load_lda(path: str) -> LdaModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise TopicsError(f"{path}: bad magic, not a topic model file")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != MODEL_VERSION:
        raise TopicsError(f"{path}: unsupported version {version}")
    header = json.loads(blob[10 : 10 + header_len].decode("utf-8"))
    vocabulary = tuple(header["vocabulary"])
    k = int(header["n_topics"])
    expected = 10 + header_len + k * len(vocabulary) * 8
    if len(blob) != expected:
        raise TopicsError(f"{path}: expected {expected} bytes, found {len(blob)}")
    matrix = np.frombuffer(blob[10 + header_len :], dtype="<f8").reshape(k, len(vocabulary))
    return LdaModel(n_topics=k, vocabulary=vocabulary, topic_word=matrix.copy(),
                    alpha=float(header["alpha"]), beta=float(header["beta"]),
                    seed=int(header["seed"]))


def export_topic_labels(rows, path: str) -> None:
    """CSV of (paper_id, topic_id, probability) label rows."""
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["paper_id", "topic_id", "probability"])
    for paper_id, topic, probability in rows:
        writer.writerow([paper_id, topic, f"{probability:.6f}"])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# per-topic score models

@dataclass(frozen=True)
class TopicTrainingResult:
    topic_id: int
    n_samples: int
    report: MetricReport


def _date_key(example):
    date = example.publication_date
    if date is None:
        return (9999, 13, example.paper_id)
    return (date.year, date.month, example.paper_id)


def per_topic_training(examples, labels: dict, top_m_topics: int = 5,
                       config: TrainConfig = None, min_topic_size: int = 200,
                       fractions=(0.7, 0.15, 0.15)):
    """Train one no-context score model per frequent topic.

    examples are embedded items with targets; labels maps paper id to topic
    id. The top_m_topics most frequent topics each get a chronological
    train/validation/test split and a MetricReport; subsets smaller than
    min_topic_size are skipped and reported in the second return value.
    """
    from .harmonize import _split_sizes

    if config is None:
        config = default_train_config(ModelKind.NO_CONTEXT, Objective.PAIRWISE)
    usable = [e for e in examples if e.target is not None and e.paper_id in labels]
    counts = Counter(labels[e.paper_id] for e in usable)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_m_topics]

    results = []
    skipped = []
    for topic, _ in ranked:
        subset = sorted((e for e in usable if labels[e.paper_id] == topic), key=_date_key)
        if len(subset) < min_topic_size:
            skipped.append({"topic_id": topic, "n_samples": len(subset)})
            continue
        sizes = _split_sizes(len(subset), fractions)
        train_set = subset[: sizes[0]]
        val_set = subset[sizes[0] : sizes[0] + sizes[1]]
        test_set = subset[sizes[0] + sizes[1] :]
        model = build_model(ModelKind.NO_CONTEXT, seed=config.seed,
                            dimension=subset[0].paper_embedding.shape[0])
        model, _history = train(model, train_set, val_set, config)
        preds = predict_batch(model, test_set).data.astype(np.float64)
        targets = np.array([e.target for e in test_set], dtype=np.float64)
        accuracy, n_pairs = pairwise_accuracy_from_scores(preds, targets, seed=config.seed)
        try:
            rho = spearman(preds, targets)
            r = pearson(preds, targets)
        except Exception:
            rho = r = None
        report = MetricReport(pairwise_accuracy=accuracy, spearman=rho, pearson=r,
                              l1=mean_l1(preds, targets), n_items=len(test_set),
                              n_pairs=n_pairs, seed=config.seed)
        results.append(TopicTrainingResult(topic_id=topic, n_samples=len(subset),
                                           report=report))
    return results, skipped
