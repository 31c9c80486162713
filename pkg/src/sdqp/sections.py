"""Section-heading dataset construction and the five-way section classifier.

Headings are matched against a synonym table after normalization; matched
section bodies become sentence-segmented, labeled examples. The classifier
embeds each sentence with the embedding provider, runs the sequence through
two transformer encoder layers, mean-pools, and applies a linear layer to
produce five logits.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import SectionType
from .embed import segment_sentences
from .harmonize import _split_sizes
from .neuralcore import (
    NonFiniteError,
    ParamSet,
    Tensor,
    adam_step,
    backward,
    cross_entropy_logits,
    encoder_layer_forward,
    init_encoder_layer,
    load_checkpoint,
    masked_mean_pool,
    matmul,
    add,
    mean_all,
    pad_sequences,
    save_checkpoint,
    xavier_uniform,
)
from .scoremodel import TrainingError, _batches, _derived_seed

SECTION_ORDER = (
    SectionType.INTRODUCTION,
    SectionType.BACKGROUND,
    SectionType.METHODOLOGY,
    SectionType.EXPERIMENTS_AND_RESULTS,
    SectionType.CONCLUSION,
)

N_CLASSES = len(SECTION_ORDER)


class SectionsError(ValueError):
    """Raised for invalid synonym tables, headings or degenerate datasets."""


@dataclass(frozen=True)
class SynonymTable:
    """Heading synonyms per section type; unique across types after folding."""

    synonyms: dict

    def __post_init__(self):
        seen = {}
        for section in SECTION_ORDER:
            entries = self.synonyms.get(section)
            if not entries:
                raise SectionsError(f"section type {section.value} has no synonyms")
            for entry in entries:
                key = entry.strip().casefold()
                if key in seen and seen[key] is not section:
                    raise SectionsError(
                        f"synonym {entry!r} appears under both {seen[key].value} "
                        f"and {section.value}")
                seen[key] = section

    def lookup(self) -> dict:
        return {entry.strip().casefold(): section
                for section, entries in self.synonyms.items() for entry in entries}


def load_synonym_table(path=None) -> SynonymTable:
    import yaml

    if path is None:
        from importlib import resources

        text = resources.files("sdqp").joinpath("configs/section_synonyms.yaml") \
                        .read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    data = yaml.safe_load(text)
    table = {}
    for key, entries in data.items():
        table[SectionType(key)] = tuple(str(e) for e in entries)
    return SynonymTable(table)


# leading "3.", "3.1.2", "IV.", "A." or "§" markers before the heading words
_NUMBER_TOKEN_RE = re.compile(r"^(?:\d+(?:\.\d+)*\.?|[IVXLCDM]+\.|[A-Z]\.)$")
_ROMAN_RE = re.compile(r"^[IVXLCDM]+$")


def normalize_heading(heading: str) -> str:
    text = heading.strip().lstrip("§").strip()
    tokens = text.split()
    while tokens:
        first = tokens[0].rstrip("):-")
        if _NUMBER_TOKEN_RE.match(first) or (len(tokens) > 1 and _ROMAN_RE.match(first)):
            tokens = tokens[1:]
        else:
            break
    text = " ".join(tokens).strip()
    return text.rstrip(" :.").casefold()


def match_heading(heading: str, table: SynonymTable) -> Optional[SectionType]:
    return table.lookup().get(normalize_heading(heading))


@dataclass(frozen=True)
class SectionExample:
    sentences: tuple
    label: SectionType
    source_paper_id: str

    def __post_init__(self):
        if not self.sentences:
            raise SectionsError("a section example needs at least one sentence")


def build_section_dataset(raw_papers, table: SynonymTable):
    """Label (heading, body) pairs via the synonym table.

    raw_papers is an iterable of (paper_id, [(heading, body), ...]). Returns
    (examples, skipped) where skipped counts sections whose heading matched
    nothing or whose body had no sentences. Order-stable over inputs.
    """
    lookup = table.lookup()
    examples = []
    skipped = 0
    for paper_id, sections in raw_papers:
        for heading, body in sections:
            label = lookup.get(normalize_heading(heading))
            if label is None:
                skipped += 1
                continue
            sentences = segment_sentences(body)
            if not sentences:
                skipped += 1
                continue
            examples.append(SectionExample(tuple(sentences), label, paper_id))
    return examples, skipped


# ---------------------------------------------------------------------------
# classifier

@dataclass
class SectionClassifier:
    params: ParamSet
    provider_id: str = ""
    dimension: int = 768
    heads: int = 8
    ff_hidden: int = 1024


def build_section_classifier(seed: int = 0, dimension: int = 768, heads: int = 8,
                             ff_hidden: int = 1024, provider_id: str = "") -> SectionClassifier:
    params = ParamSet(seed=seed)
    init_encoder_layer(params, params.rng, d=dimension, ff_hidden=ff_hidden, prefix="enc0")
    init_encoder_layer(params, params.rng, d=dimension, ff_hidden=ff_hidden, prefix="enc1")
    params.add("out.w", xavier_uniform(params.rng, dimension, N_CLASSES, dtype=params.dtype))
    params.add("out.b", np.zeros(N_CLASSES, dtype=params.dtype))
    return SectionClassifier(params=params, provider_id=provider_id, dimension=dimension,
                             heads=heads, ff_hidden=ff_hidden)


def classifier_logits(classifier: SectionClassifier, sequences, dropout_rate: float = 0.0,
                      training: bool = False) -> Tensor:
    """(B, 5) logits from a list of per-example sentence-embedding matrices."""
    batch, mask = pad_sequences(sequences, dtype=classifier.params.dtype)
    h = encoder_layer_forward(Tensor(batch), classifier.params, heads=classifier.heads,
                              dropout_rate=dropout_rate, training=training,
                              key_mask=mask, prefix="enc0")
    h = encoder_layer_forward(h, classifier.params, heads=classifier.heads,
                              dropout_rate=dropout_rate, training=training,
                              key_mask=mask, prefix="enc1")
    pooled = masked_mean_pool(h, mask)
    return add(matmul(pooled, classifier.params["out.w"]), classifier.params["out.b"])


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted, dtype=np.float64)
    return exp / exp.sum(axis=-1, keepdims=True)


def _embed_sentences(sentences, provider, memo: dict) -> np.ndarray:
    rows = []
    for sentence in sentences:
        vec = memo.get(sentence)
        if vec is None:
            vec = provider.embed_chunk(sentence)
            memo[sentence] = vec
        rows.append(vec)
    return np.stack(rows)


def classify_section(paragraph: str, classifier: SectionClassifier, provider,
                     memo: dict = None):
    """(predicted SectionType, 5-way probability vector) for one paragraph."""
    sentences = segment_sentences(paragraph)
    if not sentences:
        raise SectionsError("cannot classify an empty paragraph")
    seq = _embed_sentences(sentences, provider, memo if memo is not None else {})
    logits = classifier_logits(classifier, [seq]).data[0]
    probs = _softmax_np(logits)
    return SECTION_ORDER[int(np.argmax(probs))], probs


@dataclass
class SectionTrainConfig:
    learning_rate: float = 1e-4
    dropout: float = 0.3
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise SectionsError("learning rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise SectionsError("dropout must be in [0,1)")
        total = self.train_fraction + self.validation_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise SectionsError(f"split fractions sum to {total}, expected 1")


def stratified_split(labels, config: SectionTrainConfig):
    """Per-label random 70/15/15 index split, deterministic for a seed."""
    rng = np.random.default_rng(_derived_seed(config.seed, 0x51))
    by_label = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    train, val, test = [], [], []
    for label in sorted(by_label, key=lambda s: s.value):
        idx = by_label[label]
        rng.shuffle(idx)
        sizes = _split_sizes(len(idx), (config.train_fraction, config.validation_fraction,
                                        config.test_fraction))
        train += idx[: sizes[0]]
        val += idx[sizes[0] : sizes[0] + sizes[1]]
        test += idx[sizes[0] + sizes[1] :]
    return sorted(train), sorted(val), sorted(test)


def train_section_classifier(dataset, provider, config: SectionTrainConfig = None):
    """Train on labeled section examples; returns (classifier, report).

    The report carries the per-epoch history, the split sizes, and the test
    accuracy of the minimum-validation-loss checkpoint.
    """
    if config is None:
        config = SectionTrainConfig()
    labels = [e.label for e in dataset]
    if len(set(labels)) < 2:
        raise SectionsError("need at least 2 distinct section labels to train")
    classifier = build_section_classifier(seed=config.seed, dimension=provider.dimension,
                                          provider_id=provider.provider_id)
    memo: dict = {}
    sequences = [_embed_sentences(e.sentences, provider, memo) for e in dataset]
    label_ids = np.array([SECTION_ORDER.index(l) for l in labels], dtype=np.int64)
    train_idx, val_idx, test_idx = stratified_split(labels, config)

    def batch_loss(idx, dropout, training):
        logits = classifier_logits(classifier, [sequences[i] for i in idx],
                                   dropout, training)
        return mean_all(cross_entropy_logits(logits, label_ids[idx]))

    def eval_loss_acc(idx):
        total = 0.0
        hits = 0
        for chunk in _batches(idx, config.batch_size):
            logits = classifier_logits(classifier, [sequences[i] for i in chunk])
            losses = cross_entropy_logits(logits, label_ids[chunk])
            total += float(losses.data.sum())
            hits += int((np.argmax(logits.data, axis=1) == label_ids[chunk]).sum())
        return total / len(idx), hits / len(idx)

    shuffle_rng = np.random.default_rng(_derived_seed(config.seed, 0x52))
    history = []
    best_val = None
    best_values = None
    order = np.array(train_idx)
    for epoch in range(config.epochs):
        shuffle_rng.shuffle(order)
        epoch_total = 0.0
        for b, chunk in enumerate(_batches(list(order), config.batch_size)):
            try:
                loss = batch_loss(chunk, config.dropout, True)
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            adam_step(classifier.params, config.learning_rate)
            epoch_total += float(loss.data) * len(chunk)
        val_loss, val_acc = eval_loss_acc(val_idx)
        history.append({"epoch": epoch, "train_loss": epoch_total / len(order),
                        "val_loss": val_loss, "val_accuracy": val_acc})
        if best_val is None or val_loss < best_val:
            best_val = val_loss
            best_values = classifier.params.copy_values()
    if best_values is not None:
        classifier.params.load_values(best_values)
    test_loss, test_acc = eval_loss_acc(test_idx)
    report = {
        "test_accuracy": test_acc,
        "test_loss": test_loss,
        "n_train": len(train_idx),
        "n_validation": len(val_idx),
        "n_test": len(test_idx),
        "history": history,
    }
    return classifier, report


def save_section_classifier(classifier: SectionClassifier, path: str) -> None:
    save_checkpoint(classifier.params, path, meta={
        "component": "section_classifier",
        "provider_id": classifier.provider_id,
        "dimension": classifier.dimension,
        "heads": classifier.heads,
        "ff_hidden": classifier.ff_hidden,
    })


def load_section_classifier(path: str) -> SectionClassifier:
    params, meta = load_checkpoint(path)
    if meta.get("component") != "section_classifier":
        raise SectionsError(f"{path}: not a section classifier checkpoint")
    return SectionClassifier(params=params, provider_id=meta.get("provider_id", ""),
                             dimension=int(meta["dimension"]), heads=int(meta["heads"]),
                             ff_hidden=int(meta["ff_hidden"]))
