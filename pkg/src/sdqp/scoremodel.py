"""Score models over document embeddings: a plain MLP scorer and a context
variant that attends over [paper, context...] embedding sequences, trained
either pairwise (which of two papers scores higher) or by L1 regression,
with validation-loss checkpoint selection and grid search.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .corpus import YearMonth
from .neuralcore import (
    NonFiniteError,
    ParamSet,
    Tensor,
    abs_,
    adam_step,
    backward,
    bce_with_logits,
    encoder_layer_forward,
    init_encoder_layer,
    init_mlp,
    load_checkpoint,
    mean_all,
    mlp_forward,
    pad_sequences,
    save_checkpoint,
    select,
    sub,
)


class ScoreModelError(ValueError):
    """Raised for model/example mismatches and invalid configurations."""


class TrainingError(RuntimeError):
    """Raised when a training run aborts (non-finite loss, degenerate data)."""


class ModelKind(str, Enum):
    NO_CONTEXT = "no_context"
    CONTEXT = "context"


class TargetKind(str, Enum):
    CITATION_LOG_AVG = "citation_log_avg"
    REVIEW_SCORE_MEAN = "review_score_mean"
    IMPACT_MEAN = "impact_mean"


class RepresentationKind(str, Enum):
    TITLE_ABSTRACT = "title_abstract"
    HYPOTHESIS = "hypothesis"
    INTRODUCTION = "introduction"
    RELATED_WORK = "related_work"
    METHODOLOGY = "methodology"
    EXPERIMENTS_RESULTS = "experiments_results"
    CONCLUSION = "conclusion"


class ContextKind(str, Enum):
    NONE = "none"
    FULL_PAPER_SECTIONS = "full_paper_sections"
    REFERENCE_TITLES_ABSTRACTS = "reference_titles_abstracts"


class Objective(str, Enum):
    PAIRWISE = "pairwise"
    REGRESSION = "regression"


GRID_LEARNING_RATES = (0.0001, 0.001, 0.0005, 0.00005)
GRID_DROPOUTS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class EmbeddedExample:
    """One training/evaluation item: the paper representation embedding, any
    context embeddings (sections or reference title+abstracts), and the
    prediction target when known."""

    paper_id: str
    paper_embedding: np.ndarray
    context_embeddings: tuple = ()
    target: Optional[float] = None
    publication_date: Optional[YearMonth] = None


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    dropout: float = 0.3
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    objective: Objective = Objective.PAIRWISE
    pairs_per_epoch: Optional[int] = None
    grid_learning_rates: tuple = GRID_LEARNING_RATES
    grid_dropouts: tuple = GRID_DROPOUTS

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ScoreModelError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ScoreModelError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ScoreModelError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ScoreModelError(f"dropout must be in [0,1), got {self.dropout}")
        self.objective = Objective(self.objective)

    def stable_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def default_train_config(kind: ModelKind, objective: Objective = Objective.PAIRWISE,
                         seed: int = 0) -> TrainConfig:
    """Published training recipe: 100 epochs at batch 256 for the plain MLP,
    50 epochs at batch 128 for the context model."""
    if kind is ModelKind.NO_CONTEXT:
        return TrainConfig(epochs=100, batch_size=256, objective=objective, seed=seed)
    return TrainConfig(epochs=50, batch_size=128, objective=objective, seed=seed)


@dataclass
class ScoreModel:
    kind: ModelKind
    params: ParamSet
    provider_id: str = ""
    target_kind: TargetKind = TargetKind.REVIEW_SCORE_MEAN
    representation_kind: RepresentationKind = RepresentationKind.TITLE_ABSTRACT
    context_kind: ContextKind = ContextKind.NONE
    dimension: int = 768
    hidden: int = 256
    heads: int = 1
    ff_hidden: int = 1024

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.target_kind = TargetKind(self.target_kind)
        self.representation_kind = RepresentationKind(self.representation_kind)
        self.context_kind = ContextKind(self.context_kind)
        if self.kind is ModelKind.NO_CONTEXT and self.context_kind is not ContextKind.NONE:
            raise ScoreModelError("a no-context model cannot declare a context kind")
        if self.kind is ModelKind.CONTEXT and self.context_kind is ContextKind.NONE:
            raise ScoreModelError("a context model must declare its context kind")


def build_model(kind: ModelKind, seed: int = 0, dimension: int = 768, hidden: int = 256,
                heads: int = 1, ff_hidden: int = 1024, provider_id: str = "",
                target_kind=TargetKind.REVIEW_SCORE_MEAN,
                representation_kind=RepresentationKind.TITLE_ABSTRACT,
                context_kind=None) -> ScoreModel:
    kind = ModelKind(kind)
    if context_kind is None:
        context_kind = (ContextKind.NONE if kind is ModelKind.NO_CONTEXT
                        else ContextKind.FULL_PAPER_SECTIONS)
    params = ParamSet(seed=seed)
    if kind is ModelKind.CONTEXT:
        init_encoder_layer(params, params.rng, d=dimension, ff_hidden=ff_hidden)
    init_mlp(params, params.rng, in_dim=dimension, hidden=hidden)
    return ScoreModel(kind=kind, params=params, provider_id=provider_id,
                      target_kind=target_kind, representation_kind=representation_kind,
                      context_kind=context_kind, dimension=dimension, hidden=hidden,
                      heads=heads, ff_hidden=ff_hidden)


# ---------------------------------------------------------------------------
# forward passes

def _check_example(model: ScoreModel, example: EmbeddedExample) -> None:
    if example.paper_embedding.shape != (model.dimension,):
        raise ScoreModelError(
            f"example {example.paper_id!r}: embedding shape {example.paper_embedding.shape} "
            f"does not match model dimension {model.dimension}")
    for k, ctx in enumerate(example.context_embeddings):
        if ctx.shape != (model.dimension,):
            raise ScoreModelError(
                f"example {example.paper_id!r}: context vector {k} has shape {ctx.shape}, "
                f"expected ({model.dimension},)")


def predict_batch(model: ScoreModel, examples, dropout_rate: float = 0.0,
                  training: bool = False) -> Tensor:
    """Score a batch of examples -> (B,) tensor. The context model runs the
    sequence [paper, context...] through the encoder layer and reads out the
    paper slot before the MLP."""
    if not examples:
        raise ScoreModelError("empty batch")
    for example in examples:
        _check_example(model, example)
    dtype = model.params.dtype
    if model.kind is ModelKind.NO_CONTEXT:
        x = Tensor(np.stack([e.paper_embedding for e in examples]).astype(dtype))
        return mlp_forward(x, model.params, dropout_rate, training)
    seqs = [np.stack([e.paper_embedding] + list(e.context_embeddings)).astype(dtype)
            for e in examples]
    batch, mask = pad_sequences(seqs, dtype=dtype)
    h = encoder_layer_forward(Tensor(batch), model.params, heads=model.heads,
                              dropout_rate=dropout_rate, training=training, key_mask=mask)
    readout = select(h, 0, axis=1)
    return mlp_forward(readout, model.params, dropout_rate, training)


def predict(model: ScoreModel, example: EmbeddedExample) -> float:
    """Deterministic inference-mode score for one example."""
    return float(predict_batch(model, [example]).data[0])


def wins(f1: float, f2: float, id1: str, id2: str) -> bool:
    """Comparison decision rule: higher score wins, exact ties break by id,
    so exactly one side wins every matchup."""
    if f1 != f2:
        return f1 > f2
    return id1 < id2


# ---------------------------------------------------------------------------
# objectives

def pairwise_loss(f1: Tensor, f2: Tensor, x) -> Tensor:
    """Cross-entropy of sigma(f1 - f2) against the binary label x; computed in
    logits form so it stays finite for any score gap."""
    return bce_with_logits(sub(f1, f2), x)


def regression_loss(pred: Tensor, target) -> Tensor:
    return abs_(sub(pred, Tensor(np.asarray(target, dtype=pred.data.dtype))))


def make_pairs(examples, seed: int, pairs_per_epoch: Optional[int] = None) -> list:
    """Draw (i, j, x) training pairs with i < j and x = 1 when target_i is the
    larger. Pairs are sampled uniformly over index pairs; equal-target draws
    are discarded and redrawn. Deterministic for a given seed."""
    eligible = [i for i, e in enumerate(examples) if e.target is not None]
    if len(eligible) < 2:
        raise ScoreModelError(f"need >= 2 examples with targets, got {len(eligible)}")
    targets = {i: float(examples[i].target) for i in eligible}
    distinct = set(targets.values())
    if len(distinct) < 2:
        raise ScoreModelError("all targets equal; no ranking pairs exist")
    if pairs_per_epoch is None:
        pairs_per_epoch = len(examples)
    rng = np.random.default_rng(seed)
    n = len(eligible)
    pairs = []
    while len(pairs) < pairs_per_epoch:
        a = int(rng.integers(n))
        b = int(rng.integers(n - 1))
        if b >= a:
            b += 1
        i, j = eligible[min(a, b)], eligible[max(a, b)]
        if targets[i] == targets[j]:
            continue
        pairs.append((i, j, 1 if targets[i] > targets[j] else 0))
    return pairs


# ---------------------------------------------------------------------------
# training

def _derived_seed(seed: int, *salt) -> int:
    return int(np.random.SeedSequence((seed,) + salt).generate_state(1)[0])


def _pairwise_batch_loss(model, examples, batch, dropout_rate, training) -> Tensor:
    left = predict_batch(model, [examples[i] for i, _, _ in batch], dropout_rate, training)
    right = predict_batch(model, [examples[j] for _, j, _ in batch], dropout_rate, training)
    labels = np.array([x for _, _, x in batch], dtype=model.params.dtype)
    return mean_all(pairwise_loss(left, right, labels))


def _regression_batch_loss(model, examples, idx, dropout_rate, training) -> Tensor:
    batch = [examples[i] for i in idx]
    pred = predict_batch(model, batch, dropout_rate, training)
    targets = np.array([e.target for e in batch], dtype=model.params.dtype)
    return mean_all(regression_loss(pred, targets))


def _batches(seq, size):
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def validation_loss(model: ScoreModel, val_set, config: TrainConfig,
                    val_pairs=None) -> float:
    """Inference-mode loss on the validation set: mean pairwise cross-entropy
    over a fixed pair draw, or mean L1 for regression."""
    total = 0.0
    count = 0
    if config.objective is Objective.PAIRWISE:
        if val_pairs is None:
            val_pairs = make_pairs(val_set, _derived_seed(config.seed, 0xA1))
        for batch in _batches(val_pairs, config.batch_size):
            loss = _pairwise_batch_loss(model, val_set, batch, 0.0, False)
            total += float(loss.data) * len(batch)
            count += len(batch)
    else:
        idx = [i for i, e in enumerate(val_set) if e.target is not None]
        if not idx:
            raise ScoreModelError("validation set has no targets")
        for batch in _batches(idx, config.batch_size):
            loss = _regression_batch_loss(model, val_set, batch, 0.0, False)
            total += float(loss.data) * len(batch)
            count += len(batch)
    return total / count


def train(model: ScoreModel, train_set, val_set, config: TrainConfig):
    """Minibatch Adam with per-epoch validation; returns (model, history) with
    the parameters rolled back to the epoch of minimum validation loss
    (earliest on ties). History rows: {epoch, train_loss, val_loss}."""
    ids_train = {e.paper_id for e in train_set}
    overlap = ids_train & {e.paper_id for e in val_set}
    if overlap:
        raise ScoreModelError(f"train/val ids overlap: {sorted(overlap)[:3]}")
    history = []
    if config.epochs == 0:
        return model, history
    if config.objective is Objective.PAIRWISE:
        val_pairs = make_pairs(val_set, _derived_seed(config.seed, 0xA1))
    else:
        val_pairs = None
    shuffle_rng = np.random.default_rng(_derived_seed(config.seed, 0x5F))
    best_val = None
    best_values = None
    for epoch in range(config.epochs):
        epoch_total = 0.0
        epoch_count = 0
        if config.objective is Objective.PAIRWISE:
            pairs = make_pairs(train_set, _derived_seed(config.seed, 0x7A, epoch),
                               config.pairs_per_epoch)
            batches = list(_batches(pairs, config.batch_size))
        else:
            idx = [i for i, e in enumerate(train_set) if e.target is not None]
            if not idx:
                raise ScoreModelError("training set has no targets")
            shuffle_rng.shuffle(idx)
            batches = list(_batches(idx, config.batch_size))
        for b, batch in enumerate(batches):
            try:
                if config.objective is Objective.PAIRWISE:
                    loss = _pairwise_batch_loss(model, train_set, batch,
                                                config.dropout, True)
                else:
                    loss = _regression_batch_loss(model, train_set, batch,
                                                  config.dropout, True)
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            adam_step(model.params, config.learning_rate)
            epoch_total += float(loss.data) * len(batch)
            epoch_count += len(batch)
        val = validation_loss(model, val_set, config, val_pairs)
        history.append({"epoch": epoch, "train_loss": epoch_total / epoch_count,
                        "val_loss": val})
        if best_val is None or val < best_val:
            best_val = val
            best_values = model.params.copy_values()
    if best_values is not None:
        model.params.load_values(best_values)
    return model, history


@dataclass
class GridSearchResult:
    best_learning_rate: float
    best_dropout: float
    best_val_loss: float
    best_model: ScoreModel
    best_history: list
    cells: list = field(default_factory=list)


def grid_search(model_factory, train_set, val_set, config: TrainConfig) -> GridSearchResult:
    """Train one model per (learning rate, dropout) cell, all from the same
    seed, and keep the cell with the lowest validation loss at its selected
    checkpoint. Ties prefer the lower learning rate, then the lower dropout.
    Failed cells are recorded and skipped; every cell failing is an error."""
    if not config.grid_learning_rates or not config.grid_dropouts:
        raise ScoreModelError("empty hyperparameter grid")
    cells = []
    best = None
    for lr in config.grid_learning_rates:
        for dropout in config.grid_dropouts:
            cell_config = replace(config, learning_rate=lr, dropout=dropout)
            model = model_factory(config.seed)
            try:
                model, history = train(model, train_set, val_set, cell_config)
            except (TrainingError, ScoreModelError) as exc:
                cells.append({"learning_rate": lr, "dropout": dropout,
                              "val_loss": None, "error": str(exc)})
                continue
            val_loss = min(h["val_loss"] for h in history) if history else float("inf")
            cells.append({"learning_rate": lr, "dropout": dropout,
                          "val_loss": val_loss, "error": None})
            key = (val_loss, lr, dropout)
            if best is None or key < best[0]:
                best = (key, model, history)
    if best is None:
        raise TrainingError("every grid cell failed")
    (val_loss, lr, dropout), model, history = best
    return GridSearchResult(best_learning_rate=lr, best_dropout=dropout,
                            best_val_loss=val_loss, best_model=model,
                            best_history=history, cells=cells)


def write_history(history: list, path: str) -> None:
    """Training curve as JSONL, one epoch per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# model and dataset persistence

def save_model(model: ScoreModel, path: str, extra_meta: dict = None) -> None:
    meta = {
        "kind": model.kind.value,
        "target_kind": model.target_kind.value,
        "representation_kind": model.representation_kind.value,
        "context_kind": model.context_kind.value,
        "provider_id": model.provider_id,
        "dimension": model.dimension,
        "hidden": model.hidden,
        "heads": model.heads,
        "ff_hidden": model.ff_hidden,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    save_checkpoint(model.params, path, meta=meta)


def load_model(path: str) -> ScoreModel:
    params, meta = load_checkpoint(path)
    try:
        return ScoreModel(kind=ModelKind(meta["kind"]), params=params,
                          provider_id=meta["provider_id"],
                          target_kind=TargetKind(meta["target_kind"]),
                          representation_kind=RepresentationKind(meta["representation_kind"]),
                          context_kind=ContextKind(meta["context_kind"]),
                          dimension=int(meta["dimension"]), hidden=int(meta["hidden"]),
                          heads=int(meta["heads"]), ff_hidden=int(meta["ff_hidden"]))
    except KeyError as exc:
        raise ScoreModelError(f"{path}: checkpoint missing model metadata {exc}") from exc


DATASET_MAGIC = b"SDQD"
DATASET_VERSION = 1


def save_embedded_dataset(examples, path: str) -> None:
    """Binary dataset of embedded examples: magic, u16 version, u32 header
    length, JSON header (ids, dates, dimension, context offsets), then
    little-endian float32 embeddings, float64 targets (NaN = absent), and the
    flattened context matrix."""
    if not examples:
        raise ScoreModelError("refusing to save an empty dataset")
    dim = examples[0].paper_embedding.shape[0]
    for e in examples:
        if e.paper_embedding.shape != (dim,):
            raise ScoreModelError(f"example {e.paper_id!r}: inconsistent dimension")
    offsets = [0]
    for e in examples:
        offsets.append(offsets[-1] + len(e.context_embeddings))
    header = {
        "version": DATASET_VERSION,
        "dimension": dim,
        "n": len(examples),
        "ids": [e.paper_id for e in examples],
        "dates": [str(e.publication_date) if e.publication_date else None
                  for e in examples],
        "context_offsets": offsets,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    emb = np.stack([e.paper_embedding for e in examples]).astype("<f4")
    targets = np.array([float("nan") if e.target is None else float(e.target)
                        for e in examples], dtype="<f8")
    if offsets[-1]:
        ctx = np.concatenate([np.stack(e.context_embeddings).astype("<f4")
                              for e in examples if e.context_embeddings])
    else:
        ctx = np.zeros((0, dim), dtype="<f4")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<HI", DATASET_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            fh.write(emb.tobytes())
            fh.write(targets.tobytes())
            fh.write(ctx.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_embedded_dataset(path: str) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != DATASET_MAGIC:
        raise ScoreModelError(f"{path}: not an embedded dataset")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != DATASET_VERSION:
        raise ScoreModelError(f"{path}: unsupported dataset version {version}")
    header = json.loads(blob[10 : 10 + header_len].decode("utf-8"))
    n = header["n"]
    dim = header["dimension"]
    offsets = header["context_offsets"]
    pos = 10 + header_len
    emb = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
    pos += n * dim * 4
    targets = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
    pos += n * 8
    total_ctx = offsets[-1]
    ctx = np.frombuffer(blob, dtype="<f4", count=total_ctx * dim, offset=pos)
    ctx = ctx.reshape(total_ctx, dim) if total_ctx else np.zeros((0, dim), dtype=np.float32)
    examples = []
    for i in range(n):
        date = header["dates"][i]
        target = float(targets[i])
        context = tuple(np.array(ctx[k], dtype=np.float32)
                        for k in range(offsets[i], offsets[i + 1]))
        examples.append(EmbeddedExample(
            paper_id=header["ids"][i],
            paper_embedding=np.array(emb[i], dtype=np.float32),
            context_embeddings=context,
            target=None if np.isnan(target) else target,
            publication_date=YearMonth.parse(date) if date else None))
    return examples
