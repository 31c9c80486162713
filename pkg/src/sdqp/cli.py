"""Single command-line entry point wiring all modules together.

Subcommands: ingest, embed, train, evaluate, rank, analyze, sections, topics.
A YAML run config drives every command; command-line flags win over config
values, all randomness flows from explicit seeds, and every artifact is
written atomically (temp file + rename) so reruns with the same config, seed
and stub provider produce byte-identical reports.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import (Corpus, CorpusError, Decision, PaperRecord, YearMonth,
                     load_corpus, save_corpus, validate_record)
from .embed import (DeterministicStubProvider, EmbeddingCache, EmbeddingError,
                    RemoteProvider, embed_text)
from .harmonize import (HarmonizeError, _split_sizes, citation_target,
                        elapsed_months, harmonize_review, load_venue_config,
                        mean_review_score)
from .metrics import (MetricReport, MetricsError, citation_review_correlation,
                      format_report_table, human_consistency, mean_l1,
                      pairwise_accuracy_from_scores, pearson,
                      review_dimension_correlations, round_robin_rank,
                      spearman, swiss_rank)
from .scoremodel import (EmbeddedExample, ModelKind, Objective, ScoreModelError,
                         TrainingError, build_model, default_train_config,
                         grid_search, load_embedded_dataset, load_model, predict,
                         predict_batch, save_embedded_dataset, save_model, train,
                         write_history)


class CliError(RuntimeError):
    """Command failure; the message names the failing stage."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except CliError:
        raise
    except Exception as exc:
        raise CliError(f"{name}: {exc}") from exc


# ---------------------------------------------------------------------------
# run config

@dataclass
class RunConfig:
    """Everything a run needs; flags override individual fields."""

    corpus_path: str = "corpus.jsonl"
    output_dir: str = "out"
    provider: str = "stub"
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None
    stub_seed: int = 0
    snapshot_date: Optional[str] = None
    target: str = "citations"
    review_attribute: str = "score"
    model: str = "no_context"
    objective: str = "pairwise"
    grid: bool = False
    seeds: tuple = (0,)
    threads: int = 1
    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    test_fraction: float = 0.15
    learning_rate: Optional[float] = None
    dropout: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    venue_config: Optional[str] = None
    topic_count: int = 13
    topic_iterations: int = 1000

    def __post_init__(self):
        if not self.seeds:
            raise CliError("run config: seed list must be nonempty")
        if self.provider not in ("stub", "remote"):
            raise CliError(f"run config: unknown provider {self.provider!r}")
        if self.target not in ("citations", "review_score"):
            raise CliError(f"run config: unknown target {self.target!r}")
        if self.provider == "remote" and not self.endpoint:
            raise CliError("run config: remote provider needs an endpoint")

    def fractions(self):
        return (self.train_fraction, self.validation_fraction, self.test_fraction)

    def dataset_path(self) -> str:
        return os.path.join(self.output_dir, "dataset.bin")


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    import yaml

    with _stage("load config"):
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    fields = {}
    plain = ("corpus_path", "output_dir", "provider", "endpoint", "cache_path",
             "stub_seed", "snapshot_date", "target", "review_attribute", "model",
             "objective", "grid", "threads", "venue_config", "topic_count",
             "topic_iterations")
    for key in plain:
        if key in data:
            fields[key] = data[key]
    if "seeds" in data:
        fields["seeds"] = tuple(int(s) for s in data["seeds"])
    for key, name in (("train", "train_fraction"), ("validation", "validation_fraction"),
                      ("test", "test_fraction")):
        if key in data.get("split", {}):
            fields[name] = float(data["split"][key])
    training = data.get("training", {})
    for key in ("learning_rate", "dropout", "epochs", "batch_size"):
        if key in training:
            fields[key] = training[key]
    return RunConfig(**fields)


def _apply_flags(config: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = (args.seed,)
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    if getattr(args, "provider", None) is not None:
        updates["provider"] = args.provider
    if getattr(args, "endpoint", None) is not None:
        updates["endpoint"] = args.endpoint
    if getattr(args, "no_cache", False):
        updates["cache_path"] = None
    if getattr(args, "out", None) is not None:
        updates["output_dir"] = args.out
    return dataclasses.replace(config, **updates) if updates else config


# ---------------------------------------------------------------------------
# shared plumbing

def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path: str, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _build_provider(config: RunConfig, no_network: bool = False):
    if config.provider == "stub":
        return DeterministicStubProvider(seed=config.stub_seed)
    if no_network:
        raise CliError(
            f"provider: remote provider {config.endpoint} needs network access; "
            "rerun without --no-network, use --provider stub, or supply a "
            "precomputed dataset")
    with _stage("provider"):
        return RemoteProvider(config.endpoint)


def _open_cache(config: RunConfig, dimension: int):
    if config.cache_path is None:
        return None
    with _stage("embedding cache"):
        return EmbeddingCache(config.cache_path, dimension=dimension)


def _paper_text(record: PaperRecord) -> str:
    title = record.title.strip()
    if title and title[-1] not in ".!?":
        title += "."
    return f"{title} {record.abstract}".strip()


def _paper_target(record: PaperRecord, config: RunConfig) -> Optional[float]:
    if config.target == "citations":
        if record.citation_count is None or config.snapshot_date is None:
            return None
        months = elapsed_months(record.publication_date,
                                YearMonth.parse(config.snapshot_date))
        return citation_target(record.citation_count, months)
    return mean_review_score(record, config.review_attribute)


def _date_key(example: EmbeddedExample):
    date = example.publication_date
    if date is None:
        return (9999, 13, example.paper_id)
    return (date.year, date.month, example.paper_id)


def _split_examples(examples, fractions):
    ordered = sorted(examples, key=_date_key)
    sizes = _split_sizes(len(ordered), fractions)
    train_set = ordered[: sizes[0]]
    val_set = ordered[sizes[0] : sizes[0] + sizes[1]]
    test_set = ordered[sizes[0] + sizes[1] :]
    return train_set, val_set, test_set


def _embed_corpus(config: RunConfig, no_network: bool = False) -> list:
    """Embed every paper's title+abstract; writes the dataset artifact."""
    with _stage("load corpus"):
        corpus = load_corpus(config.corpus_path)
    provider = _build_provider(config, no_network)
    cache = _open_cache(config, provider.dimension)
    records = list(corpus)
    texts = [_paper_text(r) for r in records]

    def one(text):
        return embed_text(text, provider, cache)

    with _stage("embed"):
        try:
            if config.threads > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    vectors = list(pool.map(one, texts))
            else:
                vectors = [one(t) for t in texts]
        finally:
            if cache is not None:
                cache.close()
    examples = []
    n_targets = 0
    with _stage("targets"):
        for record, vector in zip(records, vectors):
            target = _paper_target(record, config)
            if target is not None:
                n_targets += 1
            examples.append(EmbeddedExample(
                paper_id=record.id, paper_embedding=vector, target=target,
                publication_date=record.publication_date))
    with _stage("write dataset"):
        os.makedirs(config.output_dir, exist_ok=True)
        save_embedded_dataset(examples, config.dataset_path())
    print(f"embedded {len(examples)} papers ({n_targets} with targets) "
          f"-> {config.dataset_path()}")
    return examples


def _load_or_embed(config: RunConfig, no_network: bool) -> list:
    path = config.dataset_path()
    if os.path.exists(path):
        with _stage("load dataset"):
            return load_embedded_dataset(path)
    return _embed_corpus(config, no_network)


def _evaluate_examples(model, examples, seed: int) -> MetricReport:
    scored = [e for e in examples if e.target is not None]
    if len(scored) < 2:
        raise CliError("evaluate: need at least 2 examples with targets")
    preds = predict_batch(model, scored).data.astype(np.float64)
    targets = np.array([e.target for e in scored], dtype=np.float64)
    accuracy, n_pairs = pairwise_accuracy_from_scores(preds, targets, seed=seed)
    try:
        rho = spearman(preds, targets)
        r = pearson(preds, targets)
    except MetricsError:
        rho = r = None
    return MetricReport(pairwise_accuracy=accuracy, spearman=rho, pearson=r,
                        l1=mean_l1(preds, targets), n_items=len(scored),
                        n_pairs=n_pairs, seed=seed)


def _mean_sigma(values) -> str:
    values = [v for v in values if v is not None]
    if not values:
        return "n/a"
    mean = float(np.mean(values))
    sigma = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return f"{mean:.3f} ({sigma:.3f})"


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args) -> int:
    with _stage("venue config"):
        venue_config = load_venue_config(args.mapping)
    raw_dir = args.raw_dir
    with _stage("scan export"):
        names = sorted(n for n in os.listdir(raw_dir)
                       if n.endswith((".jsonl", ".json")))
    if not names:
        print(f"warning: no export files in {raw_dir}; writing an empty corpus",
              file=sys.stderr)
        with _stage("write corpus"):
            save_corpus(Corpus([]), args.out_corpus)
        return 0

    papers = []
    unmapped = []
    venue_counts = Counter()
    review_counts = Counter()
    bad = 0
    for name in names:
        default_venue = os.path.splitext(name)[0]
        path = os.path.join(raw_dir, name)
        with _stage(f"read {name}"):
            with open(path, "r", encoding="utf-8") as fh:
                lines = [line for line in fh.read().splitlines() if line.strip()]
        for lineno, line in enumerate(lines, start=1):
            where = f"{name}:{lineno}"
            try:
                obj = json.loads(line)
                venue = obj.get("venue", default_venue)
                if venue not in venue_config:
                    raise HarmonizeError(f"no field mapping for venue {venue!r}")
                mapping, scales = venue_config[venue]
                reviews = [harmonize_review(raw, mapping, scales, unmapped=unmapped)
                           for raw in obj.get("reviews", [])]
                record = PaperRecord(
                    id=str(obj["id"]),
                    title=obj.get("title", ""),
                    abstract=obj.get("abstract", ""),
                    publication_date=YearMonth.parse(obj["publication_date"]),
                    venue=venue,
                    reviews=reviews,
                    decision=Decision(obj["decision"]) if "decision" in obj else None,
                    citation_count=obj.get("citation_count"),
                )
                violations = validate_record(record)
                if violations:
                    raise CorpusError("; ".join(str(v) for v in violations))
            except (KeyError, ValueError) as exc:
                bad += 1
                message = f"malformed record at {where}: {exc}"
                if not args.skip_bad:
                    raise CliError(f"ingest: {message}") from exc
                print(f"warning: skipping {message}", file=sys.stderr)
                continue
            papers.append(record)
            venue_counts[venue] += 1
            review_counts[venue] += len(reviews)

    with _stage("write corpus"):
        save_corpus(Corpus(papers), args.out_corpus)
    for venue in sorted(venue_counts):
        print(f"venue {venue}: {venue_counts[venue]} papers, "
              f"{review_counts[venue]} reviews")
    for field_name, count in sorted(Counter(unmapped).items()):
        print(f"unmapped field {field_name!r}: {count}")
    if bad:
        print(f"skipped {bad} malformed records", file=sys.stderr)
    print(f"wrote {len(papers)} papers -> {args.out_corpus}")
    return 0


def cmd_embed(args) -> int:
    config = _apply_flags(load_run_config(args.config), args)
    _embed_corpus(config, no_network=args.no_network)
    return 0


def cmd_train(args) -> int:
    config = _apply_flags(load_run_config(args.config), args)
    if (not os.path.exists(config.dataset_path()) and config.provider == "remote"
            and args.no_network):
        raise CliError(
            f"train: no dataset at {config.dataset_path()} and the remote "
            f"provider {config.endpoint} cannot run with --no-network")
    examples = _load_or_embed(config, args.no_network)
    train_set, val_set, test_set = _split_examples(
        [e for e in examples if e.target is not None], config.fractions())
    kind = ModelKind(config.model)
    objective = Objective(config.objective)
    dimension = examples[0].paper_embedding.shape[0] if examples else 768

    base = default_train_config(kind, objective)
    overrides = {k: getattr(config, k) for k in
                 ("learning_rate", "dropout", "epochs", "batch_size")
                 if getattr(config, k) is not None}
    base = dataclasses.replace(base, **overrides)

    reports = {}
    for seed in config.seeds:
        cfg = dataclasses.replace(base, seed=seed)
        with _stage(f"train seed {seed}"):
            if config.grid:
                result = grid_search(
                    lambda c: build_model(kind, seed=c.seed, dimension=dimension),
                    train_set, val_set, cfg)
                model, history = result.best_model, result.best_history
            else:
                model = build_model(kind, seed=seed, dimension=dimension)
                model, history = train(model, train_set, val_set, cfg)
        ckpt = os.path.join(config.output_dir, f"model_seed{seed}.ckpt")
        with _stage("write checkpoint"):
            os.makedirs(config.output_dir, exist_ok=True)
            save_model(model, ckpt)
            write_history(history, os.path.join(config.output_dir,
                                                f"history_seed{seed}.jsonl"))
        with _stage(f"evaluate seed {seed}"):
            reports[seed] = _evaluate_examples(model, test_set, seed)
        print(f"seed {seed}: checkpoint -> {ckpt}")

    table = format_report_table({f"seed {s}": reports[s] for s in config.seeds})
    summary = {
        "pairwise_accuracy": _mean_sigma([r.pairwise_accuracy for r in reports.values()]),
        "spearman": _mean_sigma([r.spearman for r in reports.values()]),
        "l1": _mean_sigma([r.l1 for r in reports.values()]),
    }
    lines = [table, "", "summary over seeds (mean (sigma)):"]
    lines += [f"  {key}: {value}" for key, value in summary.items()]
    text = "\n".join(lines) + "\n"
    with _stage("write summary"):
        _write_text(os.path.join(config.output_dir, "summary.txt"), text)
        _write_json(os.path.join(config.output_dir, "summary.json"), {
            "per_seed": {str(s): reports[s].to_json() for s in config.seeds},
            "summary": summary,
        })
    print(text, end="")
    return 0


def cmd_evaluate(args) -> int:
    config = _apply_flags(load_run_config(args.config), args)
    ckpt = args.checkpoint or os.path.join(config.output_dir,
                                           f"model_seed{config.seeds[0]}.ckpt")
    if not os.path.exists(ckpt):
        raise CliError(f"evaluate: missing checkpoint {ckpt}")
    if not os.path.exists(config.dataset_path()):
        raise CliError(f"evaluate: missing dataset {config.dataset_path()}")
    with _stage("load model"):
        model = load_model(ckpt)
    with _stage("load dataset"):
        examples = load_embedded_dataset(config.dataset_path())
    splits = dict(zip(("train", "validation", "test"), _split_examples(
        [e for e in examples if e.target is not None], config.fractions())))
    report = _evaluate_examples(model, splits[args.split], config.seeds[0])
    out_path = os.path.join(config.output_dir, f"report_{args.split}.json")
    with _stage("write report"):
        _write_json(out_path, report.to_json())
    print(format_report_table({args.split: report}))
    print(f"report -> {out_path}")
    return 0


def cmd_rank(args) -> int:
    config = _apply_flags(load_run_config(args.config), args)
    ckpt = args.checkpoint or os.path.join(config.output_dir,
                                           f"model_seed{config.seeds[0]}.ckpt")
    if not os.path.exists(ckpt):
        raise CliError(f"rank: missing checkpoint {ckpt}")
    with _stage("load model"):
        model = load_model(ckpt)
    with _stage("scan input"):
        names = sorted(n for n in os.listdir(args.input_dir) if n.endswith(".txt"))
    if not names:
        raise CliError(f"rank: no .txt files in {args.input_dir}")
    provider = _build_provider(config, args.no_network)
    cache = _open_cache(config, provider.dimension)
    examples = []
    with _stage("embed input"):
        try:
            for name in names:
                with open(os.path.join(args.input_dir, name), "r",
                          encoding="utf-8") as fh:
                    text = fh.read()
                examples.append(EmbeddedExample(
                    paper_id=os.path.splitext(name)[0],
                    paper_embedding=embed_text(text, provider, cache)))
        finally:
            if cache is not None:
                cache.close()
    ids = [e.paper_id for e in examples]
    scorer = lambda e: predict(model, e)
    with _stage("rank"):
        if args.swiss:
            result = swiss_rank(scorer, examples, rounds=args.rounds, ids=ids)
            ranked = list(result.ranking)
            lines = [f"{i + 1}. {e.paper_id} (wins {w:g})"
                     for i, (e, w) in enumerate(zip(ranked, result.wins))]
            comparisons = result.n_comparisons
        else:
            ranked = round_robin_rank(scorer, examples, ids=ids)
            lines = [f"{i + 1}. {e.paper_id}" for i, e in enumerate(ranked)]
            comparisons = len(examples) * (len(examples) - 1) // 2
    text = "\n".join(lines) + f"\ncomparisons: {comparisons}\n"
    out_path = os.path.join(config.output_dir, "ranking.txt")
    with _stage("write ranking"):
        _write_text(out_path, text)
    print(text, end="")
    return 0


def cmd_analyze(args) -> int:
    config = _apply_flags(load_run_config(args.config), args)
    if not os.path.exists(config.corpus_path):
        raise CliError(f"analyze: missing corpus {config.corpus_path}")
    with _stage("load corpus"):
        corpus = load_corpus(config.corpus_path)
    os.makedirs(config.output_dir, exist_ok=True)
    results = {}

    with _stage("dimension correlations"):
        try:
            matrix = review_dimension_correlations(corpus)
            _write_text(os.path.join(config.output_dir, "dimension_correlations.csv"),
                        matrix.to_csv())
            _write_text(os.path.join(config.output_dir, "dimension_correlations.svg"),
                        matrix.to_svg())
            results["dimension_correlations"] = "dimension_correlations.csv"
        except MetricsError as exc:
            results["dimension_correlations"] = None
            print(f"note: dimension correlations skipped: {exc}", file=sys.stderr)

    with _stage("human consistency"):
        try:
            value = human_consistency(corpus, attribute=config.review_attribute,
                                      seed=config.seeds[0])
            results["human_consistency"] = value
            print(f"human consistency ({config.review_attribute}): {value:.3f}")
        except MetricsError as exc:
            results["human_consistency"] = None
            print(f"note: human consistency skipped: {exc}", file=sys.stderr)

    with _stage("citation correlation"):
        if config.snapshot_date is None:
            results["citation_review"] = None
            print("note: citation correlation skipped: no snapshot_date",
                  file=sys.stderr)
        else:
            try:
                n, rho = citation_review_correlation(
                    corpus, venue=args.venue, year=args.year,
                    snapshot_date=YearMonth.parse(config.snapshot_date),
                    attribute=config.review_attribute)
                results["citation_review"] = {"n": n, "spearman": rho}
                print(f"citation vs review score: n={n} rho={rho:.3f}")
            except MetricsError as exc:
                results["citation_review"] = None
                print(f"note: citation correlation skipped: {exc}", file=sys.stderr)

    with _stage("write analysis"):
        _write_json(os.path.join(config.output_dir, "analysis.json"), results)
    print(f"analysis -> {os.path.join(config.output_dir, 'analysis.json')}")
    return 0


def cmd_sections(args) -> int:
    from .sections import (SectionTrainConfig, build_section_dataset,
                           classify_section, load_section_classifier,
                           load_synonym_table, save_section_classifier,
                           train_section_classifier)

    config = _apply_flags(load_run_config(args.config), args)
    with _stage("synonym table"):
        table = load_synonym_table(args.synonyms)
    if args.classify:
        ckpt = args.checkpoint or os.path.join(config.output_dir, "sections.ckpt")
        if not os.path.exists(ckpt):
            raise CliError(f"sections: missing checkpoint {ckpt}")
        with _stage("load classifier"):
            classifier = load_section_classifier(ckpt)
        provider = _build_provider(config, args.no_network)
        with _stage("classify"):
            with open(args.data, "r", encoding="utf-8") as fh:
                text = fh.read()
            label, probs = classify_section(text, classifier, provider)
        print(f"{label.value} " +
              " ".join(f"{p:.3f}" for p in probs))
        return 0

    with _stage("read section data"):
        raw_papers = []
        with open(args.data, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    raw_papers.append((obj["paper_id"],
                                       [tuple(s) for s in obj["sections"]]))
    with _stage("build dataset"):
        dataset, skipped = build_section_dataset(raw_papers, table)
    provider = _build_provider(config, args.no_network)
    cfg = SectionTrainConfig(seed=config.seeds[0])
    if config.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=config.epochs)
    if config.learning_rate is not None:
        cfg = dataclasses.replace(cfg, learning_rate=config.learning_rate)
    if config.batch_size is not None:
        cfg = dataclasses.replace(cfg, batch_size=config.batch_size)
    if config.dropout is not None:
        cfg = dataclasses.replace(cfg, dropout=config.dropout)
    with _stage("train classifier"):
        classifier, report = train_section_classifier(dataset, provider, cfg)
    os.makedirs(config.output_dir, exist_ok=True)
    ckpt = os.path.join(config.output_dir, "sections.ckpt")
    with _stage("write classifier"):
        save_section_classifier(classifier, ckpt)
        _write_json(os.path.join(config.output_dir, "sections_report.json"),
                    {**report, "skipped_sections": skipped})
    print(f"sections: {len(dataset)} examples ({skipped} skipped), "
          f"test accuracy {report['test_accuracy']:.3f}, checkpoint -> {ckpt}")
    return 0


def cmd_topics(args) -> int:
    from .topics import (export_topic_labels, fit_lda, frequency_table,
                         label_documents, per_topic_training, preprocess_corpus,
                         save_lda, top_words)

    config = _apply_flags(load_run_config(args.config), args)
    if not os.path.exists(config.corpus_path):
        raise CliError(f"topics: missing corpus {config.corpus_path}")
    with _stage("load corpus"):
        corpus = load_corpus(config.corpus_path)
    records = list(corpus)
    with _stage("preprocess"):
        docs, _collocations = preprocess_corpus(
            [(r.title, r.abstract) for r in records])
    with _stage("fit topics"):
        model = fit_lda(docs, n_topics=config.topic_count,
                        iterations=config.topic_iterations, seed=config.seeds[0])
    os.makedirs(config.output_dir, exist_ok=True)
    with _stage("label"):
        rows, absent = label_documents(
            model, [(r.id, doc) for r, doc in zip(records, docs)],
            seed=config.seeds[0])
    with _stage("write topics"):
        save_lda(model, os.path.join(config.output_dir, "lda.bin"))
        export_topic_labels(rows, os.path.join(config.output_dir, "topic_labels.csv"))
    lines = []
    counts = frequency_table(topic for _, topic, _ in rows)
    for topic, count in counts:
        words = ", ".join(top_words(model, topic, 10))
        lines.append(f"topic {topic} ({count} papers): {words}")
    for paper_id in absent:
        lines.append(f"absent label: {paper_id} (no tokens in vocabulary)")
    text = "\n".join(lines) + "\n"
    with _stage("write topic report"):
        _write_text(os.path.join(config.output_dir, "topics.txt"), text)
    print(text, end="")

    if args.per_topic:
        if not os.path.exists(config.dataset_path()):
            raise CliError(f"topics: missing dataset {config.dataset_path()} "
                           "(run the embed command first)")
        with _stage("load dataset"):
            examples = load_embedded_dataset(config.dataset_path())
        base = default_train_config(ModelKind(config.model), Objective(config.objective))
        overrides = {k: getattr(config, k) for k in
                     ("learning_rate", "dropout", "epochs", "batch_size")
                     if getattr(config, k) is not None}
        base = dataclasses.replace(base, seed=config.seeds[0], **overrides)
        labels = {paper_id: topic for paper_id, topic, _ in rows}
        with _stage("per-topic training"):
            results, skipped = per_topic_training(
                examples, labels, top_m_topics=args.top_topics, config=base,
                min_topic_size=args.min_topic_size)
        table_rows = {f"topic {r.topic_id} (n={r.n_samples})": r.report
                      for r in results}
        if table_rows:
            print(format_report_table(table_rows))
        for entry in skipped:
            print(f"topic {entry['topic_id']} skipped: "
                  f"{entry['n_samples']} samples below minimum")
        with _stage("write per-topic report"):
            _write_json(os.path.join(config.output_dir, "per_topic.json"), {
                "results": [{"topic_id": r.topic_id, "n_samples": r.n_samples,
                             "report": r.report.to_json()} for r in results],
                "skipped": skipped,
            })
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML run config")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed list with one seed")
    common.add_argument("--threads", type=int, default=None,
                        help="global thread budget")
    common.add_argument("--provider", choices=("stub", "remote"), default=None)
    common.add_argument("--endpoint", default=None, help="remote provider URL")
    common.add_argument("--no-cache", action="store_true",
                        help="disable the embedding cache")
    common.add_argument("--no-network", action="store_true",
                        help="fail instead of touching the network")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(
        prog="sdqp", description="Scholarly document quality prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="harmonize a raw review export into a corpus")
    p.add_argument("raw_dir", help="directory of per-venue .jsonl export files")
    p.add_argument("--mapping", default=None, help="venue mapping YAML")
    p.add_argument("--out-corpus", required=True, help="corpus JSONL to write")
    p.add_argument("--skip-bad", action="store_true",
                   help="skip malformed records instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", parents=[common],
                       help="embed the corpus into a dataset artifact")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common],
                       help="train score models over the seed list")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", choices=("train", "validation", "test"),
                   default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", parents=[common],
                       help="rank a folder of paper texts")
    p.add_argument("input_dir", help="directory of .txt files to rank")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--swiss", action="store_true", help="Swiss pairing")
    p.add_argument("--rounds", type=int, default=4, help="Swiss round count")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("analyze", parents=[common],
                       help="correlation and consistency analyses")
    p.add_argument("--venue", default=None)
    p.add_argument("--year", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sections", parents=[common],
                       help="train or apply the section classifier")
    p.add_argument("data", help="JSONL of {paper_id, sections} or, with "
                                "--classify, a text file")
    p.add_argument("--synonyms", default=None, help="synonym table YAML")
    p.add_argument("--classify", action="store_true")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_sections)

    p = sub.add_parser("topics", parents=[common],
                       help="fit a topic model and label the corpus")
    p.add_argument("--per-topic", action="store_true",
                   help="also train per-topic score models")
    p.add_argument("--top-topics", type=int, default=5)
    p.add_argument("--min-topic-size", type=int, default=200)
    p.set_defaults(func=cmd_topics)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, HarmonizeError, EmbeddingError, ScoreModelError,
            TrainingError, MetricsError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
