#!/usr/bin/env python3
"""Multi-seed evaluation protocol for a harmonized corpus.

Embeds one corpus with the chosen provider, splits it by publication date,
trains the no-context model over several seeds, and prints per-seed metric
rows plus the mean row. Point --endpoint at a running encoder service for
real embeddings, or use --provider stub for an offline dry run of the whole
protocol.
"""
import argparse
import json
import os
import sys

import numpy as np

from sdqp.corpus import YearMonth, load_corpus
from sdqp.embed import (DeterministicStubProvider, EmbeddingCache,
                        RemoteProvider, embed_text)
from sdqp.harmonize import citation_target, elapsed_months, mean_review_score
from sdqp.metrics import (MetricReport, format_report_table, mean_l1,
                          pairwise_accuracy_from_scores, pearson,
                          reports_to_json, spearman)
from sdqp.scoremodel import (EmbeddedExample, ModelKind, build_model,
                             default_train_config, predict_batch, train)


def paper_text(record, representation: str):
    if representation == "hypothesis":
        if record.hypothesis is None:
            return None
        return (f"{record.hypothesis.problem} "
                f"{record.hypothesis.methodology}").strip()
    title = record.title.strip()
    if title and title[-1] not in ".!?":
        title += "."
    return f"{title} {record.abstract}".strip()


def paper_target(record, target: str, attribute: str, snapshot):
    if target == "citations":
        if record.citation_count is None or snapshot is None:
            return None
        months = elapsed_months(record.publication_date, snapshot)
        return citation_target(record.citation_count, months)
    return mean_review_score(record, attribute)


def build_examples(corpus, provider, cache, args) -> list:
    snapshot = YearMonth.parse(args.snapshot) if args.snapshot else None
    examples = []
    for record in corpus:
        text = paper_text(record, args.representation)
        target = paper_target(record, args.target, args.attribute, snapshot)
        if not text or target is None:
            continue
        examples.append(EmbeddedExample(
            paper_id=record.id,
            paper_embedding=embed_text(text, provider, cache),
            target=target, publication_date=record.publication_date))
    return examples


def temporal_split(examples):
    def key(e):
        if e.publication_date is None:
            return (9999, 13, e.paper_id)
        return (e.publication_date.year, e.publication_date.month, e.paper_id)

    ordered = sorted(examples, key=key)
    n = len(ordered)
    a, b = int(n * 0.7), int(n * 0.85)
    return ordered[:a], ordered[a:b], ordered[b:]


def evaluate(model, test_set, seed: int) -> MetricReport:
    scores = predict_batch(model, test_set).data.astype(np.float64)
    targets = np.array([e.target for e in test_set], dtype=np.float64)
    accuracy, n_pairs = pairwise_accuracy_from_scores(scores, targets,
                                                      seed=seed)
    return MetricReport(pairwise_accuracy=accuracy,
                        spearman=spearman(scores, targets),
                        pearson=pearson(scores, targets),
                        l1=mean_l1(scores, targets),
                        n_items=len(test_set), n_pairs=n_pairs, seed=seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", required=True, help="harmonized JSONL corpus")
    parser.add_argument("--provider", choices=["remote", "stub"],
                        default="remote")
    parser.add_argument("--endpoint", help="encoder service URL (remote)")
    parser.add_argument("--cache", help="embedding cache file")
    parser.add_argument("--target", choices=["citations", "review_score"],
                        default="citations")
    parser.add_argument("--attribute", default="score",
                        help="review attribute for the review_score target")
    parser.add_argument("--snapshot", help="citation snapshot YYYY-MM")
    parser.add_argument("--representation",
                        choices=["title_abstract", "hypothesis"],
                        default="title_abstract")
    parser.add_argument("--seeds", type=int, default=5,
                        help="number of training seeds (0..n-1)")
    parser.add_argument("--out", help="directory for report JSON")
    args = parser.parse_args(argv)

    if args.provider == "remote":
        if not args.endpoint:
            parser.error("--provider remote needs --endpoint")
        provider = RemoteProvider(args.endpoint)
    else:
        provider = DeterministicStubProvider(seed=0)
    if args.target == "citations" and not args.snapshot:
        parser.error("--target citations needs --snapshot YYYY-MM")
    if not os.path.exists(args.corpus):
        print(f"error: corpus not found: {args.corpus}", file=sys.stderr)
        return 1

    corpus = load_corpus(args.corpus)
    cache = EmbeddingCache(args.cache, dimension=provider.dimension) \
        if args.cache else None
    try:
        examples = build_examples(corpus, provider, cache, args)
    finally:
        if cache is not None:
            cache.close()
    if len(examples) < 10:
        print(f"error: only {len(examples)} usable examples", file=sys.stderr)
        return 1
    train_set, val_set, test_set = temporal_split(examples)
    print(f"{len(examples)} examples "
          f"({len(train_set)}/{len(val_set)}/{len(test_set)} split)")

    rows = {}
    for seed in range(args.seeds):
        model = build_model(ModelKind.NO_CONTEXT, seed=seed,
                            dimension=provider.dimension)
        config = default_train_config(ModelKind.NO_CONTEXT, seed=seed)
        train(model, train_set, val_set, config)
        rows[f"seed {seed}"] = evaluate(model, test_set, seed)

    accuracies = [r.pairwise_accuracy for r in rows.values()]
    rhos = [r.spearman for r in rows.values()]
    print(format_report_table(rows))
    print(f"mean accuracy {np.mean(accuracies):.3f} "
          f"(sigma {np.std(accuracies, ddof=1) if len(accuracies) > 1 else 0.0:.3f}), "
          f"mean spearman {np.mean(rhos):.3f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out,
                            f"{args.target}_{args.representation}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(reports_to_json(rows))
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
