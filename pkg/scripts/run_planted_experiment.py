#!/usr/bin/env python3
"""Train a score model on a planted linear signal, fully offline.

Builds a synthetic embedded dataset whose target is a fixed linear readout
of the stub embedding plus Gaussian noise, trains the no-context model, and
prints test metrics. Deterministic for a given seed, so two runs with the
same arguments print the same table.
"""
import argparse
import random
import sys

import numpy as np

from sdqp.corpus import YearMonth
from sdqp.embed import DeterministicStubProvider
from sdqp.metrics import (MetricReport, format_report_table, mean_l1,
                          pairwise_accuracy_from_scores, pearson, spearman)
from sdqp.scoremodel import (EmbeddedExample, ModelKind, Objective,
                             TrainConfig, build_model, predict_batch, train)


def planted_dataset(n: int, dimension: int, noise: float, seed: int) -> list:
    provider = DeterministicStubProvider(seed=seed, dimension=dimension)
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


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=3000,
                        help="total examples; split 2000/500/500 style 4:1:1")
    parser.add_argument("--dimension", type=int, default=768)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--learning-rate", type=float, default=1e-3)
    parser.add_argument("--objective", choices=[o.value for o in Objective],
                        default=Objective.PAIRWISE.value)
    args = parser.parse_args(argv)

    examples = planted_dataset(args.n, args.dimension, args.noise, args.seed)
    a, b = (args.n * 4) // 6, (args.n * 5) // 6
    train_set, val_set, test_set = examples[:a], examples[a:b], examples[b:]

    model = build_model(ModelKind.NO_CONTEXT, seed=args.seed,
                        dimension=args.dimension)
    config = TrainConfig(learning_rate=args.learning_rate, dropout=0.0,
                         epochs=args.epochs, batch_size=256, seed=args.seed,
                         objective=Objective(args.objective))
    _, history = train(model, train_set, val_set, config)
    print(f"trained {len(history)} epochs; "
          f"final val loss {history[-1]['val_loss']:.4f}")

    scores = predict_batch(model, test_set).data.astype(np.float64)
    targets = np.array([e.target for e in test_set], dtype=np.float64)
    accuracy, n_pairs = pairwise_accuracy_from_scores(scores, targets,
                                                      seed=args.seed)
    report = MetricReport(pairwise_accuracy=accuracy,
                          spearman=spearman(scores, targets),
                          pearson=pearson(scores, targets),
                          l1=mean_l1(scores, targets),
                          n_items=len(test_set), n_pairs=n_pairs,
                          seed=args.seed)
    print(format_report_table({"planted test": report}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
