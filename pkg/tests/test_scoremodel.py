"""Score models: architectures, pair drawing, training loop, persistence."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sdqp.corpus import YearMonth
from sdqp.neuralcore import Tensor
from sdqp.scoremodel import (GRID_DROPOUTS, GRID_LEARNING_RATES,
                             EmbeddedExample, ModelKind, Objective,
                             ScoreModelError, TrainConfig, TrainingError,
                             build_model, default_train_config, grid_search,
                             load_embedded_dataset, load_model, make_pairs,
                             pairwise_loss, predict, predict_batch,
                             regression_loss, save_embedded_dataset, save_model,
                             train, validation_loss, wins, write_history)

from conftest import planted_examples


def _examples(n, dimension=16, seed=0, with_context=0, targets=True):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        ctx = tuple(rng.standard_normal(dimension).astype(np.float32)
                    for _ in range(with_context))
        out.append(EmbeddedExample(
            paper_id=f"e{i:04d}",
            paper_embedding=rng.standard_normal(dimension).astype(np.float32),
            context_embeddings=ctx,
            target=float(rng.standard_normal()) if targets else None,
            publication_date=YearMonth(2010 + i % 10, 1 + i % 12)))
    return out


# ---------------------------------------------------------------------------
# architectures

def test_no_context_parameter_count():
    model = build_model(ModelKind.NO_CONTEXT)
    expected = 768 * 256 + 256 + 256 * 1 + 1
    assert model.params.n_parameters() == expected


def test_context_parameter_count():
    model = build_model(ModelKind.CONTEXT)
    d, ff = 768, 1024
    encoder = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d
    mlp = d * 256 + 256 + 256 + 1
    assert model.params.n_parameters() == encoder + mlp


def test_predict_batch_shapes():
    model = build_model(ModelKind.NO_CONTEXT, dimension=16)
    out = predict_batch(model, _examples(5))
    assert out.data.shape == (5,)


def test_context_model_runs_and_reads_paper_slot():
    model = build_model(ModelKind.CONTEXT, dimension=16, hidden=8, ff_hidden=12)
    examples = _examples(4, with_context=3)
    out = predict_batch(model, examples)
    assert out.data.shape == (4,)
    # a context model must see context: changing one context vector moves f
    changed = list(examples)
    moved = np.array(changed[0].context_embeddings[0]) + 5.0
    ctx = (moved.astype(np.float32),) + changed[0].context_embeddings[1:]
    changed[0] = EmbeddedExample(paper_id="e0000",
                                 paper_embedding=changed[0].paper_embedding,
                                 context_embeddings=ctx,
                                 target=changed[0].target,
                                 publication_date=changed[0].publication_date)
    out2 = predict_batch(model, changed)
    assert out.data[0] != pytest.approx(out2.data[0])
    np.testing.assert_allclose(out.data[1:], out2.data[1:], rtol=1e-6)


def test_context_model_handles_ragged_context_counts():
    model = build_model(ModelKind.CONTEXT, dimension=16, hidden=8, ff_hidden=12)
    rng = np.random.default_rng(0)
    examples = []
    for i, k in enumerate((0, 1, 4)):
        examples.append(EmbeddedExample(
            paper_id=f"r{i}",
            paper_embedding=rng.standard_normal(16).astype(np.float32),
            context_embeddings=tuple(rng.standard_normal(16).astype(np.float32)
                                     for _ in range(k))))
    out = predict_batch(model, examples)
    assert out.data.shape == (3,)
    solo = predict(model, examples[0])
    assert solo == pytest.approx(out.data[0], rel=1e-6)


def test_dimension_mismatch_names_offender():
    model = build_model(ModelKind.NO_CONTEXT, dimension=16)
    bad = EmbeddedExample(paper_id="bad-one",
                          paper_embedding=np.zeros(8, dtype=np.float32))
    with pytest.raises(ScoreModelError, match="bad-one"):
        predict(model, bad)


def test_no_context_model_ignores_context_vectors():
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    with_ctx = _examples(3, seed=20, with_context=2)
    without = [EmbeddedExample(paper_id=e.paper_id,
                               paper_embedding=e.paper_embedding,
                               target=e.target,
                               publication_date=e.publication_date)
               for e in with_ctx]
    np.testing.assert_array_equal(predict_batch(model, with_ctx).data,
                                  predict_batch(model, without).data)
    # context vectors are still shape-checked even when unused
    bad = EmbeddedExample(paper_id="bad-ctx",
                          paper_embedding=np.zeros(16, dtype=np.float32),
                          context_embeddings=(np.zeros(4, dtype=np.float32),))
    with pytest.raises(ScoreModelError, match="bad-ctx"):
        predict(model, bad)


# ---------------------------------------------------------------------------
# comparator and losses

def test_wins_antisymmetry_and_ties():
    assert wins(1.0, 0.5, "a", "b") is True
    assert wins(0.5, 1.0, "a", "b") is False
    assert wins(1.0, 1.0, "a", "b") is True
    assert wins(1.0, 1.0, "b", "a") is False


def test_pairwise_loss_constant_at_equal_scores():
    for x in (0.0, 1.0):
        loss = pairwise_loss(Tensor(np.array(0.7)), Tensor(np.array(0.7)),
                             np.array(x))
        assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-9)


def test_regression_loss_zero_at_exact_prediction():
    loss = regression_loss(Tensor(np.array(1.23)), np.array(1.23))
    assert float(loss.data) == 0.0


@settings(max_examples=100)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-100, 100))
def test_pairwise_loss_shift_invariant(f1, f2, c):
    a = pairwise_loss(Tensor(np.array(f1)), Tensor(np.array(f2)), np.array(1.0))
    b = pairwise_loss(Tensor(np.array(f1 + c)), Tensor(np.array(f2 + c)),
                      np.array(1.0))
    np.testing.assert_allclose(a.data, b.data, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# pair drawing

def test_make_pairs_canonical_and_unequal():
    examples = _examples(30, seed=3)
    pairs = make_pairs(examples, seed=0)
    assert len(pairs) == 30
    for i, j, x in pairs:
        assert i < j
        assert examples[i].target != examples[j].target
        assert x == (1.0 if examples[i].target > examples[j].target else 0.0)


def test_make_pairs_deterministic():
    examples = _examples(25, seed=1)
    assert make_pairs(examples, seed=5) == make_pairs(examples, seed=5)
    assert make_pairs(examples, seed=5) != make_pairs(examples, seed=6)


def test_make_pairs_uniform_over_unordered_pairs():
    # chi-square over all 45 unordered pairs of 10 items
    examples = _examples(10, seed=2)
    counts = {}
    draws = 9000
    pairs = make_pairs(examples, seed=0, pairs_per_epoch=draws)
    for i, j, _ in pairs:
        counts[(i, j)] = counts.get((i, j), 0) + 1
    n_cells = 45
    observed = [counts.get((i, j), 0) for i in range(10) for j in range(i + 1, 10)]
    assert len(observed) == n_cells
    chi = stats.chisquare(observed)
    assert chi.pvalue > 1e-4


def test_make_pairs_rejects_degenerate_targets():
    examples = _examples(5, targets=False)
    with pytest.raises(ScoreModelError):
        make_pairs(examples, seed=0)
    same = [EmbeddedExample(paper_id=f"s{i}",
                            paper_embedding=np.zeros(4, dtype=np.float32),
                            target=1.0) for i in range(4)]
    with pytest.raises(ScoreModelError):
        make_pairs(same, seed=0)


# ---------------------------------------------------------------------------
# training

def _quick_config(**kw):
    base = dict(learning_rate=0.01, dropout=0.0, epochs=4, batch_size=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_train_runs_and_reports_history():
    examples = _examples(40, seed=4)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    model, history = train(model, examples[:30], examples[30:], _quick_config())
    assert len(history) == 4
    for row in history:
        assert set(row) == {"epoch", "train_loss", "val_loss"}
    assert all(np.isfinite(row["val_loss"]) for row in history)


def test_train_is_reproducible():
    examples = _examples(40, seed=4)

    def run():
        model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
        return train(model, examples[:30], examples[30:], _quick_config())

    m1, h1 = run()
    m2, h2 = run()
    assert h1 == h2
    for name in m1.params.params:
        np.testing.assert_array_equal(m1.params[name].data, m2.params[name].data)


def test_train_restores_best_validation_weights():
    examples = _examples(60, seed=5)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    config = _quick_config(epochs=8, learning_rate=0.05)
    model, history = train(model, examples[:45], examples[45:], config)
    best = min(row["val_loss"] for row in history)
    final = validation_loss(model, examples[45:], config)
    assert final == pytest.approx(best, rel=1e-5)


def test_train_zero_epochs_is_identity():
    examples = _examples(20, seed=6)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    before = {k: v.data.copy() for k, v in model.params.params.items()}
    model, history = train(model, examples[:15], examples[15:],
                           _quick_config(epochs=0))
    assert history == []
    for name, data in before.items():
        np.testing.assert_array_equal(model.params[name].data, data)


def test_train_rejects_id_overlap():
    examples = _examples(20, seed=7)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    with pytest.raises(ScoreModelError, match="overlap"):
        train(model, examples[:12], examples[10:], _quick_config())


def test_regression_objective_trains():
    examples = _examples(40, seed=8)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    config = _quick_config(objective=Objective.REGRESSION, epochs=3)
    model, history = train(model, examples[:30], examples[30:], config)
    assert len(history) == 3


def test_training_error_names_epoch_and_batch():
    examples = _examples(30, seed=9)
    model = build_model(ModelKind.NO_CONTEXT, dimension=16, hidden=8)
    first = next(iter(model.params.params))
    model.params[first].data[0] = np.nan
    with pytest.raises(TrainingError, match=r"epoch 0 batch 0"):
        train(model, examples[:20], examples[20:], _quick_config())


# ---------------------------------------------------------------------------
# grid search

def test_grid_search_prefers_sane_cell():
    examples = planted_examples(60, dimension=16, noise=0.01, seed=1)
    config = TrainConfig(learning_rate=0.01, dropout=0.0, epochs=3, batch_size=8,
                         seed=0, grid_learning_rates=(1e7, 0.01),
                         grid_dropouts=(0.0, 0.5))
    result = grid_search(
        lambda s: build_model(ModelKind.NO_CONTEXT, seed=s, dimension=16,
                              hidden=8),
        examples[:45], examples[45:], config)
    assert result.best_learning_rate == 0.01
    assert len(result.cells) == 4
    assert math.isfinite(result.best_val_loss)


def test_grid_search_tie_breaks_toward_lower_lr_then_dropout(monkeypatch):
    import sdqp.scoremodel as sm

    def fake_train(model, train_set, val_set, config):
        return model, [{"epoch": 0, "train_loss": 1.0, "val_loss": 0.5}]

    monkeypatch.setattr(sm, "train", fake_train)
    config = TrainConfig(learning_rate=0.01, dropout=0.0, epochs=1, batch_size=8,
                         seed=0, grid_learning_rates=(0.01, 0.001),
                         grid_dropouts=(0.3, 0.1))
    examples = _examples(20, seed=10)
    result = sm.grid_search(
        lambda s: build_model(ModelKind.NO_CONTEXT, seed=s, dimension=16,
                              hidden=8),
        examples[:15], examples[15:], config)
    assert result.best_learning_rate == 0.001
    assert result.best_dropout == 0.1


def test_grid_defaults_match_configured_ranges():
    assert GRID_LEARNING_RATES == (0.0001, 0.001, 0.0005, 0.00005)
    assert GRID_DROPOUTS == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


# ---------------------------------------------------------------------------
# persistence

def test_model_save_load_same_predictions(tmp_path):
    examples = _examples(10, seed=11)
    for kind, ctx in ((ModelKind.NO_CONTEXT, 0), (ModelKind.CONTEXT, 2)):
        model = build_model(kind, dimension=16, hidden=8, ff_hidden=12)
        batch = _examples(6, seed=12, with_context=ctx)
        path = tmp_path / f"{kind.value}.ckpt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.kind == kind
        np.testing.assert_array_equal(predict_batch(model, batch).data,
                                      predict_batch(loaded, batch).data)


def test_dataset_round_trip(tmp_path):
    examples = _examples(12, seed=13, with_context=3)
    examples += _examples(5, seed=14, targets=False)
    examples = [EmbeddedExample(paper_id=f"u{i}", paper_embedding=e.paper_embedding,
                                context_embeddings=e.context_embeddings,
                                target=e.target, publication_date=e.publication_date)
                for i, e in enumerate(examples)]
    path = tmp_path / "data.bin"
    save_embedded_dataset(examples, path)
    loaded = load_embedded_dataset(path)
    assert len(loaded) == len(examples)
    for a, b in zip(examples, loaded):
        assert a.paper_id == b.paper_id
        assert a.publication_date == b.publication_date
        np.testing.assert_array_equal(a.paper_embedding, b.paper_embedding)
        assert len(a.context_embeddings) == len(b.context_embeddings)
        for ca, cb in zip(a.context_embeddings, b.context_embeddings):
            np.testing.assert_array_equal(ca, cb)
        if a.target is None:
            assert b.target is None
        else:
            assert a.target == pytest.approx(b.target, rel=1e-12)


def test_dataset_file_is_deterministic(tmp_path):
    examples = _examples(8, seed=15)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_embedded_dataset(examples, p1)
    save_embedded_dataset(examples, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_history_json_lines(tmp_path):
    history = [{"epoch": 0, "train_loss": 1.0, "val_loss": 2.0},
               {"epoch": 1, "train_loss": 0.5, "val_loss": 1.5}]
    path = tmp_path / "h.jsonl"
    write_history(history, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows == history


def test_default_train_configs():
    nc = default_train_config(ModelKind.NO_CONTEXT)
    assert (nc.epochs, nc.batch_size) == (100, 256)
    cx = default_train_config(ModelKind.CONTEXT)
    assert (cx.epochs, cx.batch_size) == (50, 128)
