"""Training tests: objective assembly, interleaved step, determinism, grid."""

import json

import numpy as np
import pytest

from ean.compute import AdamState, adam_step, backward
from ean.corpus import (
    DataError,
    SyntheticConfig,
    build_vocabulary,
    generate_synthetic,
    make_batches,
    random_embeddings,
)
from ean.predictor import init_predictor, prediction_cost
from ean.training import (
    DEFAULT_GRID,
    EpochRow,
    ModelBundle,
    Trainer,
    TrainingConfig,
    build_bundle,
    config_hash,
    generator_cost,
    grid_cells,
    grid_search,
    load_config_file,
    make_config,
    predict_examples,
    run_grid_cell,
    train,
    train_step,
    write_epoch_log,
)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=8, hidden_size=6, embedding_dim=6,
                learning_rate=0.01, seed=1, lambda1=0.01, lambda2=2.0,
                lambda3=1.0, inverse=True, bias_mode="fixed")
    base.update(kw)
    return TrainingConfig(**base)


@pytest.fixture(scope="module")
def tiny_corpus():
    return generate_synthetic(SyntheticConfig(corpus_size=64, seed=5,
                                              min_tokens=9, max_tokens=12))


def tiny_bundle(examples, **kw):
    cfg = tiny_config(**kw)
    vocab = build_vocabulary(examples, 1)
    emb = random_embeddings(vocab, cfg.embedding_dim, cfg.seed)
    return build_bundle(vocab, emb, cfg)


class TestConfig:
    def test_defaults_are_valid(self):
        TrainingConfig()

    def test_odd_batch_rejected(self):
        with pytest.raises(DataError):
            TrainingConfig(batch_size=7)

    def test_lambda3_requires_inverse(self):
        with pytest.raises(DataError):
            TrainingConfig(lambda3=1.0, inverse=False)

    def test_inverse_defaults_lambda3_to_one(self):
        cfg = make_config({"inverse": "on"})
        assert cfg.inverse and cfg.lambda3 == 1.0

    def test_explicit_lambda3_wins(self):
        cfg = make_config({"inverse": "on", "lambda3": "0.5"})
        assert cfg.lambda3 == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(DataError):
            make_config({"momentum": "0.9"})

    def test_config_file_parse(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\nlambda1 = 0.0015\nepochs = 3  # trailing\n",
            encoding="utf-8")
        values = load_config_file(path)
        assert values == {"lambda1": "0.0015", "epochs": "3"}
        cfg = make_config(values)
        assert cfg.lambda1 == 0.0015 and cfg.epochs == 3

    def test_hash_stable_and_sensitive(self):
        a = config_hash(tiny_config())
        b = config_hash(tiny_config())
        c = config_hash(tiny_config(seed=2))
        assert a == b and a != c


class TestGeneratorCost:
    def test_zero_mask_drops_regularizers(self):
        pad = np.ones((1, 5))
        z = np.zeros((1, 5))
        cost = generator_cost(z, pad, np.array([0.05]), np.array([0.9]),
                              np.array([0.8]), 0.05, lam1=0.1, lam2=2.0, lam3=1.0)
        expected = (0.05 - 0.9) ** 2 + (0.8 - 0.05) ** 2
        assert cost[0] == pytest.approx(expected)

    def test_all_ones_sparsity_only(self):
        pad = np.ones((1, 10))
        z = np.ones((1, 10))
        cost = generator_cost(z, pad, np.array([0.9]), np.array([0.9]),
                              np.array([0.05]), 0.05, lam1=0.0015, lam2=2.0, lam3=1.0)
        assert cost[0] == pytest.approx(0.015)  # 10 tokens * 0.0015, zero transitions

    def test_lambda3_zero_reproduces_three_term_objective(self):
        pad = np.ones((1, 4))
        z = np.array([[0.0, 1.0, 1.0, 0.0]])
        with_inv = generator_cost(z, pad, np.array([0.5]), np.array([0.9]),
                                  np.array([0.9]), 0.05, 0.01, 2.0, 1.0)
        without = generator_cost(z, pad, np.array([0.5]), np.array([0.9]),
                                 np.array([0.9]), 0.05, 0.01, 2.0, 0.0)
        three_term = (0.5 - 0.9) ** 2 + 0.01 * 2 + 0.01 * 2.0 * 2
        assert without[0] == pytest.approx(three_term)
        assert with_inv[0] > without[0]

    def test_coherence_weight_is_product(self):
        pad = np.ones((1, 3))
        z = np.array([[1.0, 0.0, 1.0]])  # two transitions
        cost = generator_cost(z, pad, np.array([0.9]), np.array([0.9]),
                              np.array([0.05]), 0.05, lam1=0.003, lam2=2.0, lam3=0.0)
        assert cost[0] == pytest.approx(0.003 * 2 + 0.003 * 2.0 * 2)


class TestTrainStep:
    def test_one_step_changes_all_three_networks(self, tiny_corpus):
        bundle = tiny_bundle(tiny_corpus)
        before = {
            "gen": bundle.generator.params.to_json(),
            "f": bundle.predictor.params.to_json(),
            "f2": bundle.adversary.params.to_json(),
        }
        trainer = Trainer.create(bundle)
        (batch, *_rest) = make_batches(tiny_corpus, bundle.vocab, 8, seed=0)
        train_step(trainer, batch, epoch=1, batch_index=0)
        assert bundle.generator.params.to_json() != before["gen"]
        assert bundle.predictor.params.to_json() != before["f"]
        assert bundle.adversary.params.to_json() != before["f2"]

    def test_forced_ones_degenerates_to_plain_predictor_training(self, tiny_corpus):
        # the coupled loop with z forced to all-ones must move f exactly as a
        # standalone predictor trained on fully visible text
        cfg = tiny_config(lambda1=0.0, lambda2=0.0, lambda3=0.0, inverse=False)
        vocab = build_vocabulary(tiny_corpus, 1)
        emb = random_embeddings(vocab, cfg.embedding_dim, cfg.seed)
        bundle = build_bundle(vocab, emb, cfg)
        standalone = init_predictor(cfg.embedding_dim, cfg.hidden_size, cfg.seed + 1,
                                    bias_mode=cfg.bias_mode,
                                    default_value=cfg.default_value)
        opt = AdamState.for_params(standalone.params, alpha=cfg.learning_rate)

        trainer = Trainer.create(bundle)
        batches = make_batches(tiny_corpus, vocab, cfg.batch_size, seed=[cfg.seed, 1, 1])
        for index, batch in enumerate(batches):
            train_step(trainer, batch, epoch=1, batch_index=index, force_mask="ones")
            order = np.argsort(batch.targets, kind="stable")
            sorted_batch = batch.reorder(order)
            embeds = bundle.embed(sorted_batch)
            standalone.params.zero_grad()
            loss = prediction_cost(standalone.predict_node(embeds, sorted_batch.pad),
                                   sorted_batch.targets)
            backward(loss)
            adam_step(standalone.params, opt, frozen=standalone.frozen())
        assert bundle.predictor.params.to_json() == standalone.params.to_json()

    def test_fixed_bias_never_moves(self, tiny_corpus):
        bundle = tiny_bundle(tiny_corpus)
        original = bundle.predictor.params["out_b"].data.copy()
        train(bundle, tiny_corpus[:32], None)
        np.testing.assert_array_equal(bundle.predictor.params["out_b"].data, original)
        np.testing.assert_array_equal(bundle.adversary.params["out_b"].data, original)


class TestTrain:
    def test_empty_corpus_rejected(self, tiny_corpus):
        bundle = tiny_bundle(tiny_corpus)
        with pytest.raises(DataError):
            train(bundle, [], None)

    def test_log_has_one_row_per_epoch(self, tiny_corpus):
        bundle = tiny_bundle(tiny_corpus, epochs=3)
        train(bundle, tiny_corpus[:32], tiny_corpus[32:48])
        assert [row.epoch for row in bundle.log] == [1, 2, 3]

    def test_fixed_seed_reproduces_bitwise(self, tiny_corpus):
        runs = []
        for _ in range(2):
            bundle = tiny_bundle(tiny_corpus)
            train(bundle, tiny_corpus[:32], tiny_corpus[32:48])
            runs.append((bundle.generator.params.to_json(),
                         bundle.predictor.params.to_json(),
                         bundle.adversary.params.to_json(),
                         [vars(r) for r in bundle.log]))
        assert runs[0] == runs[1]

    def test_best_epoch_snapshot_restored(self, tiny_corpus):
        bundle = tiny_bundle(tiny_corpus, epochs=3)
        train(bundle, tiny_corpus[:32], tiny_corpus[32:48])
        best = max(bundle.log, key=lambda row: row.dev_token_f1)
        # retrain a clone for best.epoch epochs only; params must match
        clone = tiny_bundle(tiny_corpus, epochs=best.epoch)
        train(clone, tiny_corpus[:32], tiny_corpus[32:48])
        assert clone.predictor.params.to_json() == bundle.predictor.params.to_json()

    def test_epoch_log_csv(self, tmp_path):
        rows = [EpochRow(1, 0.5, 0.1, 0.2, 0.3, 0.05)]
        path = tmp_path / "log.csv"
        write_epoch_log(rows, path)
        text = path.read_text(encoding="utf-8").splitlines()
        assert text[0] == "epoch,gen_loss,f_loss,f2_loss,dev_token_f1,dev_mse"
        assert text[1].startswith("1,0.5,0.1,0.2,0.3,0.05")


class TestBundleSerialization:
    def test_round_trip(self, tiny_corpus, tmp_path):
        bundle = tiny_bundle(tiny_corpus)
        train(bundle, tiny_corpus[:16], None)
        path = tmp_path / "model.json"
        bundle.save(path)
        restored = ModelBundle.load(path)
        assert restored.config == bundle.config
        for name in bundle.generator.params.names():
            np.testing.assert_array_equal(
                restored.generator.params[name].data,
                bundle.generator.params[name].data)
        np.testing.assert_array_equal(restored.embeddings.matrix,
                                      bundle.embeddings.matrix)
        assert restored.vocab.itos == bundle.vocab.itos
        # restored bundle predicts identically
        a = predict_examples(bundle, tiny_corpus[:4])
        b = predict_examples(restored, tiny_corpus[:4])
        for x, y in zip(a, b):
            assert x.prediction == y.prediction
            np.testing.assert_array_equal(x.mask, y.mask)

    def test_format_guard(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "something-else"}), encoding="utf-8")
        with pytest.raises(DataError):
            ModelBundle.load(path)


class TestGrid:
    def test_default_grid_has_42_cells(self):
        cells = grid_cells(DEFAULT_GRID)
        assert len(cells) == 7 * 3 * 2 == 42
        assert cells[0] == {"lambda1": 0.0003, "lambda2": 0.0, "lambda3": 0.0}

    def test_selection_returns_argmax(self, tiny_corpus):
        base = tiny_config(epochs=1, lambda3=0.0, inverse=False)
        grid = {"lambda1": [0.001, 0.01]}
        result = grid_search(tiny_corpus[:32], tiny_corpus[32:48], base, grid)
        best = result.rows[result.best_index]
        assert best["dev_token_f1"] == max(r["dev_token_f1"] for r in result.rows)

    def test_cells_are_order_independent(self, tiny_corpus):
        base = tiny_config(epochs=1, lambda3=0.0, inverse=False)
        vocab = build_vocabulary(tiny_corpus[:32], 1)
        emb = random_embeddings(vocab, base.embedding_dim, base.seed)
        cells = grid_cells({"lambda1": [0.001, 0.01]})
        forward = [run_grid_cell(c, i, base, vocab, emb, tiny_corpus[:32],
                                 tiny_corpus[32:48]) for i, c in enumerate(cells)]
        backward_rows = [run_grid_cell(cells[i], i, base, vocab, emb,
                                       tiny_corpus[:32], tiny_corpus[32:48])
                         for i in reversed(range(len(cells)))]
        assert forward == list(reversed(backward_rows))

    def test_resume_skips_completed_cells(self, tiny_corpus):
        base = tiny_config(epochs=1, lambda3=0.0, inverse=False)
        grid = {"lambda1": [0.001, 0.01]}
        sentinel = {"cell": 0, "lambda1": 0.001, "seed": 0,
                    "dev_token_f1": 0.99, "dev_mse": 0.0}
        result = grid_search(tiny_corpus[:32], tiny_corpus[32:48], base, grid,
                             completed={0: sentinel})
        assert result.rows[0] is sentinel
        assert result.best_index == 0

    def test_lambda3_cell_switches_inverse(self, tiny_corpus):
        base = tiny_config(epochs=1, lambda3=0.0, inverse=False)
        vocab = build_vocabulary(tiny_corpus[:16], 1)
        emb = random_embeddings(vocab, base.embedding_dim, base.seed)
        row = run_grid_cell({"lambda1": 0.001, "lambda3": 1.0}, 0, base, vocab, emb,
                            tiny_corpus[:16], tiny_corpus[16:24])
        assert row["lambda3"] == 1.0
