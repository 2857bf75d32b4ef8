"""Evaluation tests: metric oracles, agreement, significance, ablation,
baselines."""

from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ean.corpus import (
    AnnotationSet,
    DataError,
    Example,
    SyntheticConfig,
    build_vocabulary,
    generate_synthetic,
    mask_chunks,
    random_embeddings,
)
from ean.evaluation.ablation import _example_cost, leave_one_out
from ean.evaluation.agreement import (
    krippendorff_alpha,
    mcnemar,
    mean_human_performance,
)
from ean.evaluation.baselines import (
    SigmoidBowBaseline,
    _tune_threshold,
    baseline_rnn_predictor,
    baseline_sigmoid_bow,
    baseline_sigmoid_generator,
)
from ean.evaluation.metrics import (
    MetricsReport,
    metrics_report,
    phrasewise_prf,
    prediction_metrics,
    render_table,
    tokenwise_prf,
)
from ean.training import TrainingConfig, build_bundle, train


# -- brute-force oracles, kept deliberately independent of the implementations


def oracle_tokenwise(golds, preds):
    tp = fp = fn = 0
    for g, p in zip(golds, preds):
        for gv, pv in zip(g, p):
            if gv == 1 and pv == 1:
                tp += 1
            if gv == 0 and pv == 1:
                fp += 1
            if gv == 1 and pv == 0:
                fn += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def oracle_chunks(mask):
    chunks, current = [], []
    for i, v in enumerate(mask):
        if v == 1:
            current.append(i)
        elif current:
            chunks.append(current)
            current = []
    if current:
        chunks.append(current)
    return chunks


def oracle_phrasewise(golds, preds):
    # recall: every token of a partially captured gold chunk is recalled;
    # precision: predicted chunks counted correct on any gold overlap
    recalled = gold_tokens = correct = total_pred = 0
    for g, p in zip(golds, preds):
        for chunk in oracle_chunks(g):
            gold_tokens += len(chunk)
            if any(p[i] == 1 for i in chunk):
                recalled += len(chunk)
        for chunk in oracle_chunks(p):
            total_pred += 1
            if any(g[i] == 1 for i in chunk):
                correct += 1
    prec = correct / total_pred if total_pred else 0.0
    rec = recalled / gold_tokens if gold_tokens else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def random_mask_pairs(rng, n_pairs=50):
    pairs = []
    for _ in range(n_pairs):
        length = int(rng.integers(1, 15))
        gold = (rng.random(length) < rng.uniform(0.1, 0.7)).astype(int)
        pred = (rng.random(length) < rng.uniform(0.1, 0.7)).astype(int)
        pairs.append((gold, pred))
    return pairs


class TestTokenwise:
    def test_worked_example(self):
        p, r, f1 = tokenwise_prf([[1, 1, 0, 0]], [[1, 0, 0, 1]])
        assert (p, r, f1) == (0.5, 0.5, 0.5)

    def test_perfect(self):
        assert tokenwise_prf([[1, 0, 1]], [[1, 0, 1]]) == (1.0, 1.0, 1.0)

    def test_zero_denominators(self):
        assert tokenwise_prf([[0, 0]], [[0, 0]]) == (0.0, 0.0, 0.0)

    def test_matches_oracle_on_random_instances(self, rng):
        pairs = random_mask_pairs(rng)
        golds = [g for g, _ in pairs]
        preds = [p for _, p in pairs]
        assert tokenwise_prf(golds, preds) == oracle_tokenwise(golds, preds)


class TestPhrasewise:
    def test_partial_capture_counts(self):
        gold = [[0, 0, 0, 1, 1, 1, 1, 1, 0]]  # chunk: tokens 3..7
        pred = [[0, 0, 0, 0, 0, 1, 0, 0, 0]]  # only token 5 predicted
        p, r, f1 = phrasewise_prf(gold, pred)
        assert r == 1.0 and p == 1.0 and f1 == 1.0

    def test_no_predictions(self):
        p, r, f1 = phrasewise_prf([[1, 1, 0]], [[0, 0, 0]])
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_matches_oracle_on_random_instances(self, rng):
        pairs = random_mask_pairs(rng)
        golds = [g for g, _ in pairs]
        preds = [p for _, p in pairs]
        assert phrasewise_prf(golds, preds) == oracle_phrasewise(golds, preds)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_phrase_recall_at_least_token_recall(self, seed):
        rng = np.random.default_rng(seed)
        pairs = random_mask_pairs(rng, n_pairs=5)
        golds = [g for g, _ in pairs]
        preds = [p for _, p in pairs]
        _, tok_r, _ = tokenwise_prf(golds, preds)
        _, phr_r, _ = phrasewise_prf(golds, preds)
        assert phr_r >= tok_r


class TestPredictionMetrics:
    def test_perfect(self):
        mse, acc, f1 = prediction_metrics([0.9, 0.1], [0.9, 0.1])
        assert mse == 0.0 and acc == 1.0 and f1 == 1.0

    def test_constant_default_on_matching_targets(self):
        mse, acc, _ = prediction_metrics([0.05, 0.05], [0.05, 0.05])
        assert mse == 0.0 and acc == 1.0

    def test_hand_computed(self):
        preds = [0.8, 0.3, 0.6, 0.2]
        targets = [0.9, 0.1, 0.2, 0.8]
        mse, acc, f1 = prediction_metrics(preds, targets)
        assert mse == pytest.approx(np.mean([0.01, 0.04, 0.16, 0.36]))
        # thresholded: preds -> [1,0,1,0], targets -> [1,0,0,1]
        assert acc == 0.5
        assert f1 == pytest.approx(0.5)  # tp=1, fp=1, fn=1


class TestMetricsReportDerived:
    def test_f1_is_harmonic_mean_and_bounded(self, rng):
        pairs = random_mask_pairs(rng, 20)
        golds = [g for g, _ in pairs]
        preds = [p for _, p in pairs]
        report = metrics_report(golds, preds, rng.random(20), rng.random(20))
        for p, r, f1 in ((report.token_precision, report.token_recall, report.token_f1),
                         (report.phrase_precision, report.phrase_recall, report.phrase_f1)):
            expected = 2 * p * r / (p + r) if p + r else 0.0
            assert f1 == pytest.approx(expected)
            assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= f1 <= 1.0

    def test_render_table_alignment(self):
        report = MetricsReport(*([0.5] * 9), *([1] * 7))
        table = render_table([("model", report), ("other", {"mse": 0.1})])
        lines = table.splitlines()
        assert len({len(line) for line in lines[:2]}) == 1
        assert "    0.500" in lines[2]
        assert "        -" in lines[3]


class TestKrippendorff:
    def test_identical_annotators(self):
        sets = [AnnotationSet("a", ((1, 0, 1), (1, 0, 1), (1, 0, 1)))]
        assert krippendorff_alpha(sets, unit="token") == 1.0

    def test_hand_computed_comment_level(self):
        # units: [1,1,0] and [0,0,1] -> alpha = -1/9
        sets = [
            AnnotationSet("a", ((1, 0), (1, 1), (0, 0))),
            AnnotationSet("b", ((0, 0), (0, 0), (0, 1))),
        ]
        assert krippendorff_alpha(sets, unit="comment") == pytest.approx(-1 / 9)

    def test_hand_computed_token_level(self):
        # one set, masks [1,0,1] and [1,1,0] -> alpha = -0.25
        sets = [AnnotationSet("a", ((1, 0, 1), (1, 1, 0)))]
        assert krippendorff_alpha(sets, unit="token") == pytest.approx(-0.25)

    def test_independent_random_annotations_near_zero(self):
        rng = np.random.default_rng(3)
        sets = [
            AnnotationSet(str(i), tuple(tuple(rng.integers(0, 2, 4)) for _ in range(3)))
            for i in range(2500)
        ]
        assert abs(krippendorff_alpha(sets, unit="token")) < 0.05

    def test_single_annotator_rejected(self):
        with pytest.raises(DataError):
            krippendorff_alpha([AnnotationSet("a", ((1, 0),))])

    def test_annotator_and_unit_order_invariance(self, rng):
        masks = tuple(tuple(rng.integers(0, 2, 5)) for _ in range(4))
        sets = [AnnotationSet("a", masks), AnnotationSet("b", masks[::-1])]
        flipped = [AnnotationSet("b", masks[::-1]), AnnotationSet("a", masks)]
        for unit in ("token", "comment"):
            assert krippendorff_alpha(sets, unit) == pytest.approx(
                krippendorff_alpha(flipped, unit))


class TestMcNemar:
    def test_balanced_discordance_p_one(self):
        a = [True] * 5 + [False] * 5
        b = [False] * 5 + [True] * 5
        stat, p = mcnemar(a, b)
        assert p == 1.0

    def test_ten_zero_closed_form(self):
        a = [True] * 10 + [True] * 5
        b = [False] * 10 + [True] * 5
        stat, p = mcnemar(a, b)
        assert stat == 0
        assert p == pytest.approx(2 * 0.5**10)

    def test_no_discordance(self):
        stat, p = mcnemar([True, False], [True, False])
        assert (stat, p) == (0, 1.0)

    @given(st.integers(0, 8), st.integers(0, 8))
    @settings(max_examples=40, deadline=None)
    def test_matches_exact_enumeration(self, b_count, c_count):
        a = [True] * b_count + [False] * c_count
        b = [False] * b_count + [True] * c_count
        _, p = mcnemar(a, b)
        n = b_count + c_count
        if n == 0:
            assert p == 1.0
            return
        # enumerate all 2^n splits of the discordant pairs
        k = min(b_count, c_count)
        tail = sum(comb(n, j) for j in range(k + 1)) / 2**n
        assert p == pytest.approx(min(1.0, 2 * tail))


class TestMeanHumanPerformance:
    def test_identical_annotators_perfect(self):
        sets = [AnnotationSet("a", ((1, 0, 1), (1, 0, 1), (1, 0, 1)))]
        result = mean_human_performance(sets)
        assert result["tokenwise"] == (1.0, 1.0, 1.0)
        assert result["phrasewise"] == (1.0, 1.0, 1.0)

    def test_silent_annotator_zero_recall(self):
        # 4 annotators so each leave-one-out majority of 3 is decisive
        sets = [AnnotationSet("a", ((0, 0, 0), (1, 1, 0), (1, 1, 0), (1, 1, 0)))]
        result = mean_human_performance(sets)
        # silent annotator scores 0/0/0; the other three score 1/1/1
        assert result["tokenwise"] == pytest.approx((0.75, 0.75, 0.75))

    def test_hand_computed_three_annotators(self):
        sets = [AnnotationSet("a", ((1, 1, 0, 0), (1, 0, 1, 0), (1, 0, 0, 0)))]
        result = mean_human_performance(sets)
        assert result["tokenwise"] == pytest.approx((2 / 3, 1.0, 7 / 9))
        assert result["phrasewise"] == pytest.approx((5 / 6, 1.0, 8 / 9))

    def test_no_pairable_sets_rejected(self):
        with pytest.raises(DataError):
            mean_human_performance([AnnotationSet("a", ((1, 0),))])


def _steered_bundle():
    """Bundle whose sigmoid generator deterministically selects attack tokens
    and one filler type, so rationales have predictable chunks."""
    examples = [
        Example(id="two-chunks",
                tokens=("atk0", "atk1", "w1", "w2", "w0", "w0", "w0", "w0"),
                target=0.9),
        Example(id="one-chunk", tokens=("atk0", "atk1", "w1", "w2"), target=0.9),
    ]
    vocab = build_vocabulary(examples, 1)
    config = TrainingConfig(epochs=1, batch_size=2, hidden_size=4, embedding_dim=3,
                            lambda1=0.5, lambda2=2.0, lambda3=0.0, inverse=False,
                            generator_kind="sigmoid", bias_mode="fixed", seed=0)
    emb = random_embeddings(vocab, 3, seed=0)
    matrix = emb.matrix.copy()
    for token in ("atk0", "atk1", "w0"):
        matrix[vocab.index_of(token), 0] = 60.0   # gate saturates open
    for token in ("w1", "w2"):
        matrix[vocab.index_of(token), 0] = -60.0  # gate saturates closed
    bundle = build_bundle(vocab, type(emb)(matrix=matrix), config)
    bundle.generator.params["head_w"].data[:] = 0.0
    bundle.generator.params["head_w"].data[0, 0] = 1.0
    bundle.generator.params["head_b"].data[:] = 0.0
    return bundle, examples


class TestLeaveOneOut:
    def test_single_chunk_rationale_contributes_nothing(self):
        bundle, examples = _steered_bundle()
        report = leave_one_out(bundle, [examples[1]])
        assert report.candidates == 0 and report.rationales == 0
        assert report.improving_fraction == 0.0 and report.mean_delta == 0.0

    def test_multi_chunk_rationale_counts(self):
        bundle, examples = _steered_bundle()
        report = leave_one_out(bundle, examples)
        assert report.rationales == 1
        assert report.candidates == 2

    def test_removing_filler_chunk_improves_cost(self):
        # chunk over w0 fillers costs lam1 * 4 = 2.0 in sparsity, which
        # outweighs any possible squared-error change
        bundle, examples = _steered_bundle()
        (batch,) = __import__("ean.corpus", fromlist=["eval_batches"]).eval_batches(
            [examples[0]], bundle.vocab, 2)
        embeds = bundle.embed(batch)
        mask = (bundle.generator.probabilities(embeds, batch.pad) >= 0.5).astype(float)
        base = _example_cost(bundle, embeds, batch.pad, 0.9, mask)
        reduced = mask.copy()
        reduced[0, 4:8] = 0.0
        after = _example_cost(bundle, embeds, batch.pad, 0.9, reduced)
        assert after < base

    def test_zero_removal_recomputation_is_exact(self):
        bundle, examples = _steered_bundle()
        (batch,) = __import__("ean.corpus", fromlist=["eval_batches"]).eval_batches(
            [examples[0]], bundle.vocab, 2)
        embeds = bundle.embed(batch)
        mask = (bundle.generator.probabilities(embeds, batch.pad) >= 0.5).astype(float)
        first = _example_cost(bundle, embeds, batch.pad, 0.9, mask)
        second = _example_cost(bundle, embeds, batch.pad, 0.9, mask)
        assert first == second


class TestSigmoidBow:
    def _toy(self, n=40):
        # "bad" determines the target exactly; linearly separable counts
        rng = np.random.default_rng(0)
        examples = []
        for i in range(n):
            toks = ["nice", "day", "friend"][: int(rng.integers(1, 4))]
            if i % 2 == 0:
                toks = toks + ["bad"]
                target = 1.0
            else:
                target = 0.0
            gold = tuple(1 if t == "bad" else 0 for t in toks)
            examples.append(Example(id=str(i), tokens=tuple(toks), target=target,
                                    gold_mask=gold))
        return examples

    def test_linearly_separable_accuracy_one(self):
        examples = self._toy()
        model = baseline_sigmoid_bow(examples, examples, epochs=200, seed=1)
        preds = model.predict(examples)
        targets = np.array([ex.target for ex in examples])
        _, acc, _ = prediction_metrics(preds, targets)
        assert acc == 1.0

    def test_infinite_threshold_empty_rationales(self):
        examples = self._toy(8)
        model = SigmoidBowBaseline(
            vocab=build_vocabulary(examples, 1),
            weights=np.ones(12), bias=0.0, threshold=np.inf)
        for mask in model.rationales(examples):
            assert not mask.any()

    def test_threshold_sweep_matches_bruteforce(self, rng):
        examples = self._toy(30)
        vocab = build_vocabulary(examples, 1)
        weights = rng.normal(size=len(vocab))
        threshold, best_f1 = _tune_threshold(vocab, weights, examples)

        def f1_at(theta):
            masks = [(weights[vocab.encode(ex.tokens)] > theta).astype(int)
                     for ex in examples]
            golds = [np.array(ex.gold_mask) for ex in examples]
            return tokenwise_prf(golds, masks)[2]

        candidates = [np.inf] + [w - 1e-9 for w in np.unique(weights)]
        brute = max(f1_at(theta) for theta in candidates)
        assert best_f1 == pytest.approx(brute)
        assert f1_at(threshold) == pytest.approx(brute)

    def test_tuned_model_marks_the_attack_word(self):
        examples = self._toy()
        model = baseline_sigmoid_bow(examples, examples, epochs=200, seed=1)
        masks = model.rationales(examples)
        for ex, mask in zip(examples, masks):
            np.testing.assert_array_equal(mask, np.array(ex.gold_mask))


@pytest.fixture(scope="module")
def small_synth():
    examples = generate_synthetic(SyntheticConfig(corpus_size=48, seed=21,
                                                  min_tokens=9, max_tokens=12))
    return examples[:32], examples[32:]


class TestNeuralBaselines:
    def _config(self):
        return TrainingConfig(epochs=2, batch_size=8, hidden_size=6,
                              embedding_dim=6, learning_rate=0.01, seed=3,
                              lambda1=0.01, lambda2=2.0, bias_mode="fixed")

    def test_rnn_predictor_deterministic(self, small_synth):
        train_ex, dev_ex = small_synth
        a = baseline_rnn_predictor(train_ex, dev_ex, self._config())
        b = baseline_rnn_predictor(train_ex, dev_ex, self._config())
        np.testing.assert_array_equal(a.predict(dev_ex), b.predict(dev_ex))

    def test_sigmoid_generator_bundle_interface(self, small_synth):
        from ean.training import predict_examples

        train_ex, dev_ex = small_synth
        bundle = baseline_sigmoid_generator(train_ex, dev_ex, self._config())
        assert bundle.config.generator_kind == "sigmoid"
        results = predict_examples(bundle, dev_ex)
        assert len(results) == len(dev_ex)
        again = baseline_sigmoid_generator(train_ex, dev_ex, self._config())
        for x, y in zip(results, predict_examples(again, dev_ex)):
            assert x.prediction == y.prediction
