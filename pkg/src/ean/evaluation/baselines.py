"""Non-adversarial baselines: bag-of-words logistic predictor with
coefficient-threshold rationales, the bare sequence predictor, and the
context-free sigmoid-generator variant of the full model."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..compute import ParameterSet, AdamState, adam_step, backward, sigmoid_values
from ..corpus import build_vocabulary, eval_batches, random_embeddings
from ..training import build_bundle, train
from .metrics import tokenwise_prf


@dataclass
class SigmoidBowBaseline:
    """Logistic regression on token counts; rationales come from thresholding
    the learned coefficients."""

    vocab: object
    weights: np.ndarray   # (V,)
    bias: float
    threshold: float

    def features(self, examples):
        x = np.zeros((len(examples), len(self.vocab)))
        for i, ex in enumerate(examples):
            for idx in self.vocab.encode(ex.tokens):
                x[i, idx] += 1.0
        return x

    def predict(self, examples):
        return sigmoid_values(self.features(examples) @ self.weights + self.bias)

    def rationales(self, examples):
        selected = self.weights > self.threshold
        return [selected[self.vocab.encode(ex.tokens)].astype(np.int64) for ex in examples]


def _tune_threshold(vocab, weights, dev_examples):
    """Pick the coefficient cutoff maximizing dev tokenwise F1.

    Candidate masks are nested by coefficient rank, so every candidate F1
    follows from per-type occurrence and gold counts.
    """
    n_types = len(vocab)
    occurrences = np.zeros(n_types)
    gold_hits = np.zeros(n_types)
    for ex in dev_examples:
        if ex.gold_mask is None:
            continue
        ids = vocab.encode(ex.tokens)
        for idx, g in zip(ids, ex.gold_mask):
            occurrences[idx] += 1.0
            gold_hits[idx] += float(g)
    total_gold = gold_hits.sum()

    best_threshold, best_f1 = np.inf, 0.0  # +inf keeps rationales empty
    tp = fp = 0.0
    order = np.argsort(-weights, kind="stable")
    distinct = sorted(set(weights.tolist()), reverse=True)
    pos = 0
    for rank, cutoff in enumerate(distinct):
        while pos < n_types and weights[order[pos]] >= cutoff:
            idx = order[pos]
            tp += gold_hits[idx]
            fp += occurrences[idx] - gold_hits[idx]
            pos += 1
        fn = total_gold - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if f1 > best_f1:
            best_f1 = f1
            # pick a threshold so that `weight > threshold` selects exactly
            # the types at or above this cutoff
            if rank + 1 < len(distinct):
                best_threshold = 0.5 * (cutoff + distinct[rank + 1])
            else:
                best_threshold = cutoff - 1.0
    return best_threshold, best_f1


def baseline_sigmoid_bow(train_examples, dev_examples, epochs=60,
                         learning_rate=0.05, batch_size=256, seed=0,
                         min_count=1):
    """Train the bag-of-words predictor and tune its rationale threshold."""
    vocab = build_vocabulary(train_examples, min_count)
    params = ParameterSet()
    rng = np.random.default_rng([int(seed), 12])
    params.add("w", rng.uniform(-0.01, 0.01, size=(len(vocab), 1)))
    params.add("b", np.zeros(1))
    opt = AdamState.for_params(params, alpha=learning_rate)

    base = SigmoidBowBaseline(vocab=vocab, weights=params["w"].data.ravel(),
                              bias=0.0, threshold=np.inf)
    x_all = base.features(train_examples)
    y_all = np.array([ex.target for ex in train_examples]).reshape(-1, 1)
    order_rng = np.random.default_rng([int(seed), 13])
    for _ in range(epochs):
        order = order_rng.permutation(len(train_examples))
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            pred = (x_all[rows] @ params["w"] + params["b"]).sigmoid()
            diff = pred - y_all[rows]
            loss = (diff * diff).mean()
            params.zero_grad()
            backward(loss)
            adam_step(params, opt)

    weights = params["w"].data.ravel().copy()
    threshold, _ = _tune_threshold(vocab, weights, dev_examples)
    return SigmoidBowBaseline(vocab=vocab, weights=weights,
                              bias=float(params["b"].data[0]), threshold=threshold)


@dataclass
class RnnPredictorBaseline:
    """The sequence predictor alone: every real token visible, no generator."""

    bundle: object

    def predict(self, examples):
        preds = []
        for batch in eval_batches(examples, self.bundle.vocab, self.bundle.config.batch_size):
            embeds = self.bundle.embed(batch)
            preds.extend(self.bundle.predictor.predict(embeds, batch.pad))
        return np.array(preds)


def baseline_rnn_predictor(train_examples, dev_examples, config,
                           vocab=None, embeddings=None):
    """Train the predictor with the mask forced to all ones."""
    config = replace(config, lambda1=0.0, lambda2=0.0, lambda3=0.0, inverse=False)
    vocab = vocab or build_vocabulary(train_examples, config.min_count)
    embeddings = embeddings or random_embeddings(vocab, config.embedding_dim, config.seed)
    bundle = build_bundle(vocab, embeddings, config)
    train(bundle, train_examples, dev_examples, force_mask="ones")
    return RnnPredictorBaseline(bundle=bundle)


def baseline_sigmoid_generator(train_examples, dev_examples, config,
                               vocab=None, embeddings=None):
    """Full training loop with the recurrent generator swapped for a
    per-token logistic gate on the embedding; the interface is the main
    model's."""
    config = replace(config, generator_kind="sigmoid")
    vocab = vocab or build_vocabulary(train_examples, config.min_count)
    embeddings = embeddings or random_embeddings(vocab, config.embedding_dim, config.seed)
    bundle = build_bundle(vocab, embeddings, config)
    train(bundle, train_examples, dev_examples)
    return bundle


def rationale_f1(masks, examples):
    """Tokenwise F1 of predicted masks against the examples' gold masks."""
    golds = [np.array(ex.gold_mask) for ex in examples if ex.gold_mask is not None]
    preds = [m for ex, m in zip(examples, masks) if ex.gold_mask is not None]
    return tokenwise_prf(golds, preds)[2]
