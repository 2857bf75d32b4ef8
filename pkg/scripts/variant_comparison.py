"""Train the inverse and no-inverse variants on the synthetic corpus and
report rationale recall, precision, prediction accuracy, and the
leave-one-out chunk ablation for each.

Usage: python scripts/variant_comparison.py [--seeds 0 1 2] [--epochs 25] ...
"""

import argparse
import json
import time

import numpy as np

from ean.corpus import SyntheticConfig, build_vocabulary, generate_synthetic, random_embeddings
from ean.evaluation.ablation import leave_one_out
from ean.evaluation.metrics import prediction_metrics, tokenwise_prf
from ean.training import TrainingConfig, build_bundle, predict_examples, train


def evaluate(bundle, examples):
    results = predict_examples(bundle, examples, deterministic=True)
    golds = [np.array(ex.gold_mask) for ex in examples]
    masks = [r.mask for r in results]
    precision, recall, f1 = tokenwise_prf(golds, masks)
    preds = np.array([r.prediction for r in results])
    targets = np.array([ex.target for ex in examples])
    mse, accuracy, _ = prediction_metrics(preds, targets)
    return {"precision": precision, "recall": recall, "f1": f1,
            "mse": mse, "accuracy": accuracy}


def run_variant(train_ex, dev_ex, test_ex, vocab, emb, seed, inverse, args):
    config = TrainingConfig(
        lambda1=args.lambda1_inverse if inverse else args.lambda1,
        lambda2=args.lambda2,
        lambda3=1.0 if inverse else 0.0,
        inverse=inverse,
        bias_mode="fixed",
        epochs=args.epochs,
        batch_size=args.batch_size,
        hidden_size=args.hidden,
        embedding_dim=args.dim,
        learning_rate=args.lr,
        seed=seed,
    )
    bundle = build_bundle(vocab, emb, config)
    t0 = time.time()
    train(bundle, train_ex, dev_ex)
    elapsed = time.time() - t0
    scores = evaluate(bundle, test_ex)
    ablation = leave_one_out(bundle, test_ex)
    return {
        "variant": "inverse" if inverse else "no-inverse",
        "seed": seed,
        "seconds": round(elapsed, 1),
        **{k: round(v, 4) for k, v in scores.items()},
        "loo_fraction": round(ablation.improving_fraction, 4),
        "loo_candidates": ablation.candidates,
        "gen_loss_final": round(bundle.log[-1].gen_loss, 4),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--train-size", type=int, default=2000)
    ap.add_argument("--dev-size", type=int, default=400)
    ap.add_argument("--test-size", type=int, default=400)
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--lambda1", type=float, default=0.0075)
    ap.add_argument("--lambda1-inverse", type=float, default=0.0075)
    ap.add_argument("--lambda2", type=float, default=2.0)
    args = ap.parse_args()

    train_ex = generate_synthetic(SyntheticConfig(corpus_size=args.train_size, seed=100))
    dev_ex = generate_synthetic(SyntheticConfig(corpus_size=args.dev_size, seed=101))
    test_ex = generate_synthetic(SyntheticConfig(corpus_size=args.test_size, seed=102))
    vocab = build_vocabulary(train_ex, 1)
    emb = random_embeddings(vocab, args.dim, seed=100)

    rows = []
    for seed in args.seeds:
        for inverse in (False, True):
            row = run_variant(train_ex, dev_ex, test_ex, vocab, emb, seed, inverse, args)
            rows.append(row)
            print(json.dumps(row), flush=True)

    for variant in ("no-inverse", "inverse"):
        group = [r for r in rows if r["variant"] == variant]
        med = {k: float(np.median([r[k] for r in group]))
               for k in ("recall", "precision", "accuracy", "loo_fraction")}
        print(variant, json.dumps(med), flush=True)


if __name__ == "__main__":
    main()
