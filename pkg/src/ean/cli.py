"""Command-line entry points: train, eval, rationalize, synth, grid.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import html
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .compute import NumericError
from .corpus import (
    DataError,
    SyntheticConfig,
    attach_gold,
    build_vocabulary,
    generate_synthetic,
    load_embeddings,
    load_tsv,
    random_embeddings,
    save_tsv,
    write_standoff,
)
from .evaluation.ablation import leave_one_out
from .evaluation.metrics import metrics_report, prediction_metrics, render_table
from .training import (
    ModelBundle,
    TrainingConfig,
    build_bundle,
    config_to_text,
    grid_cells,
    load_config_file,
    make_config,
    predict_examples,
    run_grid_cell,
    train,
    write_epoch_log,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class RationaleRecord:
    """One rationalized comment, ready for JSONL or HTML rendering."""

    id: str
    tokens: tuple
    probs: tuple
    mask: tuple
    prediction: float
    gold_mask: tuple | None = None

    def to_json(self):
        doc = asdict(self)
        doc["tokens"] = list(doc["tokens"])
        doc["probs"] = [float(p) for p in doc["probs"]]
        doc["mask"] = [int(m) for m in doc["mask"]]
        if doc["gold_mask"] is not None:
            doc["gold_mask"] = [int(m) for m in doc["gold_mask"]]
        return doc


def _add_config_flags(parser):
    for f in fields(TrainingConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                            default=None, metavar="V")


def _collect_config(args, file_path=None):
    overrides = {}
    if file_path:
        overrides.update(load_config_file(file_path))
    for f in fields(TrainingConfig):
        value = getattr(args, f"cfg_{f.name}", None)
        if value is not None:
            overrides[f.name] = value
    return make_config(overrides)


def _load_examples(path, gold_path=None):
    examples = load_tsv(path)
    if gold_path:
        examples = attach_gold(examples, gold_path)
    return examples


def build_parser():
    parser = _Parser(prog="ean", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train",
                             help="train a model and write its artifacts")
    p_train.add_argument("--data", required=True, help="training TSV")
    p_train.add_argument("--dev", help="development TSV")
    p_train.add_argument("--gold", help="combined standoff rationales for --data")
    p_train.add_argument("--dev-gold", help="combined standoff rationales for --dev")
    p_train.add_argument("--embeddings", help="word2vec text embeddings")
    p_train.add_argument("--config", help="flat key = value config file")
    p_train.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval",
                            help="evaluate a trained model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--test", required=True, help="test TSV")
    p_eval.add_argument("--gold", help="combined standoff rationales")
    p_eval.add_argument("--out", help="metrics JSON path")

    p_rat = sub.add_parser("rationalize",
                           help="emit highlighted rationales")
    p_rat.add_argument("--model", required=True)
    p_rat.add_argument("--input", required=True, help="input TSV")
    p_rat.add_argument("--jsonl", help="JSONL output path")
    p_rat.add_argument("--html", help="HTML output path")
    p_rat.add_argument("--gold", help="combined standoff rationales")
    p_rat.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                       default=True, help="threshold probabilities at 0.5 (default)")
    p_rat.add_argument("--seed", type=int, default=0, help="sampling seed")

    p_synth = sub.add_parser("synth",
                             help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True, help="output directory")
    for f in fields(SyntheticConfig):
        p_synth.add_argument(f"--{f.name.replace('_', '-')}", dest=f"syn_{f.name}",
                             default=None, metavar="V")
    # --size is the documented alias for --corpus-size
    p_synth.add_argument("--size", dest="syn_corpus_size_alias", default=None, metavar="V")

    p_grid = sub.add_parser("grid",
                            help="hyperparameter grid search")
    p_grid.add_argument("--data", required=True)
    p_grid.add_argument("--dev", required=True)
    p_grid.add_argument("--dev-gold", help="combined standoff rationales for --dev")
    p_grid.add_argument("--grid-file", help="key = v1, v2, ... per line")
    p_grid.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p_grid)
    return parser


def cmd_train(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _collect_config(args, args.config)
    train_examples = _load_examples(args.data, args.gold)
    dev_examples = _load_examples(args.dev, args.dev_gold) if args.dev else None

    vocab = build_vocabulary(train_examples, config.min_count)
    if args.embeddings:
        embeddings = load_embeddings(args.embeddings, vocab, seed=config.seed)
    else:
        embeddings = random_embeddings(vocab, config.embedding_dim, config.seed)
    bundle = build_bundle(vocab, embeddings, config)
    train(bundle, train_examples, dev_examples)

    bundle.save(out_dir / "model.json")
    (out_dir / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    write_epoch_log(bundle.log, out_dir / "log.csv")
    last = bundle.log[-1]
    print(f"trained {config.epochs} epochs; final generator loss {last.gen_loss:.4f}, "
          f"dev token F1 {last.dev_token_f1:.3f}; artifacts in {out_dir}")
    return EXIT_OK


def cmd_eval(args):
    bundle = ModelBundle.load(args.model)
    examples = _load_examples(args.test, args.gold)
    results = predict_examples(bundle, examples, deterministic=True)
    predictions = np.array([r.prediction for r in results])
    targets = np.array([ex.target for ex in examples])

    report = {"n_examples": len(examples)}
    golds = [np.array(ex.gold_mask) for ex in examples if ex.gold_mask is not None]
    masks = [r.mask for ex, r in zip(examples, results) if ex.gold_mask is not None]
    if golds:
        gold_targets = [ex.target for ex in examples if ex.gold_mask is not None]
        gold_preds = [r.prediction for ex, r in zip(examples, results)
                      if ex.gold_mask is not None]
        full = metrics_report(golds, masks, gold_preds, gold_targets)
        mse, accuracy, binary_f1 = prediction_metrics(predictions, targets)
        table_source = full.to_json() | {"mse": mse, "accuracy": accuracy,
                                         "binary_f1": binary_f1}
        report["rationale"] = full.to_json()
        report["ablation"] = leave_one_out(bundle, examples).to_json()
    else:
        mse, accuracy, binary_f1 = prediction_metrics(predictions, targets)
        table_source = {"mse": mse, "accuracy": accuracy, "binary_f1": binary_f1}
        report["rationale"] = None
        report["ablation"] = None
    report["prediction"] = {"mse": mse, "accuracy": accuracy, "binary_f1": binary_f1}

    print(render_table([("model", table_source)]))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _records(bundle, examples, deterministic, seed):
    results = predict_examples(bundle, examples, deterministic=deterministic, seed=seed)
    return [
        RationaleRecord(
            id=ex.id,
            tokens=ex.tokens,
            probs=tuple(res.probs.tolist()),
            mask=tuple(int(m) for m in res.mask),
            prediction=res.prediction,
            gold_mask=ex.gold_mask,
        )
        for ex, res in zip(examples, results)
    ]


_HTML_STYLE = """
body { font-family: sans-serif; max-width: 62em; margin: 2em auto; color: #222; }
.comment { margin: 1em 0; padding: .7em .9em; border: 1px solid #ddd; border-radius: 5px; }
.meta { color: #666; font-size: .85em; margin-bottom: .4em; }
mark { background: #ffd54d; padding: 0 2px; border-radius: 2px; }
.gold { text-decoration: underline dotted #c0392b 2px; }
"""


def render_html(records):
    """Single self-contained page: selected tokens highlighted, gold
    rationales (when known) dotted-underlined."""
    parts = [
        "<!doctype html>",
        '<html><head><meta charset="utf-8"><title>rationales</title>',
        f"<style>{_HTML_STYLE}</style></head><body>",
        "<h1>Model rationales</h1>",
    ]
    for rec in records:
        parts.append('<div class="comment">')
        parts.append(f'<div class="meta">{html.escape(rec.id)} '
                     f'&mdash; prediction {rec.prediction:.3f}</div>')
        rendered = []
        for i, token in enumerate(rec.tokens):
            safe = html.escape(token)
            if rec.gold_mask is not None and rec.gold_mask[i]:
                safe = f'<span class="gold">{safe}</span>'
            if rec.mask[i]:
                safe = f"<mark>{safe}</mark>"
            rendered.append(safe)
        parts.append("<p>" + " ".join(rendered) + "</p>")
        parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts)


def cmd_rationalize(args):
    if not args.jsonl and not args.html:
        raise UsageError("need at least one of --jsonl / --html")
    bundle = ModelBundle.load(args.model)
    examples = _load_examples(args.input, args.gold)
    records = _records(bundle, examples, args.deterministic, args.seed)
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_json()) + "\n")
    if args.html:
        Path(args.html).write_text(render_html(records), encoding="utf-8")
    print(f"rationalized {len(records)} comments")
    return EXIT_OK


def cmd_synth(args):
    overrides = {}
    for f in fields(SyntheticConfig):
        raw = getattr(args, f"syn_{f.name}", None)
        if raw is not None:
            kind = type(getattr(SyntheticConfig, f.name))
            overrides[f.name] = kind(raw)
    if args.syn_corpus_size_alias is not None:
        overrides["corpus_size"] = int(args.syn_corpus_size_alias)
    cfg = SyntheticConfig(**overrides)
    examples = generate_synthetic(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_tsv(examples, out_dir / "comments.tsv")
    write_standoff(examples, out_dir / "annotations.ann")
    positives = sum(1 for ex in examples if ex.target >= 0.5)
    print(f"wrote {len(examples)} comments ({positives} positive) to {out_dir}")
    return EXIT_OK


GRID_CSV_COLUMNS = ("cell", "lambda1", "lambda2", "lambda3", "seed",
                    "dev_token_f1", "dev_mse", "best")


def _load_grid_file(path):
    grid = {}
    for key, raw in load_config_file(path).items():
        grid[key] = [v.strip() for v in raw.split(",") if v.strip()]
    return grid


def cmd_grid(args):
    from .corpus import build_vocabulary as _bv

    out_dir = Path(args.out)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    base = _collect_config(args)
    grid = _load_grid_file(args.grid_file) if args.grid_file else None
    train_examples = _load_examples(args.data)
    dev_examples = _load_examples(args.dev, args.dev_gold)

    cells = grid_cells(grid)
    vocab = _bv(train_examples, base.min_count)
    embeddings = random_embeddings(vocab, base.embedding_dim, base.seed)
    rows = []
    for index, cell in enumerate(cells):
        cell_path = cells_dir / f"cell_{index:03d}.json"
        if cell_path.exists():
            rows.append(json.loads(cell_path.read_text(encoding="utf-8")))
            continue
        row = run_grid_cell(cell, index, base, vocab, embeddings,
                            train_examples, dev_examples)
        cell_path.write_text(json.dumps(row), encoding="utf-8")
        rows.append(row)
    best_index = max(range(len(rows)), key=lambda i: rows[i]["dev_token_f1"])

    with open(out_dir / "results.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_CSV_COLUMNS)
        for i, row in enumerate(rows):
            writer.writerow([row["cell"], row.get("lambda1", ""), row.get("lambda2", ""),
                             row.get("lambda3", ""), row["seed"],
                             row["dev_token_f1"], row["dev_mse"],
                             1 if i == best_index else 0])
    best = rows[best_index]
    print(f"{len(rows)} cells; best cell {best['cell']} "
          f"(dev token F1 {best['dev_token_f1']:.3f}); results in {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "rationalize": cmd_rationalize,
    "synth": cmd_synth,
    "grid": cmd_grid,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
