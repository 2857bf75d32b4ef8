"""Tokenwise and phrasewise rationale metrics plus prediction metrics.

All mask arguments are lists of 1-d binary arrays with padding already
stripped.  Zero-denominator precision/recall/F1 conventionally yield 0 so
aggregation never fails.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import mask_chunks


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def token_counts(gold_masks, predicted_masks):
    tp = fp = fn = 0
    for gold, pred in zip(gold_masks, predicted_masks, strict=True):
        gold = np.asarray(gold, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        if gold.shape != pred.shape:
            raise ValueError(f"mask shapes differ: {gold.shape} vs {pred.shape}")
        tp += int(np.sum((gold == 1) & (pred == 1)))
        fp += int(np.sum((gold == 0) & (pred == 1)))
        fn += int(np.sum((gold == 1) & (pred == 0)))
    return tp, fp, fn


def tokenwise_prf(gold_masks, predicted_masks):
    """Micro-averaged positive-class precision, recall, F1 over all tokens."""
    return _prf(*token_counts(gold_masks, predicted_masks))


def phrase_counts(gold_masks, predicted_masks):
    """Relaxed chunk-overlap counts.

    Returns (captured gold chunks, total gold chunks, correct predicted
    chunks, total predicted chunks, gold tokens inside captured chunks,
    total gold tokens).
    """
    captured = gold_total = correct = pred_total = 0
    recalled_tokens = gold_tokens = 0
    for gold, pred in zip(gold_masks, predicted_masks, strict=True):
        gold = np.asarray(gold, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        for start, end in mask_chunks(gold):
            gold_total += 1
            gold_tokens += end - start + 1
            if pred[start : end + 1].any():
                captured += 1
                recalled_tokens += end - start + 1
        for start, end in mask_chunks(pred):
            pred_total += 1
            if gold[start : end + 1].any():
                correct += 1
    return captured, gold_total, correct, pred_total, recalled_tokens, gold_tokens


def phrasewise_prf(gold_masks, predicted_masks):
    """Relaxed chunk-overlap metrics.

    Capturing any token of a contiguous gold chunk makes the whole chunk a
    true positive, so recall counts every gold token of a captured chunk as
    recalled (this is what guarantees phrasewise recall never falls below
    tokenwise recall).  Precision is counted over predicted chunks: a chunk
    is correct iff it overlaps at least one gold token.
    """
    _, _, correct, pred_total, recalled_tokens, gold_tokens = phrase_counts(
        gold_masks, predicted_masks)
    precision = correct / pred_total if pred_total else 0.0
    recall = recalled_tokens / gold_tokens if gold_tokens else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def prediction_metrics(predictions, targets, threshold=0.5):
    """MSE on the raw values; accuracy and binary F1 after thresholding both
    the prediction and the continuous target at ``threshold``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mse = float(np.mean((predictions - targets) ** 2))
    pred_pos = predictions >= threshold
    true_pos = targets >= threshold
    accuracy = float(np.mean(pred_pos == true_pos))
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    _, _, f1 = _prf(tp, fp, fn)
    return mse, accuracy, f1


@dataclass(frozen=True)
class MetricsReport:
    token_precision: float
    token_recall: float
    token_f1: float
    phrase_precision: float
    phrase_recall: float
    phrase_f1: float
    mse: float
    accuracy: float
    binary_f1: float
    token_tp: int
    token_fp: int
    token_fn: int
    gold_chunks_captured: int
    gold_chunks_total: int
    pred_chunks_correct: int
    pred_chunks_total: int

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def metrics_report(gold_masks, predicted_masks, predictions, targets):
    tp, fp, fn = token_counts(gold_masks, predicted_masks)
    tok_p, tok_r, tok_f1 = _prf(tp, fp, fn)
    captured, gold_total, correct, pred_total, _, _ = phrase_counts(
        gold_masks, predicted_masks)
    ph_p, ph_r, ph_f1 = phrasewise_prf(gold_masks, predicted_masks)
    mse, accuracy, binary_f1 = prediction_metrics(predictions, targets)
    return MetricsReport(
        token_precision=tok_p, token_recall=tok_r, token_f1=tok_f1,
        phrase_precision=ph_p, phrase_recall=ph_r, phrase_f1=ph_f1,
        mse=mse, accuracy=accuracy, binary_f1=binary_f1,
        token_tp=tp, token_fp=fp, token_fn=fn,
        gold_chunks_captured=captured, gold_chunks_total=gold_total,
        pred_chunks_correct=correct, pred_chunks_total=pred_total,
    )


_TABLE_COLUMNS = (
    ("Tok F1", "token_f1"), ("Tok Pr", "token_precision"), ("Tok Rec", "token_recall"),
    ("Phr F1", "phrase_f1"), ("Phr Pr", "phrase_precision"), ("Phr Rec", "phrase_recall"),
    ("MSE", "mse"), ("Acc", "accuracy"), ("F1", "binary_f1"),
)


def render_table(rows):
    """Aligned plain-text table of named metric reports.

    ``rows`` is a list of (model name, MetricsReport | dict) pairs; missing
    values render as '-'.
    """
    name_width = max([len("Model")] + [len(name) for name, _ in rows])
    header = "Model".ljust(name_width) + "".join(f"{h:>9}" for h, _ in _TABLE_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, report in rows:
        values = report.to_json() if isinstance(report, MetricsReport) else dict(report)
        cells = []
        for _, key in _TABLE_COLUMNS:
            value = values.get(key)
            cells.append("        -" if value is None else f"{value:>9.3f}")
        lines.append(name.ljust(name_width) + "".join(cells))
    return "\n".join(lines)
