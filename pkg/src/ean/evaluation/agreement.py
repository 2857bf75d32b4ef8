"""Inter-annotator agreement, mean human performance, and McNemar's test."""

from __future__ import annotations

from math import comb

import numpy as np

from ..corpus import DataError, majority_vote
from .metrics import phrasewise_prf, tokenwise_prf


def _coincidence_alpha(units):
    """Nominal-data Krippendorff alpha from per-unit value lists.

    Every unit must carry at least two pairable values.  Built from the
    coincidence matrix: alpha = (A_obs - A_exp) / (1 - A_exp).
    """
    values = sorted({v for unit in units for v in unit})
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for unit in units:
        m = len(unit)
        for i, a in enumerate(unit):
            for j, b in enumerate(unit):
                if i != j:
                    o[index[a], index[b]] += 1.0 / (m - 1)
    n = o.sum()
    totals = o.sum(axis=1)
    a_obs = np.trace(o) / n
    a_exp = (totals * (totals - 1)).sum() / (n * (n - 1))
    if a_exp >= 1.0:
        return 1.0  # every value identical: degenerate perfect agreement
    return float((a_obs - a_exp) / (1.0 - a_exp))


def krippendorff_alpha(annotation_sets, unit="token"):
    """Chance-corrected agreement over binary annotations.

    ``unit="comment"`` scores whole-comment judgments (did the annotator
    mark anything at all); ``unit="token"`` scores every token position.
    """
    if unit not in ("comment", "token"):
        raise ValueError(f"unknown agreement unit {unit!r}")
    if not annotation_sets:
        raise DataError("no annotation sets")
    for ann in annotation_sets:
        if ann.n_annotators < 2:
            raise DataError(
                f"annotation set {ann.comment_id!r} has fewer than 2 annotators"
            )
    units = []
    for ann in annotation_sets:
        masks = [np.asarray(m, dtype=np.int64) for m in ann.masks]
        if unit == "comment":
            units.append([int(m.any()) for m in masks])
        else:
            for t in range(masks[0].shape[0]):
                units.append([int(m[t]) for m in masks])
    return _coincidence_alpha(units)


def mean_human_performance(annotation_sets):
    """Score each annotator against the majority vote of the others.

    Returns macro averages over (comment, annotator) instances:
    ``{"tokenwise": (P, R, F1), "phrasewise": (P, R, F1)}``.  Sets with a
    single annotator contribute nothing (there is no leave-one-out majority).
    """
    token_scores, phrase_scores = [], []
    for ann in annotation_sets:
        if ann.n_annotators < 2:
            continue
        masks = [np.asarray(m, dtype=np.int64) for m in ann.masks]
        for i, own in enumerate(masks):
            others = type(ann)(
                comment_id=ann.comment_id,
                masks=tuple(tuple(m) for j, m in enumerate(masks) if j != i),
            )
            reference = majority_vote(others)
            token_scores.append(tokenwise_prf([reference], [own]))
            phrase_scores.append(phrasewise_prf([reference], [own]))
    if not token_scores:
        raise DataError("no annotation sets with at least 2 annotators")
    return {
        "tokenwise": tuple(float(np.mean([s[k] for s in token_scores])) for k in range(3)),
        "phrasewise": tuple(float(np.mean([s[k] for s in phrase_scores])) for k in range(3)),
    }


def mcnemar(a_correct, b_correct):
    """Exact binomial McNemar test on paired correctness flags.

    Returns (min discordant count, two-sided p).  The exact form matters at
    desk scale where discordant counts are small.
    """
    a = np.asarray(a_correct, dtype=bool)
    b = np.asarray(b_correct, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("correctness vectors must have equal length")
    disc_a = int(np.sum(a & ~b))
    disc_b = int(np.sum(~a & b))
    n = disc_a + disc_b
    statistic = min(disc_a, disc_b)
    if n == 0:
        return statistic, 1.0
    tail = sum(comb(n, k) for k in range(statistic + 1)) / 2.0**n
    return statistic, min(1.0, 2.0 * tail)
