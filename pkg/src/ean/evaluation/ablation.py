"""Leave-one-out chunk ablation: does removing a rationale chunk improve the
generator objective?  High improving fractions mean the generator hedges by
selecting more than prediction strictly needs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import eval_batches, mask_chunks
from ..generator import sample_mask
from ..predictor import antirationale
from ..training import generator_cost


@dataclass(frozen=True)
class LeaveOneOutReport:
    candidates: int            # chunk removals attempted
    rationales: int            # multi-chunk rationales inspected
    improving_fraction: float  # share of removals that lower the objective
    mean_delta: float          # mean (cost after - cost before); >0 worsens

    def to_json(self):
        return asdict(self)


def _example_cost(bundle, embeds, pad, target, mask):
    cfg = bundle.config
    f_val = bundle.predictor.predict(embeds, mask)
    if cfg.lambda3 != 0.0:
        f2_anti = bundle.adversary.predict(embeds, antirationale(mask, pad))
    else:
        f2_anti = np.zeros(1)
    return float(generator_cost(mask, pad, f_val, np.array([target]),
                                f2_anti, bundle.adversary.default_value(),
                                cfg.lambda1, cfg.lambda2, cfg.lambda3)[0])


def leave_one_out(bundle, examples, deterministic=True, seed=0):
    """Ablate each chunk of every multi-chunk rationale and recompute cost.

    Costs are recomputed deterministically (same mask, no resampling), so a
    removal changes the objective only through the mask itself and the
    predictors' responses to it.
    """
    improvements = []
    deltas = []
    rationales = 0
    rng = np.random.default_rng([int(seed), 6])
    for batch in eval_batches(examples, bundle.vocab, bundle.config.batch_size):
        embeds_all = bundle.embed(batch)
        probs = bundle.generator.probabilities(embeds_all, batch.pad)
        if deterministic:
            masks = (probs >= 0.5).astype(np.float64) * batch.pad
        else:
            masks = sample_mask(probs, batch.pad, seed=rng).mask
        for i in range(batch.size):
            length = int(batch.lengths[i])
            row_mask = masks[i : i + 1]
            chunks = mask_chunks(row_mask[0, :length].astype(np.int64))
            if len(chunks) < 2:
                continue
            rationales += 1
            embeds = embeds_all[i : i + 1]
            pad = batch.pad[i : i + 1]
            target = float(batch.targets[i])
            base_cost = _example_cost(bundle, embeds, pad, target, row_mask)
            for start, end in chunks:
                reduced = row_mask.copy()
                reduced[0, start : end + 1] = 0.0
                cost = _example_cost(bundle, embeds, pad, target, reduced)
                deltas.append(cost - base_cost)
                improvements.append(cost < base_cost)
    candidates = len(deltas)
    return LeaveOneOutReport(
        candidates=candidates,
        rationales=rationales,
        improving_fraction=float(np.mean(improvements)) if candidates else 0.0,
        mean_delta=float(np.mean(deltas)) if candidates else 0.0,
    )
