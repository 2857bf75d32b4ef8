"""Gated sequence predictors with a manipulable default output.

The primary predictor reads the rationale-masked text, the adversarial
predictor reads the (permuted) antirationale.  Both share the architecture:
a bias-free recurrent cell whose state only advances on selected tokens,

    h_t = z_t * cell(h_{t-1}, e_t) + (1 - z_t) * h_{t-1},    h_0 = 0,

followed by sigmoid(h_T . w + b).  Because masked tokens cannot reach the
state, a fully masked input yields exactly sigmoid(b), and the output bias
alone fixes the model's default behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compute import (
    ParameterSet,
    Tensor,
    glorot,
    init_cell_params,
    logit,
    make_cell,
    sigmoid_values,
    squared_difference,
)
from .corpus import DataError

BIAS_MODES = ("off", "init", "fixed")
OUTPUT_BIAS = "out_b"


@dataclass
class Predictor:
    """Bias-free cell parameters plus an output head whose bias may be fixed."""

    params: ParameterSet
    hidden: int
    cell_kind: str
    fix_bias: bool = False

    def __post_init__(self):
        self._cell = make_cell(self.cell_kind)

    def frozen(self):
        return frozenset({OUTPUT_BIAS}) if self.fix_bias else frozenset()

    def default_value(self):
        """Prediction on a fully masked input: sigmoid of the output bias."""
        return float(sigmoid_values(self.params[OUTPUT_BIAS].data)[0])

    def predict(self, embeds, mask):
        """(N,) predictions without a tape; tokens with z=0 cannot leak in."""
        out = self._forward(self.params.values_view(), embeds, mask)
        return out.ravel()

    def predict_node(self, embeds, mask):
        """Taped (N, 1) predictions for gradient-based training."""
        return self._forward(self.params.tensors(), embeds, mask)

    def _forward(self, p, embeds, mask):
        n, t_max, _ = embeds.shape
        if mask.shape != (n, t_max):
            raise DataError(f"mask shape {mask.shape} does not match batch ({n}, {t_max})")
        h = np.zeros((n, self.hidden))
        for t in range(t_max):
            z_t = mask[:, t : t + 1]
            if not z_t.any():
                continue  # nothing selected: state exactly unchanged
            c = self._cell.step(p, h, embeds[:, t, :])
            h = z_t * c + (1.0 - z_t) * h
        score = h @ p["out_w"] + p[OUTPUT_BIAS]
        return score.sigmoid() if isinstance(score, Tensor) else sigmoid_values(score)


def init_predictor(embed_dim, hidden, seed, cell_kind="gated",
                   bias_mode="off", default_value=0.05):
    if bias_mode not in BIAS_MODES:
        raise ValueError(f"unknown bias mode {bias_mode!r}")
    rng = np.random.default_rng([int(seed), 11])
    params = ParameterSet()
    init_cell_params(params, make_cell(cell_kind), embed_dim, hidden, rng)
    params.add("out_w", glorot(rng, (hidden, 1)))
    params.add(OUTPUT_BIAS, rng.uniform(-0.05, 0.05, size=(1,)))
    pred = Predictor(params=params, hidden=hidden, cell_kind=cell_kind)
    if bias_mode != "off":
        set_default(pred, default_value, fix=(bias_mode == "fixed"))
    return pred


def set_default(predictor, value, fix=False):
    """Pin the fully-masked prediction to ``value`` via the output bias."""
    if not 0.0 < value < 1.0:
        raise DataError(f"default value {value} must lie strictly inside (0, 1)")
    predictor.params[OUTPUT_BIAS].data[:] = logit(value)
    predictor.fix_bias = bool(fix)
    return predictor


def prediction_cost(predictions, targets):
    """Batch-mean squared error; taped when given a Tensor."""
    if isinstance(predictions, Tensor):
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
        return squared_difference(predictions, targets).mean()
    return float(np.mean((np.asarray(predictions) - np.asarray(targets)) ** 2))


def antirationale(mask, pad):
    """1 - z on real tokens; pad positions stay zero."""
    return (1.0 - np.asarray(mask, dtype=np.float64)) * pad


@dataclass(frozen=True)
class PermutationPlan:
    """Which batch rows kept their own mask (k=1) and who their partner is."""

    order: np.ndarray    # indices ascending by target (identity for sorted input)
    k: np.ndarray        # per-item keep indicator, Bernoulli(0.5) shared per pair
    partner: np.ndarray  # N-1-i


def permute_masks(targets, masks, pad, seed):
    """Swap antirationale masks between low-target and high-target partners.

    The batch must be sorted ascending by target.  Each pair (i, N-1-i)
    draws one Bernoulli(0.5): on 0 the two rows exchange masks, so the
    multiset of masks is preserved, while the correlation between mask shape
    and target is destroyed.  Donor masks are re-zeroed beyond the
    recipient's length to keep the pad invariant.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n = targets.shape[0]
    if n % 2 != 0:
        raise DataError("mask permutation requires an even batch")
    if np.any(np.diff(targets) < 0):
        raise DataError("batch must be sorted ascending by target before permutation")
    rng = seed if hasattr(seed, "integers") else np.random.default_rng(seed)
    draws = rng.integers(0, 2, size=n // 2)
    k = np.empty(n, dtype=np.int64)
    permuted = np.array(masks, dtype=np.float64, copy=True)
    for i in range(n // 2):
        j = n - 1 - i
        k[i] = k[j] = draws[i]
        if draws[i] == 0:
            permuted[i], permuted[j] = masks[j].copy(), masks[i].copy()
    permuted *= pad
    plan = PermutationPlan(order=np.arange(n), k=k, partner=n - 1 - np.arange(n))
    return permuted, plan


def default_prediction(predictor, embeds):
    """Prediction with everything masked: constant sigmoid(b) per item."""
    return predictor.predict(embeds, np.zeros(embeds.shape[:2]))
