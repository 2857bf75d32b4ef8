"""Hard-attention rationale generator: per-token selection probabilities,
Bernoulli mask sampling, rationale regularizers, and the score-function
(REINFORCE) gradient estimator with an exact enumeration oracle."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .compute import (
    ParameterSet,
    Tensor,
    backward,
    glorot,
    graph_leaves,
    init_cell_params,
    make_cell,
    sigmoid_values,
)

PROB_CLAMP = 1e-6

GENERATOR_KINDS = ("recurrent", "sigmoid")


@dataclass
class Generator:
    """Selection-probability network; ``kind`` is recurrent or sigmoid.

    The sigmoid kind gates each token independently from its embedding and
    exists as the context-free baseline; the recurrent kind runs the cell
    over the sequence and reads probabilities off the hidden states.
    """

    params: ParameterSet
    kind: str
    hidden: int
    cell_kind: str

    def __post_init__(self):
        self._cell = make_cell(self.cell_kind)

    def probability_nodes(self, embeds):
        """Per-position (N, 1) probability tensors, taped for backward."""
        return self._forward(self.params.tensors(), embeds)

    def probabilities(self, embeds, pad):
        """(N, T) probability matrix with pad positions forced to zero."""
        cols = self._forward(self.params.values_view(), embeds)
        return np.concatenate(cols, axis=1) * pad

    def _forward(self, p, embeds):
        n, t_max, _ = embeds.shape
        cols = []
        if self.kind == "sigmoid":
            for t in range(t_max):
                score = embeds[:, t, :] @ p["head_w"] + p["head_b"]
                cols.append(_sigmoid(score))
            return cols
        h = np.zeros((n, self.hidden))
        for t in range(t_max):
            h = self._cell.step(p, h, embeds[:, t, :])
            cols.append(_sigmoid(h @ p["head_w"] + p["head_b"]))
        return cols


def _sigmoid(x):
    return x.sigmoid() if isinstance(x, Tensor) else sigmoid_values(x)


def init_generator(embed_dim, hidden, seed, kind="recurrent", cell_kind="gated"):
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}")
    rng = np.random.default_rng([int(seed), 10])
    params = ParameterSet()
    if kind == "recurrent":
        init_cell_params(params, make_cell(cell_kind), embed_dim, hidden, rng)
        params.add("head_w", glorot(rng, (hidden, 1)))
    else:
        params.add("head_w", glorot(rng, (embed_dim, 1)))
    params.add("head_b", rng.uniform(-0.05, 0.05, size=(1,)))
    return Generator(params=params, kind=kind, hidden=hidden, cell_kind=cell_kind)


@dataclass(frozen=True)
class RationaleSample:
    """A sampled hard-attention mask with its selection log-probability.

    ``probs`` and ``mask`` are (N, T) with pad positions at zero; ``log_prob``
    is the per-item sum of Bernoulli log-likelihoods over real tokens.
    """

    probs: np.ndarray
    mask: np.ndarray
    log_prob: np.ndarray


def sample_mask(probs, pad=None, seed=0):
    """Independent Bernoulli draw per token; pads are never selected."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if pad is None:
        pad = np.ones_like(probs)
    rng = seed if hasattr(seed, "random") else np.random.default_rng(seed)
    mask = (rng.random(probs.shape) < probs).astype(np.float64) * pad
    return RationaleSample(probs=probs * pad, mask=mask, log_prob=mask_log_prob(mask, probs, pad))


def mask_log_prob(mask, probs, pad):
    """Sum over real tokens of z*log(p) + (1-z)*log(1-p), clamped."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_token = mask * np.log(p) + (1.0 - mask) * np.log(1.0 - p)
    return (per_token * pad).sum(axis=-1)


def log_prob_node(prob_nodes, mask, pad):
    """Taped (N, 1) log-probability of ``mask`` under the generator graph."""
    total = None
    for t, p_t in enumerate(prob_nodes):
        z_t = mask[:, t : t + 1]
        pad_t = pad[:, t : t + 1]
        p_c = p_t.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        term = z_t * p_c.log() + (1.0 - z_t) * (1.0 - p_c).log()
        term = term * pad_t
        total = term if total is None else total + term
    return total


def sparsity(mask, pad=None):
    """Number of selected real tokens, per item."""
    mask = np.asarray(mask, dtype=np.float64)
    if pad is None:
        pad = np.ones_like(mask)
    return (mask * pad).sum(axis=-1)


def coherence(mask, pad=None):
    """Count of interior transitions |z_t - z_{t-1}| over real tokens.

    Only positions 2..T enter the sum: all-selected and none-selected both
    cost zero transitions.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if pad is None:
        pad = np.ones_like(mask)
    diffs = np.abs(np.diff(mask, axis=-1))
    return (diffs * pad[..., 1:]).sum(axis=-1)


def reinforce_gradient(generator, costs, logprob_node):
    """Accumulate cost-weighted score-function gradients into the generator.

    The per-item costs are treated as constants; repeated calls (one per
    sample) keep accumulating, so the caller scales ``costs`` by 1/samples.
    """
    leaves = {id(t) for t in graph_leaves(logprob_node)}
    if not any(id(t) in leaves for _, t in generator.params.items()):
        raise ValueError("log-probability graph is not connected to the generator parameters")
    costs = np.asarray(costs, dtype=np.float64).reshape(-1, 1)
    loss = (costs * logprob_node).sum() * (1.0 / costs.shape[0])
    backward(loss)


def enumerate_expected_cost(generator, embeds, pad, cost_fn, limit=12):
    """Exact E_z[cost(z)] for one example by summing over all 2^T masks.

    ``cost_fn`` maps a (1, T) mask to a scalar cost.  Raw (unclamped)
    probabilities weight the sum, so a saturated generator concentrates all
    mass on a single mask.
    """
    if embeds.shape[0] != 1:
        raise ValueError("exact enumeration works on a single example")
    length = int(pad[0].sum())
    if length > limit:
        raise ValueError(f"sequence length {length} exceeds enumeration limit {limit}")
    probs = generator.probabilities(embeds, pad)[0, :length]
    t_total = embeds.shape[1]
    expected = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=length):
        z = np.zeros((1, t_total))
        z[0, :length] = bits
        weight = float(np.prod(np.where(np.array(bits) > 0, probs, 1.0 - probs)))
        if weight == 0.0:
            continue
        expected += weight * float(cost_fn(z))
    return expected
