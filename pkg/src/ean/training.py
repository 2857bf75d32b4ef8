"""Four-term generator objective, the interleaved three-network training
loop, configuration handling, grid search, and model bundle serialization.

Per batch the update order is: primary predictor, adversarial predictor,
then generator, so the generator's score-function weights always see
current-step predictor quality.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import corpus as corpus_mod
from .compute import AdamState, adam_step, backward
from .corpus import (
    Batch,
    DataError,
    EmbeddingTable,
    Vocabulary,
    batch_gold,
    eval_batches,
    make_batches,
)
from .generator import (
    Generator,
    coherence,
    init_generator,
    log_prob_node,
    reinforce_gradient,
    sample_mask,
    sparsity,
)
from .predictor import (
    Predictor,
    antirationale,
    init_predictor,
    permute_masks,
    prediction_cost,
)

# Seed stream tags, so every random decision has its own deterministic stream.
_S_SHUFFLE, _S_MASK, _S_PERM, _S_EVAL = 1, 2, 3, 5

BUNDLE_FORMAT = "ean-bundle-v1"


@dataclass(frozen=True)
class TrainingConfig:
    lambda1: float = 0.0006
    lambda2: float = 2.0
    lambda3: float = 0.0
    default_value: float = 0.05
    bias_mode: str = "off"          # off | init | fixed
    inverse: bool = False
    epochs: int = 50
    batch_size: int = 64
    hidden_size: int = 128
    embedding_dim: int = 64
    learning_rate: float = 0.001
    seed: int = 0
    samples: int = 1
    generator_kind: str = "recurrent"
    cell: str = "gated"
    cost_baseline: bool = False     # moving-average REINFORCE baseline, off by default
    min_count: int = 1

    def __post_init__(self):
        if self.batch_size % 2 != 0:
            raise DataError("batch size must be even")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise DataError("objective weights must be nonnegative")
        if not self.inverse and self.lambda3 != 0.0:
            raise DataError("lambda3 must be 0 when the inverse term is off")
        if not 0.0 < self.default_value < 1.0:
            raise DataError("default value must lie strictly inside (0, 1)")
        if self.epochs < 1 or self.samples < 1:
            raise DataError("epochs and samples must be positive")
        if self.seed < 0:
            raise DataError("seed must be nonnegative")
        if self.bias_mode not in ("off", "init", "fixed"):
            raise DataError(f"unknown bias mode {self.bias_mode!r}")


def make_config(overrides=None):
    """Build a config from a key -> raw-value mapping.

    Turning the inverse term on defaults lambda3 to 1.0 unless the caller
    set it explicitly.
    """
    overrides = dict(overrides or {})
    typed = {}
    by_name = {f.name: f for f in fields(TrainingConfig)}
    for key, raw in overrides.items():
        if key not in by_name:
            raise DataError(f"unknown config key {key!r}")
        typed[key] = coerce_config_value(key, raw)
    if typed.get("inverse") and "lambda3" not in typed:
        typed["lambda3"] = 1.0
    return TrainingConfig(**typed)


def coerce_config_value(key, raw):
    default = getattr(TrainingConfig, key)
    if isinstance(default, bool):
        return parse_bool(raw) if isinstance(raw, str) else bool(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def parse_bool(raw):
    value = raw.strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise DataError(f"cannot parse boolean value {raw!r}")


def load_config_file(path):
    """Flat ``key = value`` pairs, one per line, # comments allowed."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def config_to_text(config):
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())


def config_hash(config):
    canonical = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class EpochRow:
    epoch: int
    gen_loss: float
    f_loss: float
    f2_loss: float
    dev_token_f1: float
    dev_mse: float


LOG_COLUMNS = ("epoch", "gen_loss", "f_loss", "f2_loss", "dev_token_f1", "dev_mse")


def write_epoch_log(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([row.epoch, row.gen_loss, row.f_loss, row.f2_loss,
                             row.dev_token_f1, row.dev_mse])


@dataclass
class ModelBundle:
    """Generator, both predictors, vocabulary, embeddings, config, and log."""

    generator: Generator
    predictor: Predictor
    adversary: Predictor
    vocab: Vocabulary
    embeddings: EmbeddingTable
    config: TrainingConfig
    log: list = field(default_factory=list)

    def embed(self, batch):
        return self.embeddings.matrix[batch.tokens]

    def to_json(self):
        return {
            "format": BUNDLE_FORMAT,
            "config": asdict(self.config),
            "config_hash": config_hash(self.config),
            "metadata": {
                "hidden_size": self.config.hidden_size,
                "embedding_dim": int(self.embeddings.dim),
                "vocab_size": len(self.vocab),
            },
            "vocabulary": self.vocab.to_json(),
            "embeddings": self.embeddings.to_json(),
            "generator": self.generator.params.to_json(),
            "predictor": self.predictor.params.to_json(),
            "adversary": self.adversary.params.to_json(),
            "training_log": [asdict(r) for r in self.log],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        from .compute import ParameterSet

        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != BUNDLE_FORMAT:
            raise DataError(f"{path}: unrecognized bundle format {doc.get('format')!r}")
        config = TrainingConfig(**doc["config"])
        vocab = Vocabulary.from_json(doc["vocabulary"])
        embeddings = EmbeddingTable.from_json(doc["embeddings"])
        generator = Generator(
            params=ParameterSet.from_json(doc["generator"]),
            kind=config.generator_kind,
            hidden=config.hidden_size,
            cell_kind=config.cell,
        )
        predictor = Predictor(
            params=ParameterSet.from_json(doc["predictor"]),
            hidden=config.hidden_size,
            cell_kind=config.cell,
            fix_bias=(config.bias_mode == "fixed"),
        )
        adversary = Predictor(
            params=ParameterSet.from_json(doc["adversary"]),
            hidden=config.hidden_size,
            cell_kind=config.cell,
            fix_bias=(config.bias_mode == "fixed"),
        )
        log = [EpochRow(**row) for row in doc.get("training_log", [])]
        return cls(generator=generator, predictor=predictor, adversary=adversary,
                   vocab=vocab, embeddings=embeddings, config=config, log=log)


def build_bundle(vocab, embeddings, config):
    """Freshly initialized networks, dimensionally consistent with config."""
    dim = int(embeddings.dim)
    generator = init_generator(dim, config.hidden_size, config.seed,
                               kind=config.generator_kind, cell_kind=config.cell)
    predictor = init_predictor(dim, config.hidden_size, config.seed + 1,
                               cell_kind=config.cell, bias_mode=config.bias_mode,
                               default_value=config.default_value)
    adversary = init_predictor(dim, config.hidden_size, config.seed + 2,
                               cell_kind=config.cell, bias_mode=config.bias_mode,
                               default_value=config.default_value)
    return ModelBundle(generator=generator, predictor=predictor, adversary=adversary,
                       vocab=vocab, embeddings=embeddings, config=config)


def generator_cost(mask, pad, predictions, targets, adv_anti, adv_default,
                   lam1, lam2, lam3):
    """Per-item sum of the four objective terms.

    accuracy + lam1 * |z| + lam1*lam2 * transitions
             + lam3 * (f2(antirationale) - f2(nothing))^2

    Note that the coherence term is weighted by the product lam1*lam2.
    """
    accuracy = (np.asarray(predictions) - np.asarray(targets)) ** 2
    inverse = (np.asarray(adv_anti) - np.asarray(adv_default)) ** 2
    return (accuracy
            + lam1 * sparsity(mask, pad)
            + lam1 * lam2 * coherence(mask, pad)
            + lam3 * inverse)


@dataclass
class Trainer:
    """Optimizer state for one bundle; reused across steps and epochs."""

    bundle: ModelBundle
    gen_opt: AdamState
    f_opt: AdamState
    f2_opt: AdamState
    baseline: float = 0.0
    baseline_ready: bool = False

    @classmethod
    def create(cls, bundle):
        lr = bundle.config.learning_rate
        return cls(
            bundle=bundle,
            gen_opt=AdamState.for_params(bundle.generator.params, alpha=lr),
            f_opt=AdamState.for_params(bundle.predictor.params, alpha=lr),
            f2_opt=AdamState.for_params(bundle.adversary.params, alpha=lr),
        )


@dataclass(frozen=True)
class StepStats:
    gen_cost: float
    f_cost: float
    f2_cost: float
    size: int


def train_step(trainer, batch, epoch, batch_index, force_mask=None):
    """One interleaved update of predictor, adversary, and generator.

    With ``force_mask="ones"`` the generator is bypassed (no sampling, no
    REINFORCE update) and the predictors train on fully visible text.
    """
    bundle = trainer.bundle
    cfg = bundle.config
    order = np.argsort(batch.targets, kind="stable")
    batch = batch.reorder(order)
    embeds = bundle.embed(batch)

    if force_mask == "ones":
        samples = None
        z = batch.pad.copy()
        prob_nodes = None
    elif force_mask is not None:
        raise ValueError(f"unknown forced mask {force_mask!r}")
    else:
        prob_nodes = bundle.generator.probability_nodes(embeds)
        probs = np.concatenate([node.data for node in prob_nodes], axis=1) * batch.pad
        rng = np.random.default_rng([cfg.seed, _S_MASK, epoch, batch_index])
        samples = [sample_mask(probs, batch.pad, seed=rng) for _ in range(cfg.samples)]
        z = samples[0].mask

    # 1) primary predictor trains on the rationale-masked text
    bundle.predictor.params.zero_grad()
    f_node = bundle.predictor.predict_node(embeds, z)
    f_loss = prediction_cost(f_node, batch.targets)
    backward(f_loss)
    adam_step(bundle.predictor.params, trainer.f_opt, frozen=bundle.predictor.frozen())

    # 2) adversary trains on the permuted antirationale
    anti = antirationale(z, batch.pad)
    perm_rng = np.random.default_rng([cfg.seed, _S_PERM, epoch, batch_index])
    permuted, _ = permute_masks(batch.targets, anti, batch.pad, seed=perm_rng)
    bundle.adversary.params.zero_grad()
    f2_node = bundle.adversary.predict_node(embeds, permuted)
    f2_loss = prediction_cost(f2_node, batch.targets)
    backward(f2_loss)
    adam_step(bundle.adversary.params, trainer.f2_opt, frozen=bundle.adversary.frozen())

    # 3) generator gets the score-function gradient, weighted by fresh costs
    gen_cost_mean = 0.0
    if samples is not None:
        bundle.generator.params.zero_grad()
        adv_default = bundle.adversary.default_value()
        costs = []
        for sample in samples:
            f_vals = bundle.predictor.predict(embeds, sample.mask)
            if cfg.lambda3 != 0.0:
                f2_anti = bundle.adversary.predict(embeds, antirationale(sample.mask, batch.pad))
            else:
                f2_anti = np.zeros(batch.size)
            costs.append(generator_cost(sample.mask, batch.pad, f_vals, batch.targets,
                                        f2_anti, adv_default,
                                        cfg.lambda1, cfg.lambda2, cfg.lambda3))
        gen_cost_mean = float(np.mean(costs))
        offset = trainer.baseline if (cfg.cost_baseline and trainer.baseline_ready) else 0.0
        for sample, cost in zip(samples, costs):
            lp = log_prob_node(prob_nodes, sample.mask, batch.pad)
            reinforce_gradient(bundle.generator, (cost - offset) / cfg.samples, lp)
        adam_step(bundle.generator.params, trainer.gen_opt)
        if cfg.cost_baseline:
            trainer.baseline = (0.9 * trainer.baseline + 0.1 * gen_cost_mean
                                if trainer.baseline_ready else gen_cost_mean)
            trainer.baseline_ready = True
    else:
        # report the degenerate cost of the all-ones mask for the log
        f_vals = bundle.predictor.predict(embeds, z)
        gen_cost_mean = float(np.mean(generator_cost(
            z, batch.pad, f_vals, batch.targets, np.zeros(batch.size),
            bundle.adversary.default_value(), cfg.lambda1, cfg.lambda2, cfg.lambda3)))

    return StepStats(gen_cost=gen_cost_mean, f_cost=float(f_loss.data),
                     f2_cost=float(f2_loss.data), size=batch.size)


@dataclass(frozen=True)
class InferenceResult:
    probs: np.ndarray       # (L,) selection probabilities, pads stripped
    mask: np.ndarray        # (L,) hard rationale
    prediction: float


def predict_examples(bundle, examples, deterministic=True, seed=0, batch_size=None):
    """Rationales and predictions for a list of examples, order preserved.

    Deterministic mode thresholds probabilities at 0.5; sampling mode draws
    the mask exactly as training does.
    """
    batch_size = batch_size or bundle.config.batch_size
    results = []
    rng = np.random.default_rng([int(seed), _S_EVAL])
    for batch in eval_batches(examples, bundle.vocab, batch_size):
        embeds = bundle.embed(batch)
        probs = bundle.generator.probabilities(embeds, batch.pad)
        if deterministic:
            mask = (probs >= 0.5).astype(np.float64) * batch.pad
        else:
            mask = sample_mask(probs, batch.pad, seed=rng).mask
        preds = bundle.predictor.predict(embeds, mask)
        for i in range(batch.size):
            length = int(batch.lengths[i])
            results.append(InferenceResult(
                probs=probs[i, :length].copy(),
                mask=mask[i, :length].astype(np.int64),
                prediction=float(preds[i]),
            ))
    return results


def _dev_scores(bundle, dev_examples):
    """Deterministic dev tokenwise F1 (gold rows only) and MSE (all rows)."""
    from .evaluation.metrics import tokenwise_prf

    if not dev_examples:
        return 0.0, 0.0
    results = predict_examples(bundle, dev_examples, deterministic=True)
    golds, preds = [], []
    errors = []
    for ex, res in zip(dev_examples, results):
        errors.append((res.prediction - ex.target) ** 2)
        if ex.gold_mask is not None:
            golds.append(np.array(ex.gold_mask))
            preds.append(res.mask)
    f1 = tokenwise_prf(golds, preds)[2] if golds else 0.0
    return float(f1), float(np.mean(errors))


def train(bundle, train_examples, dev_examples=None, force_mask=None):
    """Run the configured number of epochs; keep the best dev-F1 snapshot.

    Returns the bundle with ``bundle.log`` holding one row per epoch.  When
    dev examples carry gold rationales, the parameters are restored to the
    epoch with the highest dev tokenwise F1.
    """
    if not train_examples:
        raise DataError("empty training corpus")
    cfg = bundle.config
    trainer = Trainer.create(bundle)
    best_f1 = -1.0
    best_snapshot = None
    has_dev_gold = bool(dev_examples) and any(ex.gold_mask is not None for ex in dev_examples)

    for epoch in range(1, cfg.epochs + 1):
        batches = make_batches(train_examples, bundle.vocab, cfg.batch_size,
                               seed=[cfg.seed, _S_SHUFFLE, epoch])
        totals = np.zeros(3)
        count = 0
        for index, batch in enumerate(batches):
            stats = train_step(trainer, batch, epoch, index, force_mask=force_mask)
            totals += np.array([stats.gen_cost, stats.f_cost, stats.f2_cost]) * stats.size
            count += stats.size
        dev_f1, dev_mse = _dev_scores(bundle, dev_examples)
        bundle.log.append(EpochRow(
            epoch=epoch,
            gen_loss=float(totals[0] / count),
            f_loss=float(totals[1] / count),
            f2_loss=float(totals[2] / count),
            dev_token_f1=dev_f1,
            dev_mse=dev_mse,
        ))
        if has_dev_gold and dev_f1 > best_f1:
            best_f1 = dev_f1
            best_snapshot = (bundle.generator.params.copy(),
                             bundle.predictor.params.copy(),
                             bundle.adversary.params.copy())

    if best_snapshot is not None:
        bundle.generator.params = best_snapshot[0]
        bundle.predictor.params = best_snapshot[1]
        bundle.adversary.params = best_snapshot[2]
    return bundle


# -- hyperparameter grid -------------------------------------------------------

DEFAULT_GRID = {
    "lambda1": [0.0003, 0.0006, 0.0009, 0.0012, 0.0015, 0.0018, 0.0021],
    "lambda2": [0.0, 1.0, 2.0],
    "lambda3": [0.0, 1.0],
}


def grid_cells(grid=None):
    """Cartesian product of the grid, as ordered override dicts."""
    grid = grid or DEFAULT_GRID
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _cell_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def run_grid_cell(cell, index, base_config, vocab, embeddings, train_examples,
                  dev_examples):
    """Train one fully isolated grid cell and report its dev metrics."""
    overrides = {k: coerce_config_value(k, v) for k, v in cell.items()}
    if "lambda3" in overrides:
        overrides["inverse"] = overrides["lambda3"] > 0
    overrides.pop("seed", None)  # each cell gets a derived seed
    config = replace(base_config, **overrides,
                     seed=_cell_seed(base_config.seed, index))
    bundle = build_bundle(vocab, embeddings, config)
    train(bundle, train_examples, dev_examples)
    best = max(bundle.log, key=lambda row: row.dev_token_f1)
    return {
        "cell": index,
        **{k: overrides[k] for k in cell},
        "seed": config.seed,
        "dev_token_f1": best.dev_token_f1,
        "dev_mse": best.dev_mse,
    }


@dataclass(frozen=True)
class GridResult:
    rows: list
    best_index: int  # position in rows of the dev-F1 argmax


def grid_search(train_examples, dev_examples, base_config, grid=None,
                embeddings=None, completed=None):
    """Train every grid cell independently; select by dev tokenwise F1.

    ``completed`` maps cell index -> previously computed row, letting an
    interrupted run resume without retraining finished cells.
    """
    cells = grid_cells(grid)
    vocab = corpus_mod.build_vocabulary(train_examples, base_config.min_count)
    if embeddings is None:
        embeddings = corpus_mod.random_embeddings(vocab, base_config.embedding_dim,
                                                  base_config.seed)
    completed = completed or {}
    rows = []
    for index, cell in enumerate(cells):
        if index in completed:
            rows.append(completed[index])
            continue
        rows.append(run_grid_cell(cell, index, base_config, vocab, embeddings,
                                  train_examples, dev_examples))
    best_index = max(range(len(rows)), key=lambda i: rows[i]["dev_token_f1"])
    return GridResult(rows=rows, best_index=best_index)
