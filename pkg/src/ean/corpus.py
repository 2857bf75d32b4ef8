"""Comment corpora: TSV records, standoff rationale annotations, pretrained
embeddings, vocabularies, padded batches, and synthetic desk-scale data.

Everything here is immutable once constructed and safe to share across
threads; construction itself is single-threaded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np


class DataError(ValueError):
    """Malformed or out-of-contract input data."""


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1


def tokenize(text):
    """Lowercase, split punctuation from words, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_with_spans(text):
    """Tokens plus their [start, end) character offsets in ``text``."""
    lowered = text.lower()
    tokens, spans = [], []
    for m in _TOKEN_RE.finditer(lowered):
        tokens.append(m.group(0))
        spans.append((m.start(), m.end()))
    return tokens, spans


@dataclass(frozen=True)
class Example:
    """One comment: id, tokens, attack score in [0, 1], optional gold mask."""

    id: str
    tokens: tuple
    target: float
    gold_mask: tuple | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise DataError(f"example {self.id!r} has no tokens")
        if not 0.0 <= self.target <= 1.0:
            raise DataError(f"example {self.id!r} target {self.target} outside [0, 1]")
        if self.gold_mask is not None and len(self.gold_mask) != len(self.tokens):
            raise DataError(
                f"example {self.id!r} gold mask length {len(self.gold_mask)} "
                f"!= token count {len(self.tokens)}"
            )

    @property
    def text(self):
        return " ".join(self.tokens)


@dataclass(frozen=True)
class AnnotationSet:
    """Per-annotator binary token masks for one comment."""

    comment_id: str
    masks: tuple

    def __post_init__(self):
        if len(self.masks) == 0:
            raise DataError(f"annotation set {self.comment_id!r} has no annotators")
        lengths = {len(m) for m in self.masks}
        if len(lengths) != 1:
            raise DataError(
                f"annotation set {self.comment_id!r} has mismatched mask lengths {sorted(lengths)}"
            )

    @property
    def n_annotators(self):
        return len(self.masks)


def majority_vote(ann):
    """Token is 1 iff strictly more than half of annotators marked it."""
    stacked = np.array([list(m) for m in ann.masks], dtype=np.int64)
    return (stacked.sum(axis=0) * 2 > stacked.shape[0]).astype(np.int64)


# -- file formats -------------------------------------------------------------


def load_tsv(path):
    """Read ``id TAB text TAB score`` records, one per line, no header."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            comment_id, text, raw_score = parts
            try:
                score = float(raw_score)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable score {raw_score!r}") from None
            if not 0.0 <= score <= 1.0:
                raise DataError(f"{path}:{lineno}: score {score} outside [0, 1]")
            tokens = tokenize(text)
            if not tokens:
                raise DataError(f"{path}:{lineno}: record has empty text")
            examples.append(Example(id=comment_id, tokens=tuple(tokens), target=score))
    return examples


def save_tsv(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.id}\t{ex.text}\t{ex.target!r}\n")


def _parse_standoff_fields(fields, lineno, path):
    # fields: ["T<k>", "<Label> <start> <end>", "<surface>"]; surface optional
    if len(fields) < 2:
        raise DataError(f"{path}:{lineno}: malformed annotation line")
    middle = fields[1].split()
    if len(middle) != 3:
        raise DataError(f"{path}:{lineno}: expected 'Label start end', got {fields[1]!r}")
    try:
        start, end = int(middle[1]), int(middle[2])
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-integer offsets in {fields[1]!r}") from None
    if start < 0 or end < start:
        raise DataError(f"{path}:{lineno}: bad span [{start}, {end})")
    return start, end


def spans_to_mask(spans, text):
    """Mark a token 1 iff any of its characters fall inside any span.

    Spans use end-exclusive character offsets into ``text``; overlapping
    spans merge silently.
    """
    tokens, token_spans = tokenize_with_spans(text)
    mask = np.zeros(len(tokens), dtype=np.int64)
    for start, end in spans:
        if end > len(text):
            raise DataError(f"span [{start}, {end}) beyond text length {len(text)}")
        for i, (ts, te) in enumerate(token_spans):
            if ts < end and start < te:
                mask[i] = 1
    return mask


def load_standoff(path, tokens, text=None):
    """Project one comment's standoff annotation file onto its tokens.

    Lines look like ``T<k> TAB <Label> <start> <end> TAB <surface>``.  The
    character offsets refer to ``text`` when given, else to the canonical
    space-joined token sequence.
    """
    if text is None:
        text = " ".join(tokens)
    spans = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or not line.startswith("T"):
                continue
            spans.append(_parse_standoff_fields(line.split("\t"), lineno, path))
    mask = spans_to_mask(spans, text)
    if len(mask) != len(tokens):
        raise DataError(
            f"{path}: annotation text yields {len(mask)} tokens, expected {len(tokens)}"
        )
    return mask


def load_standoff_corpus(path):
    """Read a combined annotation file with a comment-id prefix column.

    Lines look like ``<id> TAB T<k> TAB <Label> <start> <end> TAB <surface>``.
    Returns id -> list of (start, end) spans.
    """
    spans = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise DataError(f"{path}:{lineno}: expected id-prefixed annotation line")
            comment_id = fields[0]
            if not fields[1].startswith("T"):
                continue
            spans.setdefault(comment_id, []).append(
                _parse_standoff_fields(fields[1:], lineno, path)
            )
    return spans


def attach_gold(examples, path):
    """Return examples with gold masks projected from a combined standoff file.

    Examples absent from the file keep ``gold_mask=None``.
    """
    spans_by_id = load_standoff_corpus(path)
    out = []
    for ex in examples:
        spans = spans_by_id.get(ex.id)
        if spans is None:
            out.append(ex)
        else:
            mask = spans_to_mask(spans, ex.text)
            out.append(replace(ex, gold_mask=tuple(int(v) for v in mask)))
    return out


def write_standoff(examples, path):
    """Write gold rationales as a combined, id-prefixed standoff file."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            if ex.gold_mask is None or not any(ex.gold_mask):
                continue
            _, token_spans = tokenize_with_spans(ex.text)
            counter = 0
            for start_tok, end_tok in mask_chunks(ex.gold_mask):
                counter += 1
                cs = token_spans[start_tok][0]
                ce = token_spans[end_tok][1]
                surface = ex.text[cs:ce]
                fh.write(f"{ex.id}\tT{counter}\tAttack {cs} {ce}\t{surface}\n")


def mask_chunks(mask):
    """Maximal runs of 1s as (start, end) inclusive token index pairs."""
    chunks = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            chunks.append((start, i - 1))
            start = None
    if start is not None:
        chunks.append((start, len(mask) - 1))
    return chunks


# -- vocabulary and embeddings ------------------------------------------------


class Vocabulary:
    """Bijective token <-> index table with reserved padding and unknown."""

    def __init__(self, tokens):
        self.itos = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index_of(self, token):
        return self.stoi.get(token, UNK_INDEX)

    def token_of(self, index):
        return self.itos[index]

    def encode(self, tokens):
        return np.array([self.index_of(t) for t in tokens], dtype=np.int64)

    def to_json(self):
        return {"itos": self.itos[2:]}

    @classmethod
    def from_json(cls, doc):
        return cls(doc["itos"])


def build_vocabulary(examples, min_count=1):
    """Frequency-descending vocabulary; ties break lexicographically."""
    if min_count < 1:
        raise DataError("min_count must be >= 1")
    if not examples:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts = {}
    for ex in examples:
        for tok in ex.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(kept)


@dataclass(frozen=True)
class EmbeddingTable:
    """|V| x d matrix of input vectors; the padding row is all zeros."""

    matrix: np.ndarray

    def __post_init__(self):
        if np.any(self.matrix[PAD_INDEX] != 0.0):
            raise DataError("embedding padding row must be all zeros")

    @property
    def dim(self):
        return self.matrix.shape[1]

    def to_json(self):
        return {"dim": int(self.dim), "values": self.matrix.tolist()}

    @classmethod
    def from_json(cls, doc):
        return cls(matrix=np.array(doc["values"], dtype=np.float64))


def random_embeddings(vocab, dim, seed):
    """Uniform vectors in [-0.05, 0.05] for every non-pad entry."""
    rng = np.random.default_rng([int(seed), 4])
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    matrix[PAD_INDEX] = 0.0
    return EmbeddingTable(matrix=matrix)


def load_embeddings(path, vocab, seed=0):
    """Read word2vec text format and align it with the vocabulary.

    Vocabulary words missing from the file get seeded uniform vectors in
    [-0.05, 0.05], same as ``random_embeddings``.
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    dim = int(parts[1])
                    continue  # header line
                except ValueError:
                    pass
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} vector components, got {len(values)}"
                )
            try:
                vectors[word] = np.array([float(v) for v in values])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable vector component") from None
    if dim is None:
        raise DataError(f"{path}: no vectors found")
    rng = np.random.default_rng([int(seed), 4])
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    for index, token in enumerate(vocab.itos):
        if token in vectors:
            matrix[index] = vectors[token]
    matrix[PAD_INDEX] = 0.0
    return EmbeddingTable(matrix=matrix)


# -- batching ------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    """Padded token index matrix plus lengths, targets, and pad mask."""

    tokens: np.ndarray   # (N, T) int64, padding index beyond each length
    lengths: np.ndarray  # (N,) int64
    targets: np.ndarray  # (N,) float64
    pad: np.ndarray      # (N, T) float64, 1.0 marks a real token
    examples: tuple      # source Examples, aligned with rows

    def __post_init__(self):
        n, t = self.tokens.shape
        if np.any(self.lengths > t) or np.any(self.lengths < 1):
            raise DataError("batch lengths out of range")
        positions = np.arange(t)[None, :]
        real = positions < self.lengths[:, None]
        if np.any(self.pad != real.astype(np.float64)):
            raise DataError("pad mask does not match lengths")
        if np.any(self.tokens[~real] != PAD_INDEX):
            raise DataError("padding positions must hold the padding index")

    @property
    def size(self):
        return self.tokens.shape[0]

    @property
    def max_length(self):
        return self.tokens.shape[1]

    def reorder(self, order):
        return Batch(
            tokens=self.tokens[order],
            lengths=self.lengths[order],
            targets=self.targets[order],
            pad=self.pad[order],
            examples=tuple(self.examples[i] for i in order),
        )


def _pack_batch(chunk, vocab):
    max_len = max(len(ex.tokens) for ex in chunk)
    n = len(chunk)
    tokens = np.full((n, max_len), PAD_INDEX, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    targets = np.zeros(n, dtype=np.float64)
    pad = np.zeros((n, max_len), dtype=np.float64)
    for i, ex in enumerate(chunk):
        ids = vocab.encode(ex.tokens)
        tokens[i, : len(ids)] = ids
        lengths[i] = len(ids)
        targets[i] = ex.target
        pad[i, : len(ids)] = 1.0
    return Batch(tokens=tokens, lengths=lengths, targets=targets, pad=pad,
                 examples=tuple(chunk))


def make_batches(examples, vocab, batch_size, seed):
    """Shuffled, padded training batches; an odd-sized final batch is dropped.

    Even batch sizes are required because mask permutation pairs item i with
    item N-1-i.
    """
    if batch_size % 2 != 0:
        raise DataError("batch size must be even (mask permutation pairs items)")
    if not examples:
        raise DataError("empty corpus")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    batches = []
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start : start + batch_size]
        if len(chunk) % 2 != 0:
            continue
        batches.append(_pack_batch(chunk, vocab))
    if not batches:
        raise DataError("no usable batches (corpus too small for the batch size)")
    return batches


def eval_batches(examples, vocab, batch_size):
    """Order-preserving padded batches for inference; nothing is dropped."""
    if not examples:
        return []
    return [
        _pack_batch(examples[start : start + batch_size], vocab)
        for start in range(0, len(examples), batch_size)
    ]


def batch_gold(batch):
    """Padded (N, T) gold mask, or None when no row has one."""
    if all(ex.gold_mask is None for ex in batch.examples):
        return None
    gold = np.zeros_like(batch.pad)
    for i, ex in enumerate(batch.examples):
        if ex.gold_mask is not None:
            gold[i, : len(ex.gold_mask)] = np.array(ex.gold_mask, dtype=np.float64)
    return gold


# -- synthetic corpus ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Planted-span corpus with context-dependent attacks.

    Attack-lexicon tokens occur both inside planted spans (gold) and as
    isolated decoys (never gold), so attackhood depends on adjacency rather
    than token identity.  Marker tokens are predictive of the target but
    never part of the gold rationale.
    """

    vocab_size: int = 100
    corpus_size: int = 2000
    attack_words: int = 30
    span_length: int = 4
    redundancy: float = 0.3
    seed: int = 0
    decoy_rate: float = 1.5           # mean isolated attack tokens per example
    marker_words: int = 3
    marker_positive_rate: float = 0.9  # per marker word, per positive example
    marker_negative_rate: float = 0.15
    min_tokens: int = 12
    max_tokens: int = 20
    positive_target: float = 0.9
    negative_target: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.redundancy <= 1.0:
            raise DataError("redundancy rate must lie in [0, 1]")
        if self.span_length >= self.min_tokens:
            raise DataError("span length must be shorter than the shortest example")
        if self.redundancy > 0 and self.min_tokens < 2 * self.span_length + 1:
            raise DataError("examples too short to hold two disjoint spans")
        if self.attack_words + self.marker_words >= self.vocab_size:
            raise DataError("attack and marker lexicons exhaust the vocabulary")


def _place_isolated(rng, free, count):
    """Pick up to ``count`` positions from ``free``, keeping them non-adjacent."""
    placed = []
    candidates = sorted(free)
    for _ in range(count):
        if not candidates:
            break
        pos = int(rng.choice(candidates))
        placed.append(pos)
        candidates = [c for c in candidates if abs(c - pos) > 1]
    return placed


def generate_synthetic(cfg):
    """Deterministic synthetic corpus with gold masks for the planted spans."""
    rng = np.random.default_rng(cfg.seed)
    n_filler = cfg.vocab_size - cfg.attack_words - cfg.marker_words
    fillers = [f"w{i}" for i in range(n_filler)]
    attacks = [f"atk{i}" for i in range(cfg.attack_words)]
    markers = [f"mrk{i}" for i in range(cfg.marker_words)]
    span = cfg.span_length

    examples = []
    for index in range(cfg.corpus_size):
        length = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        tokens = [fillers[i] for i in rng.integers(0, n_filler, size=length)]
        gold = np.zeros(length, dtype=np.int64)
        positive = rng.random() < 0.5
        blocked = set()

        if positive:
            if rng.random() < cfg.redundancy:
                first = int(rng.integers(0, length - 2 * span))
                second = int(rng.integers(first + span + 1, length - span + 1))
                starts = [first, second]
            else:
                starts = [int(rng.integers(0, length - span + 1))]
            for start in starts:
                for t in range(start, start + span):
                    tokens[t] = attacks[int(rng.integers(0, cfg.attack_words))]
                    gold[t] = 1
                blocked.update(range(start - 1, start + span + 1))

        free = {p for p in range(length) if p not in blocked}
        n_decoys = int(rng.integers(0, int(2 * cfg.decoy_rate) + 1))
        for pos in _place_isolated(rng, free, n_decoys):
            tokens[pos] = attacks[int(rng.integers(0, cfg.attack_words))]
            free.discard(pos)
            free.discard(pos - 1)
            free.discard(pos + 1)

        rate = cfg.marker_positive_rate if positive else cfg.marker_negative_rate
        for marker in markers:
            if rng.random() < rate:
                placed = _place_isolated(rng, free, 1)
                if placed:
                    pos = placed[0]
                    tokens[pos] = marker
                    free.discard(pos)
                    free.discard(pos - 1)
                    free.discard(pos + 1)

        target = cfg.positive_target if positive else cfg.negative_target
        examples.append(
            Example(
                id=f"s{index:05d}",
                tokens=tuple(tokens),
                target=target,
                gold_mask=tuple(int(v) for v in gold),
            )
        )
    return examples
