#!/usr/bin/env python3
"""
Per-token input features for the aspect tagger.

Each token row is the concatenation of
    word vector (trainable table lookup, or a frozen contextual vector)
    POS tag vector (trainable table lookup, optional)
    sinusoidal positional encoding of the token position or its tree level (optional)

Also defines TaggingInstance, the dataset record that carries everything a
sentence needs for encoding plus its gold labels.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ml.corpus_absa import LabeledSequence, fold_case
from ml.errors_absa import ArgumentError, VectorFormatError

logger = logging.getLogger(__name__)

UNK = '<UNK>'
PAD = '<PAD>'
RESERVED = (UNK, PAD)
INIT_RANGE = 0.1

POSITION_MODES = ('none', 'sequential', 'tree')


# ============================================================
# EMBEDDING TABLES
# ============================================================

@dataclass
class EmbeddingTable:
    """
    Vocabulary -> vector map.

    `vectors` is updated in place by the trainer; `vocab` never changes
    after construction (extend_table builds a new table).
    """
    vocab: Tuple[str, ...]
    vectors: np.ndarray
    trainable: bool = True
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.vocab):
            raise ArgumentError(f"vectors shape {self.vectors.shape} does not match vocab size {len(self.vocab)}")
        self.index = {}
        for i, word in enumerate(self.vocab):
            if word in self.index:
                raise ArgumentError(f"duplicate vocab entry {word!r}")
            self.index[word] = i
        if UNK not in self.index:
            raise ArgumentError(f"vocab must contain {UNK}")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def lookup_ids(self, words: Sequence[str]) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.index.get(w, unk) for w in words], dtype=np.int64)


def _with_reserved(vocab: Iterable[str]) -> List[str]:
    words = list(dict.fromkeys(vocab))
    for reserved in RESERVED:
        if reserved not in words:
            words.append(reserved)
    return words


def _uniform_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=(n, dim))


def init_random_table(vocab: Sequence[str], dim: int, seed: int, trainable: bool = True) -> EmbeddingTable:
    """Uniform [-0.1, 0.1] table over vocab (+ <UNK>, <PAD> if absent); <PAD> row zero."""
    if not vocab:
        raise ArgumentError("vocab must be nonempty")
    if dim <= 0:
        raise ArgumentError(f"dim must be positive, got {dim}")
    words = _with_reserved(vocab)
    rng = np.random.default_rng(seed)
    vectors = _uniform_rows(rng, len(words), dim)
    vectors[words.index(PAD)] = 0.0
    return EmbeddingTable(vocab=tuple(words), vectors=vectors, trainable=trainable)


def build_vocab(token_lists: Iterable[Sequence[str]], min_count: int = 1) -> List[str]:
    """Corpus vocabulary ordered by frequency (desc), then alphabetically."""
    counts = Counter(tok for tokens in token_lists for tok in tokens)
    words = [w for w, c in counts.items() if c >= min_count and w not in RESERVED]
    return sorted(words, key=lambda w: (-counts[w], w))


def extend_table(table: EmbeddingTable, words: Iterable[str], seed: int) -> Tuple[EmbeddingTable, int]:
    """
    Append random rows for words the table does not know.

    New rows go before the reserved entries so <UNK> and <PAD> stay last.

    Returns:
        (new table, number of words added)
    """
    missing = [w for w in dict.fromkeys(words) if w not in table.index and w not in RESERVED]
    if not missing:
        return table, 0

    rng = np.random.default_rng(seed)
    known = [w for w in table.vocab if w not in RESERVED]
    reserved_rows = [table.vectors[table.index[r]] for r in RESERVED if r in table.index]
    vocab = known + missing + [r for r in RESERVED if r in table.index]
    vectors = np.vstack([
        table.vectors[[table.index[w] for w in known]] if known else np.zeros((0, table.dim)),
        _uniform_rows(rng, len(missing), table.dim),
        np.array(reserved_rows).reshape(-1, table.dim),
    ])
    return EmbeddingTable(vocab=tuple(vocab), vectors=vectors, trainable=table.trainable), len(missing)


def _is_header(parts: List[str]) -> bool:
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_word_vectors(
    filepath: Union[str, Path],
    lowercase: bool = False,
    trainable: bool = True,
    verbose: bool = False,
) -> EmbeddingTable:
    """
    Load vectors from the word2vec/GloVe text format.

    Optional header "<count> <dim>", then one "token v1 ... vD" line per
    token. Vocabulary keeps file order and gets <UNK> (mean of all loaded
    vectors) and <PAD> (zeros) appended.

    Args:
        filepath: Vector file path
        lowercase: Case-fold tokens; later duplicates after folding are skipped
        trainable: Whether the trainer may update the table
        verbose: Show a progress bar

    Raises:
        VectorFormatError: dimension mismatch, duplicate or reserved token, bad number
    """
    logger.info("Loading vectors from %s", filepath)
    with open(filepath, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()

    words: List[str] = []
    rows: List[List[float]] = []
    seen: Dict[str, int] = {}
    dim: Optional[int] = None
    declared_count: Optional[int] = None
    kept = set()
    n_folded = 0

    for lineno, line in enumerate(tqdm(lines, disable=not verbose, ncols=100, desc="Loading vectors"), 1):
        parts = line.split()
        if not parts:
            continue
        if lineno == 1 and _is_header(parts):
            declared_count, dim = int(parts[0]), int(parts[1])
            continue

        word, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise VectorFormatError(f"token {word!r} has no vector values", line=lineno)
        if len(values) != dim:
            raise VectorFormatError(f"token {word!r} has {len(values)} values, expected {dim}", line=lineno)
        if word in RESERVED:
            raise VectorFormatError(f"reserved token {word!r} in vector file", line=lineno)
        if word in seen:
            raise VectorFormatError(f"duplicate token {word!r} (first at line {seen[word]})", line=lineno)
        seen[word] = lineno
        try:
            vector = [float(v) for v in values]
        except ValueError:
            raise VectorFormatError(f"non-numeric value in vector for {word!r}", line=lineno)

        if lowercase:
            word = fold_case(word)
            if word in kept:
                n_folded += 1
                continue
        kept.add(word)
        words.append(word)
        rows.append(vector)

    if not rows:
        raise VectorFormatError("no vectors found", line=len(lines))
    if declared_count is not None and declared_count != len(seen):
        logger.warning("Header declares %d vectors, file has %d", declared_count, len(seen))
    if n_folded:
        logger.warning("%d vectors skipped as case-folded duplicates", n_folded)

    vectors = np.array(rows, dtype=np.float64)
    unk = vectors.mean(axis=0)
    pad = np.zeros(vectors.shape[1])
    return EmbeddingTable(
        vocab=tuple(words) + RESERVED,
        vectors=np.vstack([vectors, unk, pad]),
        trainable=trainable,
    )


# ============================================================
# POSITIONAL ENCODING
# ============================================================

@dataclass(frozen=True)
class PositionalConfig:
    mode: str = 'none'
    dim: int = 64
    base: float = 10000.0

    def __post_init__(self):
        if self.mode not in POSITION_MODES:
            raise ArgumentError(f"position mode must be one of {POSITION_MODES}, got {self.mode!r}")
        if self.dim <= 0 or self.dim % 2:
            raise ArgumentError(f"positional dim must be a positive even integer, got {self.dim}")
        if not self.base > 1:
            raise ArgumentError(f"positional base must be > 1, got {self.base}")

    @property
    def active_dim(self) -> int:
        return 0 if self.mode == 'none' else self.dim


def positional_matrix(positions: Sequence[int], dim: int, base: float) -> np.ndarray:
    """Rows [sin(p/base^(2i/d)), cos(p/base^(2i/d))] interleaved, one per position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    if np.any(positions < 0):
        raise ArgumentError("positions must be non-negative")
    rates = np.power(base, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = positions * rates
    pe = np.empty((positions.shape[0], dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def sinusoidal_pe(position: int, config: PositionalConfig) -> np.ndarray:
    if config.mode != 'sequential':
        raise ArgumentError(f"sinusoidal_pe needs mode 'sequential', config has {config.mode!r}")
    return positional_matrix([position], config.dim, config.base)[0]


def tree_pe(level: int, config: PositionalConfig) -> np.ndarray:
    """Sinusoidal encoding of a tree level index instead of a sequence position."""
    if config.mode != 'tree':
        raise ArgumentError(f"tree_pe needs mode 'tree', config has {config.mode!r}")
    return positional_matrix([level], config.dim, config.base)[0]


# ============================================================
# SENTENCE ENCODING
# ============================================================

@dataclass(frozen=True)
class EncodedSentence:
    sentence_id: str
    matrix: np.ndarray
    word_ids: Optional[np.ndarray]
    pos_ids: Optional[np.ndarray]
    levels: Optional[Tuple[int, ...]]
    # column slices of `matrix` per segment ('word', 'pos', 'position')
    segments: Dict[str, slice] = field(compare=False)

    @property
    def input_dim(self) -> int:
        return self.matrix.shape[1]


def encode_sentence(
    tokens: Sequence[str],
    pos_tags: Optional[Sequence[str]],
    levels: Optional[Sequence[int]],
    word_table: Optional[EmbeddingTable],
    pos_table: Optional[EmbeddingTable],
    pconfig: PositionalConfig,
    contextual_vectors: Optional[np.ndarray] = None,
    contextual_dim: Optional[int] = None,
    sentence_id: str = '',
) -> EncodedSentence:
    """
    Build the T x D_in input matrix for one sentence.

    Args:
        tokens: Sentence tokens (already case-folded when the model is uncased)
        pos_tags: UPOS tag per token; required when pos_table is given
        levels: Tree level index per token; required when pconfig.mode == 'tree'
        word_table: Word table; unused when contextual_vectors are given
        pos_table: POS table, or None to leave the POS segment out
        pconfig: Positional encoding settings
        contextual_vectors: Frozen T x contextual_dim word vectors
        contextual_dim: Expected contextual width, checked when given

    Returns:
        EncodedSentence with segment slices for backpropagation into tables
    """
    T = len(tokens)
    if T == 0:
        raise ArgumentError(f"sentence {sentence_id}: no tokens")

    blocks = []
    segments: Dict[str, slice] = {}
    offset = 0

    # Word segment: frozen contextual vectors or table rows
    word_ids = None
    if contextual_vectors is not None:
        ctx = np.asarray(contextual_vectors, dtype=np.float64)
        if ctx.ndim != 2 or ctx.shape[0] != T:
            raise ArgumentError(f"sentence {sentence_id}: contextual vectors shape {ctx.shape} for {T} tokens")
        if contextual_dim is not None and ctx.shape[1] != contextual_dim:
            raise ArgumentError(
                f"sentence {sentence_id}: contextual dim {ctx.shape[1]}, expected {contextual_dim}"
            )
        word_block = ctx
    else:
        if word_table is None:
            raise ArgumentError("either a word table or contextual vectors are required")
        word_ids = word_table.lookup_ids(tokens)
        word_block = word_table.vectors[word_ids]
    blocks.append(word_block)
    segments['word'] = slice(offset, offset + word_block.shape[1])
    offset += word_block.shape[1]

    # POS segment
    pos_ids = None
    if pos_table is not None:
        if pos_tags is None or len(pos_tags) != T:
            raise ArgumentError(f"sentence {sentence_id}: POS tags missing or not aligned with {T} tokens")
        pos_ids = pos_table.lookup_ids(pos_tags)
        if np.any(pos_ids == pos_table.unk_id):
            unknown = sorted({p for p, i in zip(pos_tags, pos_ids) if i == pos_table.unk_id})
            # unknown tags fall back to the <unk> row
            logger.warning("sentence %s: POS tags %s mapped to %s", sentence_id, unknown, UNK)
        blocks.append(pos_table.vectors[pos_ids])
        segments['pos'] = slice(offset, offset + pos_table.dim)
        offset += pos_table.dim

    # Position segment: token index, or tree level index
    level_tuple = None
    if pconfig.mode != 'none':
        if pconfig.mode == 'tree':
            if levels is None or len(levels) != T:
                raise ArgumentError(f"sentence {sentence_id}: level indices missing or not aligned with {T} tokens")
            level_tuple = tuple(int(v) for v in levels)
            positions = level_tuple
        else:
            positions = range(T)
        blocks.append(positional_matrix(positions, pconfig.dim, pconfig.base))
        segments['position'] = slice(offset, offset + pconfig.dim)
        offset += pconfig.dim

    # Concatenate [word ; POS ; position]
    return EncodedSentence(
        sentence_id=sentence_id,
        matrix=np.hstack(blocks),
        word_ids=word_ids,
        pos_ids=pos_ids,
        levels=level_tuple,
        segments=segments,
    )


# ============================================================
# DATASET RECORDS
# ============================================================

@dataclass(frozen=True)
class TaggingInstance:
    """One sentence ready for the tagger: tokens, optional syntax, gold labels."""
    sentence_id: str
    tokens: Tuple[str, ...]
    labels: Tuple[str, ...]
    token_spans: Tuple[Tuple[int, int], ...] = ()
    pos_tags: Optional[Tuple[str, ...]] = None
    levels: Optional[Tuple[int, ...]] = None
    text: Optional[str] = None
    contextual: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        T = len(self.tokens)
        if len(self.labels) != T:
            raise ArgumentError(f"sentence {self.sentence_id}: {T} tokens but {len(self.labels)} labels")
        for name in ('pos_tags', 'levels'):
            value = getattr(self, name)
            if value is not None and len(value) != T:
                raise ArgumentError(f"sentence {self.sentence_id}: {name} has {len(value)} entries for {T} tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def labeled(self, labels: Optional[Sequence[str]] = None) -> LabeledSequence:
        return LabeledSequence(
            sentence_id=self.sentence_id,
            tokens=self.tokens,
            labels=tuple(labels) if labels is not None else self.labels,
            token_spans=self.token_spans or None,
        )

    def to_record(self) -> Dict[str, object]:
        record = {
            'sentence_id': self.sentence_id,
            'tokens': list(self.tokens),
            'labels': list(self.labels),
            'token_spans': [list(s) for s in self.token_spans],
        }
        if self.text is not None:
            record['text'] = self.text
        if self.pos_tags is not None:
            record['pos_tags'] = list(self.pos_tags)
        if self.levels is not None:
            record['levels'] = list(self.levels)
        return record

    @classmethod
    def from_record(cls, record: Dict[str, object]) -> 'TaggingInstance':
        tokens = tuple(record['tokens'])
        pos_tags = record.get('pos_tags')
        levels = record.get('levels')
        return cls(
            sentence_id=str(record['sentence_id']),
            tokens=tokens,
            labels=tuple(record.get('labels') or ['O'] * len(tokens)),
            token_spans=tuple(tuple(s) for s in record.get('token_spans', [])),
            pos_tags=tuple(pos_tags) if pos_tags is not None else None,
            levels=tuple(int(v) for v in levels) if levels is not None else None,
            text=record.get('text'),
        )


def load_contextual_vectors(filepath: Union[str, Path]) -> Dict[str, np.ndarray]:
    """
    Read frozen per-token vectors: one {"sentence_id", "vectors": [[...], ...]} per line.

    Raises:
        VectorFormatError: bad JSON, ragged rows, inconsistent width or repeated id
    """
    vectors: Dict[str, np.ndarray] = {}
    dim = None
    with open(filepath, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                sid = str(record['sentence_id'])
                matrix = np.array(record['vectors'], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise VectorFormatError(f"bad contextual vector record ({e})", line=lineno)
            if matrix.ndim != 2 or matrix.shape[0] == 0:
                raise VectorFormatError(f"sentence {sid}: vectors must be a nonempty T x dim list", line=lineno)
            if dim is None:
                dim = matrix.shape[1]
            elif matrix.shape[1] != dim:
                raise VectorFormatError(f"sentence {sid}: dim {matrix.shape[1]}, expected {dim}", line=lineno)
            if sid in vectors:
                raise VectorFormatError(f"duplicate sentence id {sid!r}", line=lineno)
            vectors[sid] = matrix
    logger.info("Loaded contextual vectors for %d sentences from %s", len(vectors), filepath)
    return vectors


def attach_contextual(
    instances: Sequence[TaggingInstance],
    vectors: Dict[str, np.ndarray],
) -> List[TaggingInstance]:
    """Return copies of the instances carrying their contextual vectors."""
    out = []
    for inst in instances:
        if inst.sentence_id not in vectors:
            raise ArgumentError(f"no contextual vectors for sentence {inst.sentence_id}")
        matrix = vectors[inst.sentence_id]
        if matrix.shape[0] != len(inst):
            raise ArgumentError(
                f"sentence {inst.sentence_id}: {matrix.shape[0]} contextual vectors for {len(inst)} tokens"
            )
        out.append(TaggingInstance(
            sentence_id=inst.sentence_id, tokens=inst.tokens, labels=inst.labels,
            token_spans=inst.token_spans, pos_tags=inst.pos_tags, levels=inst.levels,
            text=inst.text, contextual=matrix,
        ))
    return out
