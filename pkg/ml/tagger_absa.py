#!/usr/bin/env python3
"""
BiLSTM-CRF aspect tagger: architecture config, model, and checkpoint format.

The model chains features_absa (input rows) -> bilstm_absa (T x 2H
features) -> crf_absa (emissions, NLL, Viterbi). loss_and_grads returns
exact gradients for every trainable tensor; embedding table gradients are
row-sparse and only cover the rows the sentence looked up.

Checkpoint layout (all integers little-endian):
    b'ABSATAG1'                  magic
    uint32                       format version
    uint64                       header length N
    N bytes                      UTF-8 JSON header (config, label order, vocabularies, tensor directory)
    float64 blob                 tensors in directory order, little-endian
    32 bytes                     SHA-256 of everything above
"""

import copy
import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml.bilstm_absa import LstmParams, bilstm_backward, bilstm_forward, init_lstm_params
from ml.crf_absa import (
    LABELS,
    CrfParams,
    emission_backward,
    init_crf_params,
    nll_loss,
    project_emissions,
    viterbi_decode,
)
from ml.deptree_absa import UPOS_TAGS
from ml.errors_absa import (
    ArgumentError,
    CheckpointConfigError,
    CheckpointIntegrityError,
    ConfigError,
    UnsupportedCheckpointVersion,
)
from ml.features_absa import (
    EmbeddingTable,
    EncodedSentence,
    PositionalConfig,
    TaggingInstance,
    encode_sentence,
    init_random_table,
)
from ml.utils import read_bytes

logger = logging.getLogger(__name__)

WORD_SOURCES = ('table', 'contextual')
EMBEDDING_INITS = ('random', 'pretrained')

MAGIC = b'ABSATAG1'
FORMAT_VERSION = 1
_DIGEST_SIZE = 32


# ============================================================
# CONFIG
# ============================================================

@dataclass(frozen=True)
class TaggerConfig:
    """Everything that determines the architecture; stored in every checkpoint."""
    word_source: str = 'table'
    word_dim: int = 300
    contextual_dim: int = 768
    use_pos: bool = False
    pos_dim: int = 100
    position_mode: str = 'none'
    pe_dim: int = 64
    pe_base: float = 10000.0
    hidden_size: int = 128
    uncased: bool = True
    forbid_oi: bool = False
    embedding_init: str = 'random'
    pos_init: str = 'random'
    freeze_word: bool = False
    freeze_pos: bool = False
    seed: int = 13

    def validate(self) -> 'TaggerConfig':
        if self.word_source not in WORD_SOURCES:
            raise ConfigError(f"word_source must be one of {WORD_SOURCES}, got {self.word_source!r}")
        if self.embedding_init not in EMBEDDING_INITS:
            raise ConfigError(f"embedding_init must be one of {EMBEDDING_INITS}, got {self.embedding_init!r}")
        if self.pos_init not in EMBEDDING_INITS:
            raise ConfigError(f"pos_init must be one of {EMBEDDING_INITS}, got {self.pos_init!r}")
        for name in ('word_dim', 'contextual_dim', 'pos_dim', 'hidden_size'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        try:
            self.positional()
        except ArgumentError as e:
            raise ConfigError(e.message) from e
        return self

    def positional(self) -> PositionalConfig:
        return PositionalConfig(mode=self.position_mode, dim=self.pe_dim, base=float(self.pe_base))

    @property
    def word_segment_dim(self) -> int:
        return self.contextual_dim if self.word_source == 'contextual' else self.word_dim

    @property
    def input_dim(self) -> int:
        return (self.word_segment_dim
                + (self.pos_dim if self.use_pos else 0)
                + self.positional().active_dim)

    @property
    def needs_trees(self) -> bool:
        return self.use_pos or self.position_mode == 'tree'

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> 'TaggerConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown tagger config keys {unknown}")
        return cls(**values).validate()


# ============================================================
# MODEL
# ============================================================

@dataclass
class SparseRows:
    """Row-sparse gradient for an embedding table: unique row ids and their summed gradients."""
    ids: np.ndarray
    values: np.ndarray

    @classmethod
    def from_lookups(cls, ids: np.ndarray, row_grads: np.ndarray) -> 'SparseRows':
        unique, inverse = np.unique(ids, return_inverse=True)
        values = np.zeros((len(unique), row_grads.shape[1]))
        np.add.at(values, inverse, row_grads)
        return cls(ids=unique, values=values)

    def to_dense(self, n_rows: int) -> np.ndarray:
        dense = np.zeros((n_rows, self.values.shape[1]))
        dense[self.ids] = self.values
        return dense

    def scaled(self, factor: float) -> 'SparseRows':
        return SparseRows(ids=self.ids, values=self.values * factor)


Gradient = Union[np.ndarray, SparseRows]


def grad_sq_norm(grad: Gradient) -> float:
    values = grad.values if isinstance(grad, SparseRows) else grad
    return float(np.sum(values * values))


@dataclass
class TaggerModel:
    config: TaggerConfig
    word_table: Optional[EmbeddingTable]
    pos_table: Optional[EmbeddingTable]
    lstm_fwd: LstmParams
    lstm_bwd: LstmParams
    crf: CrfParams

    @classmethod
    def build(
        cls,
        config: TaggerConfig,
        word_vocab: Optional[Sequence[str]] = None,
        word_table: Optional[EmbeddingTable] = None,
        pos_table: Optional[EmbeddingTable] = None,
    ) -> 'TaggerModel':
        """
        Fresh model for a config.

        Args:
            config: Architecture
            word_vocab: Vocabulary for a random word table (word_source='table', no word_table)
            word_table: Pretrained word table; its dim must equal config.word_dim
            pos_table: Pretrained POS table; its dim must equal config.pos_dim

        Returns:
            TaggerModel with all parameters drawn from config.seed
        """
        config.validate()
        rng = np.random.default_rng(config.seed)

        if config.word_source == 'contextual':
            word_table = None
        elif word_table is None:
            if not word_vocab:
                raise ConfigError("a word vocabulary or a word table is needed for word_source='table'")
            word_table = init_random_table(word_vocab, config.word_dim, seed=config.seed)
        elif word_table.dim != config.word_dim:
            raise ConfigError(f"word table has dim {word_table.dim}, config says word_dim={config.word_dim}")
        if word_table is not None:
            word_table.trainable = not config.freeze_word

        if not config.use_pos:
            pos_table = None
        elif pos_table is None:
            pos_table = init_random_table(list(UPOS_TAGS), config.pos_dim, seed=config.seed + 1)
        elif pos_table.dim != config.pos_dim:
            raise ConfigError(f"POS table has dim {pos_table.dim}, config says pos_dim={config.pos_dim}")
        if pos_table is not None:
            pos_table.trainable = not config.freeze_pos

        D, H = config.input_dim, config.hidden_size
        return cls(
            config=config,
            word_table=word_table,
            pos_table=pos_table,
            lstm_fwd=init_lstm_params(D, H, rng),
            lstm_bwd=init_lstm_params(D, H, rng),
            crf=init_crf_params(2 * H, rng, forbid_oi=config.forbid_oi),
        )

    # ---------------------------------------------------------------- tensors

    def tables(self) -> Dict[str, EmbeddingTable]:
        out = {}
        if self.word_table is not None:
            out['word_embeddings'] = self.word_table
        if self.pos_table is not None:
            out['pos_embeddings'] = self.pos_table
        return out

    def parameters(self) -> Dict[str, np.ndarray]:
        """Every tensor by name (the arrays themselves, not copies)."""
        params = {name: table.vectors for name, table in self.tables().items()}
        for prefix, lstm in (('lstm_fwd', self.lstm_fwd), ('lstm_bwd', self.lstm_bwd)):
            for name, value in lstm.tensors().items():
                params[f"{prefix}.{name}"] = value
        for name, value in self.crf.tensors().items():
            params[f"crf.{name}"] = value
        return params

    def trainable_names(self) -> List[str]:
        frozen = {name for name, table in self.tables().items() if not table.trainable}
        return [name for name in self.parameters() if name not in frozen]

    def copy(self) -> 'TaggerModel':
        return copy.deepcopy(self)

    # ---------------------------------------------------------------- forward / backward

    def encode(self, instance: TaggingInstance) -> EncodedSentence:
        contextual = None
        if self.config.word_source == 'contextual':
            if instance.contextual is None:
                raise ArgumentError(f"sentence {instance.sentence_id}: model needs contextual vectors")
            contextual = instance.contextual
        return encode_sentence(
            instance.tokens,
            instance.pos_tags,
            instance.levels,
            self.word_table,
            self.pos_table,
            self.config.positional(),
            contextual_vectors=contextual,
            contextual_dim=self.config.contextual_dim if contextual is not None else None,
            sentence_id=instance.sentence_id,
        )

    def emissions(self, instance: TaggingInstance) -> np.ndarray:
        encoded = self.encode(instance)
        features = bilstm_forward(encoded.matrix, self.lstm_fwd, self.lstm_bwd)
        return project_emissions(features.matrix, self.crf)

    def loss(self, instance: TaggingInstance, labels: Optional[Sequence[str]] = None) -> float:
        emissions = self.emissions(instance)
        value, _ = nll_loss(emissions, labels if labels is not None else instance.labels, self.crf)
        return value

    def loss_and_grads(self, instance: TaggingInstance) -> Tuple[float, Dict[str, Gradient]]:
        """
        NLL of the instance's gold labels and gradients for all trainable tensors.

        Frozen tables get no entry; trainable tables get SparseRows.
        """
        # Forward: features -> emissions -> CRF loss
        encoded = self.encode(instance)
        X = encoded.matrix
        features = bilstm_forward(X, self.lstm_fwd, self.lstm_bwd)
        emissions = project_emissions(features.matrix, self.crf)
        loss, crf_grads = nll_loss(emissions, instance.labels, self.crf)

        # Backward through the projection and both LSTM directions
        d_features, d_W_e, d_b_e = emission_backward(features.matrix, crf_grads.emissions, self.crf)
        d_X, (g_fwd, g_bwd) = bilstm_backward(X, self.lstm_fwd, self.lstm_bwd, d_features, features)

        grads: Dict[str, Gradient] = {}
        # Only looked-up rows of trainable tables
        if self.word_table is not None and self.word_table.trainable:
            grads['word_embeddings'] = SparseRows.from_lookups(encoded.word_ids, d_X[:, encoded.segments['word']])
        if self.pos_table is not None and self.pos_table.trainable:
            grads['pos_embeddings'] = SparseRows.from_lookups(encoded.pos_ids, d_X[:, encoded.segments['pos']])
        for prefix, g in (('lstm_fwd', g_fwd), ('lstm_bwd', g_bwd)):
            for name, value in g.tensors().items():
                grads[f"{prefix}.{name}"] = value
        grads['crf.W_e'] = d_W_e
        grads['crf.b_e'] = d_b_e
        grads['crf.A'] = crf_grads.A
        grads['crf.start'] = crf_grads.start
        grads['crf.end'] = crf_grads.end
        return loss, grads

    def decode(self, instance: TaggingInstance) -> Tuple[Tuple[str, ...], float]:
        return viterbi_decode(self.emissions(instance), self.crf)

    def predict(self, instance: TaggingInstance) -> Tuple[str, ...]:
        return self.decode(instance)[0]

    def predict_many(self, instances: Iterable[TaggingInstance]) -> List[Tuple[str, ...]]:
        return [self.predict(inst) for inst in instances]

    def summary(self) -> Dict[str, object]:
        params = self.parameters()
        return {
            'input_dim': self.config.input_dim,
            'hidden_size': self.config.hidden_size,
            'n_parameters': int(sum(p.size for p in params.values())),
            'word_vocab': len(self.word_table) if self.word_table is not None else 0,
            'trainable': self.trainable_names(),
        }


# ============================================================
# CHECKPOINTS
# ============================================================

def _serialize(model: TaggerModel, format_version: int = FORMAT_VERSION,
               label_order: Sequence[str] = LABELS) -> bytes:
    directory = []
    blobs = []
    offset = 0
    for name, value in model.parameters().items():
        data = np.ascontiguousarray(value, dtype='<f8').tobytes()
        directory.append({'name': name, 'shape': list(value.shape), 'offset': offset, 'nbytes': len(data)})
        blobs.append(data)
        offset += len(data)

    header = {
        'config': model.config.to_dict(),
        'label_order': list(label_order),
        'vocab': {name: list(table.vocab) for name, table in model.tables().items()},
        'trainable': {name: table.trainable for name, table in model.tables().items()},
        'tensors': directory,
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode('utf-8')
    body = (MAGIC + struct.pack('<I', format_version) + struct.pack('<Q', len(header_bytes))
            + header_bytes + b''.join(blobs))
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: TaggerModel, filepath: Union[str, Path]) -> Path:
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    tmp.write_bytes(_serialize(model))
    os.replace(tmp, path)
    logger.info("Saved checkpoint %s", path)
    return path


def load_checkpoint(filepath: Union[str, Path]) -> TaggerModel:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointIntegrityError: truncated, corrupted or not a checkpoint
        UnsupportedCheckpointVersion: different format version
        CheckpointConfigError: different label order or unusable config
    """
    data = read_bytes(filepath)
    prefix = len(MAGIC) + 4 + 8
    if len(data) < prefix + _DIGEST_SIZE:
        raise CheckpointIntegrityError(f"{filepath}: file too short to be a checkpoint")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(f"{filepath}: checksum mismatch (truncated or corrupted)")
    if body[:len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{filepath}: not a tagger checkpoint")

    (version,) = struct.unpack('<I', body[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise UnsupportedCheckpointVersion(version, FORMAT_VERSION)
    (header_len,) = struct.unpack('<Q', body[len(MAGIC) + 4:prefix])
    try:
        header = json.loads(body[prefix:prefix + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"{filepath}: unreadable header ({e})")

    if tuple(header.get('label_order', ())) != LABELS:
        raise CheckpointConfigError(
            f"{filepath}: label order {header.get('label_order')} differs from {list(LABELS)}"
        )
    try:
        config = TaggerConfig.from_dict(header['config'])
    except (ConfigError, TypeError, KeyError) as e:
        raise CheckpointConfigError(f"{filepath}: unusable config ({e})")

    blob = body[prefix + header_len:]
    tensors = {}
    for entry in header['tensors']:
        start, nbytes = entry['offset'], entry['nbytes']
        if start + nbytes > len(blob):
            raise CheckpointIntegrityError(f"{filepath}: tensor {entry['name']} runs past end of data")
        values = np.frombuffer(blob, dtype='<f8', count=nbytes // 8, offset=start)
        tensors[entry['name']] = values.astype(np.float64).reshape(entry['shape'])

    def table(name):
        if name not in tensors:
            return None
        return EmbeddingTable(vocab=header['vocab'][name], vectors=tensors[name],
                              trainable=header['trainable'][name])

    model = TaggerModel(
        config=config,
        word_table=table('word_embeddings'),
        pos_table=table('pos_embeddings'),
        lstm_fwd=LstmParams(tensors['lstm_fwd.W'], tensors['lstm_fwd.U'], tensors['lstm_fwd.b']),
        lstm_bwd=LstmParams(tensors['lstm_bwd.W'], tensors['lstm_bwd.U'], tensors['lstm_bwd.b']),
        crf=CrfParams(tensors['crf.W_e'], tensors['crf.b_e'], tensors['crf.A'],
                      tensors['crf.start'], tensors['crf.end'], forbid_oi=config.forbid_oi),
    )
    logger.info("Loaded checkpoint %s", filepath)
    return model
