#!/usr/bin/env python3
"""
Exception hierarchy for the aspect extraction toolkit.

Every error carries the fields a caller needs to report it (line numbers,
sentence ids, epochs) and can render itself as a machine-readable record,
which is what the CLI prints when a command fails.
"""

from typing import Any, Dict, Optional, Sequence


class AbsaError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, **fields: Any):
        super().__init__(message)
        self.message = message
        self.fields = fields

    def to_record(self) -> Dict[str, Any]:
        record = {'error': type(self).__name__, 'message': self.message}
        for key, value in self.fields.items():
            if value is not None:
                record[key] = value
        return record


class ArgumentError(AbsaError, ValueError):
    """Shape, length or argument contract violated by the caller."""


class ConfigError(AbsaError, ValueError):
    """Run configuration is invalid or references missing inputs."""


# ============================================================
# CORPUS
# ============================================================

class CorpusParseError(AbsaError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = f"line {line}" if line is not None else "unknown line"
        if path:
            where = f"{path}:{where}"
        super().__init__(f"{where}: {message}", line=line, path=path)
        self.line = line


class CorpusValidationError(AbsaError):
    def __init__(self, message: str, sentence_id: str, target: Optional[str] = None):
        super().__init__(f"sentence {sentence_id}: {message}", sentence_id=sentence_id, target=target)
        self.sentence_id = sentence_id
        self.target = target


class OverlapError(AbsaError):
    def __init__(self, sentence_id: str, first, second):
        super().__init__(
            f"sentence {sentence_id}: opinions {first.target!r} [{first.start},{first.end}) and "
            f"{second.target!r} [{second.start},{second.end}) cover a shared token",
            sentence_id=sentence_id,
            opinions=[first.to_dict(), second.to_dict()],
        )
        self.sentence_id = sentence_id
        self.opinions = (first, second)


class AlignmentError(AbsaError):
    def __init__(self, message: str, sentence_id: str, token: Optional[str] = None):
        super().__init__(f"sentence {sentence_id}: {message}", sentence_id=sentence_id, token=token)
        self.sentence_id = sentence_id
        self.token = token


# ============================================================
# DEPENDENCY TREES
# ============================================================

class ConlluParseError(AbsaError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}", line=line)
        self.line = line


class TreeValidationError(AbsaError):
    def __init__(self, message: str, sentence_id: Optional[str], cycle: Optional[Sequence[int]] = None):
        label = sentence_id if sentence_id is not None else '<no sent_id>'
        super().__init__(f"tree {label}: {message}", sentence_id=sentence_id,
                         cycle=list(cycle) if cycle else None)
        self.sentence_id = sentence_id
        self.cycle = list(cycle) if cycle else None


# ============================================================
# EMBEDDINGS
# ============================================================

class VectorFormatError(AbsaError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}", line=line)
        self.line = line


# ============================================================
# TRAINING / CHECKPOINTS
# ============================================================

class TrainingDivergedError(AbsaError):
    def __init__(self, epoch: int, sentence_id: str, loss: float):
        super().__init__(
            f"non-finite loss {loss} at epoch {epoch}, sentence {sentence_id}",
            epoch=epoch, sentence_id=sentence_id, loss=str(loss),
        )
        self.epoch = epoch
        self.sentence_id = sentence_id


class CheckpointIntegrityError(AbsaError):
    pass


class UnsupportedCheckpointVersion(AbsaError):
    def __init__(self, found: int, supported: int):
        super().__init__(f"checkpoint format version {found} is not supported (expected {supported})",
                         found=found, supported=supported)


class CheckpointConfigError(AbsaError):
    pass
