"""
Run configuration and the experiment matrix for the aspect tagger.

A run is described by one flat YAML file of key: value pairs (paths,
model switches, training settings), optionally overridden from the
command line. Every experiment configuration is a named variant:

    BiLSTM-CRF rows (word table input):
        word/POS init  {random, pretrained}
        POS embedding  {off, on}
        position       {none, sequential, tree}

    Contextual rows (frozen precomputed word vectors):
        POS embedding  {none, random, pretrained}
        position       {none, sequential, tree}

Each variant is a set of overrides applied on top of the loaded config.
"""

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from ml.errors_absa import ConfigError
from ml.tagger_absa import TaggerConfig
from ml.train_absa_tagger import TrainConfig

PATH_KEYS = (
    'train_xml', 'test_xml', 'train_conllu', 'test_conllu',
    'word_vectors', 'pos_vectors', 'train_contextual', 'test_contextual',
    'checkpoint', 'out_dir',
)
RUN_KEYS = ('k', 'jobs', 'seed', 'extend_vocab', 'on_overlap', 'variant')
MODEL_KEYS = tuple(f.name for f in fields(TaggerConfig) if f.name != 'seed')
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != 'seed')

def default_jobs() -> int:
    """Worker count from $ABSA_JOBS (default 1)."""
    raw = os.getenv('ABSA_JOBS', '1')
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"ABSA_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError(f"ABSA_JOBS must be >= 1, got {jobs}")
    return jobs


def _position_label(mode: str) -> str:
    return {'none': 'no position', 'sequential': 'positional encoding', 'tree': 'tree positional encoding'}[mode]


def _build_variants() -> Dict[str, Dict[str, Any]]:
    variants: Dict[str, Dict[str, Any]] = {}
    short = {'none': 'nopos', 'sequential': 'pe', 'tree': 'tpe'}

    for init in ('random', 'pretrained'):
        init_name = 'rand' if init == 'random' else 'w2v'
        for use_pos in (False, True):
            for mode in ('none', 'sequential', 'tree'):
                name = f"lstm-{init_name}-word{'+pos' if use_pos else ''}-{short[mode]}"
                variants[name] = {
                    'name': name,
                    'table': 'bilstm-crf',
                    'description': (f"{init} word{' + POS' if use_pos else ''} embeddings, "
                                    f"{_position_label(mode)}"),
                    'overrides': {
                        'word_source': 'table',
                        'embedding_init': init,
                        'use_pos': use_pos,
                        'pos_init': init,
                        'position_mode': mode,
                    },
                }

    for pos in ('none', 'random', 'pretrained'):
        pos_name = {'none': 'nopostag', 'random': 'pos-rand', 'pretrained': 'pos-w2v'}[pos]
        for mode in ('none', 'sequential', 'tree'):
            name = f"ctx-{pos_name}-{short[mode]}"
            variants[name] = {
                'name': name,
                'table': 'contextual',
                'description': f"frozen contextual vectors, POS {pos}, {_position_label(mode)}",
                'overrides': {
                    'word_source': 'contextual',
                    'use_pos': pos != 'none',
                    'pos_init': 'random' if pos == 'none' else pos,
                    'position_mode': mode,
                },
            }
    return variants


VARIANT_CONFIGS: Dict[str, Dict[str, Any]] = _build_variants()


def get_variant_config(variant: str) -> Dict[str, Any]:
    """Get configuration for a specific variant."""
    if variant not in VARIANT_CONFIGS:
        raise ConfigError(f"Unknown variant: {variant}. Must be one of {list(VARIANT_CONFIGS.keys())}")
    return VARIANT_CONFIGS[variant]


def print_variant_summary(variant: str) -> None:
    config = get_variant_config(variant)
    print(f"\n{'='*60}")
    print(f"Variant {variant}")
    print(f"{'='*60}")
    print(f"Table:       {config['table']}")
    print(f"Description: {config['description']}")
    for key, value in config['overrides'].items():
        print(f"  {key:15s} {value}")


# ============================================================
# RUN CONFIG
# ============================================================

@dataclass
class RunConfig:
    model: TaggerConfig = field(default_factory=TaggerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: Dict[str, Optional[str]] = field(default_factory=lambda: {key: None for key in PATH_KEYS})
    k: int = 5
    jobs: int = field(default_factory=default_jobs)
    seed: int = 13
    extend_vocab: bool = True
    on_overlap: str = 'resolve'
    variant: Optional[str] = None

    def path(self, key: str) -> Optional[Path]:
        value = self.paths.get(key)
        return Path(value) if value else None

    def with_overrides(self, values: Dict[str, Any]) -> 'RunConfig':
        """New RunConfig with flat key overrides applied (unknown keys rejected)."""
        model_updates, train_updates, path_updates, run_updates = {}, {}, {}, {}
        for key, value in values.items():
            if key in PATH_KEYS:
                path_updates[key] = None if value is None else str(value)
            elif key in RUN_KEYS:
                run_updates[key] = value
            elif key in MODEL_KEYS:
                model_updates[key] = value
            elif key in TRAIN_KEYS:
                train_updates[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")

        updated = replace(self, paths={**self.paths, **path_updates}, **run_updates)
        try:
            updated.model = replace(updated.model, **model_updates)
            updated.training = replace(updated.training, **train_updates)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        if 'variant' in run_updates and run_updates['variant']:
            updated = updated.with_overrides(get_variant_config(run_updates['variant'])['overrides'])
        if 'seed' in run_updates:
            updated.model = replace(updated.model, seed=int(updated.seed))
            updated.training = replace(updated.training, seed=int(updated.seed))
        return updated

    def validate(self, require: Sequence[str] = ()) -> 'RunConfig':
        """
        Check the config before any output is written.

        Args:
            require: Path keys this command cannot run without

        Raises:
            ConfigError: bad values, missing or nonexistent inputs, or switches
                that need inputs the config does not name
        """
        self.model.validate()
        self.training.validate()
        if self.training.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.training.learning_rate}")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.on_overlap not in ('resolve', 'error'):
            raise ConfigError(f"on_overlap must be 'resolve' or 'error', got {self.on_overlap!r}")

        for key in require:
            if not self.paths.get(key):
                raise ConfigError(f"config needs '{key}'")
        for key in PATH_KEYS:
            if key in ('checkpoint', 'out_dir'):
                continue
            value = self.paths.get(key)
            if value and not Path(value).exists():
                raise ConfigError(f"{key} not found: {value}")

        m = self.model
        for split in ('train', 'test'):
            if not self.paths.get(f"{split}_xml"):
                continue
            if m.needs_trees and not self.paths.get(f"{split}_conllu"):
                raise ConfigError(
                    f"position_mode={m.position_mode!r}, use_pos={m.use_pos} need '{split}_conllu'"
                )
            if m.word_source == 'contextual' and not self.paths.get(f"{split}_contextual"):
                raise ConfigError(f"word_source='contextual' needs '{split}_contextual'")
        if m.word_source == 'table' and m.embedding_init == 'pretrained' and not self.paths.get('word_vectors'):
            raise ConfigError("embedding_init='pretrained' needs 'word_vectors'")
        if m.use_pos and m.pos_init == 'pretrained' and not self.paths.get('pos_vectors'):
            raise ConfigError("pos_init='pretrained' needs 'pos_vectors'")
        return self

    def to_dict(self) -> Dict[str, Any]:
        flat: Dict[str, Any] = dict(self.paths)
        flat.update({key: getattr(self, key) for key in RUN_KEYS})
        flat.update({key: getattr(self.model, key) for key in MODEL_KEYS})
        flat.update({key: getattr(self.training, key) for key in TRAIN_KEYS})
        return flat


def load_run_config(filepath: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults <- YAML file <- overrides (flags and --set)."""
    config = RunConfig()
    if filepath is not None:
        path = Path(filepath)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            try:
                values = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: invalid YAML ({e})") from e
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping of key: value pairs")
        base = path.parent
        for key in PATH_KEYS:
            if values.get(key) and not Path(str(values[key])).is_absolute():
                values[key] = str(base / str(values[key]))
        config = config.with_overrides(values)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def parse_set_overrides(items: Sequence[str]) -> Dict[str, Any]:
    """Turn ['hidden_size=32', 'use_pos=true'] into typed values (YAML scalars)."""
    values = {}
    for item in items or []:
        key, sep, raw = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = yaml.safe_load(raw) if raw.strip() else None
    return values


def list_variants(table: Optional[str] = None) -> List[str]:
    return [name for name, cfg in VARIANT_CONFIGS.items() if table is None or cfg['table'] == table]


if __name__ == '__main__':
    for variant in VARIANT_CONFIGS:
        print_variant_summary(variant)
