"""
Experiment runner: build a tagger from a RunConfig, train/evaluate on a
train/test split, run review-level k-fold cross-validation, and sweep the
variant matrix.

Folds and variants are independent jobs; each writes only inside its own
output subdirectory, so they can run in parallel worker processes.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from joblib import Parallel, delayed

from ml.corpus_absa import Corpus, kfold_split, train_dev_split
from ml.deptree_absa import UPOS_TAGS
from ml.experiments_absa.config_models import RunConfig, get_variant_config
from ml.features_absa import (
    TaggingInstance,
    attach_contextual,
    build_vocab,
    extend_table,
    load_contextual_vectors,
    load_word_vectors,
)
from ml.metrics_absa import evaluation_record
from ml.pipeline_absa import ingest_files, instances_for_corpus
from ml.tagger_absa import TaggerModel, save_checkpoint
from ml.train_absa_tagger import train
from ml.utils import save_json

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ('weighted_f1', 'macro_f1_all', 'macro_f1_bi', 'span_f1')


def load_split(cfg: RunConfig, split: str) -> Tuple[Corpus, List[TaggingInstance], Dict[str, Any]]:
    """Ingest the configured train or test split (trees only when the model uses them)."""
    xml = cfg.path(f"{split}_xml")
    conllu = cfg.path(f"{split}_conllu") if cfg.model.needs_trees else None
    corpus, instances, report = ingest_files(
        xml,
        conllu,
        uncased=cfg.model.uncased,
        split_tag=split,
        on_overlap=cfg.on_overlap,
    )
    if cfg.model.word_source == 'contextual':
        instances = attach_contextual(instances, load_contextual_vectors(cfg.path(f"{split}_contextual")))
    return corpus, instances, report


def build_model(cfg: RunConfig, train_instances: Sequence[TaggingInstance]) -> TaggerModel:
    """
    Fresh tagger for the config, with tables sized from the training data.

    Pretrained tables set word_dim / pos_dim from the vector files.
    """
    model_cfg = cfg.model
    word_table = pos_table = None
    vocab = build_vocab(inst.tokens for inst in train_instances)

    if model_cfg.word_source == 'table' and model_cfg.embedding_init == 'pretrained':
        word_table = load_word_vectors(cfg.path('word_vectors'), lowercase=model_cfg.uncased)
        if cfg.extend_vocab:
            word_table, added = extend_table(word_table, vocab, seed=model_cfg.seed)
            if added:
                logger.warning("%d training words missing from %s got random vectors",
                               added, cfg.paths['word_vectors'])
        model_cfg = replace(model_cfg, word_dim=word_table.dim)

    if model_cfg.use_pos and model_cfg.pos_init == 'pretrained':
        pos_table = load_word_vectors(cfg.path('pos_vectors'))
        pos_table, added = extend_table(pos_table, UPOS_TAGS, seed=model_cfg.seed + 1)
        if added:
            logger.warning("%d UPOS tags missing from %s got random vectors", added, cfg.paths['pos_vectors'])
        model_cfg = replace(model_cfg, pos_dim=pos_table.dim)

    return TaggerModel.build(model_cfg, word_vocab=vocab, word_table=word_table, pos_table=pos_table)


def predict_records(model: TaggerModel, instances: Sequence[TaggingInstance]) -> List[TaggingInstance]:
    """Copies of the instances whose labels are the model's Viterbi output."""
    return [replace(inst, labels=model.predict(inst)) for inst in instances]


def evaluate_instances(model: TaggerModel, instances: Sequence[TaggingInstance]) -> Dict[str, Any]:
    gold = [inst.labeled() for inst in instances]
    pred = [inst.labeled(labels) for inst, labels in zip(instances, model.predict_many(instances))]
    return evaluation_record(gold, pred)


def flatten_scores(record: Dict[str, Any]) -> Dict[str, float]:
    token = record['token']
    return {
        'weighted_f1': token['weighted_f1'],
        'macro_f1_all': token['macro_f1_all'],
        'macro_f1_bi': token['macro_f1_bi'],
        'span_f1': record['span']['f1'],
    }


def fit(
    cfg: RunConfig,
    train_corpus: Corpus,
    train_instances: Sequence[TaggingInstance],
    verbose: bool = False,
) -> Tuple[TaggerModel, List[Dict[str, float]]]:
    """Train on a corpus, holding out a review-level dev set when dev_fraction > 0."""
    dev = None
    fit_instances = list(train_instances)
    if cfg.training.dev_fraction > 0:
        fit_corpus, dev_corpus = train_dev_split(train_corpus, cfg.training.dev_fraction, cfg.seed)
        fit_instances = instances_for_corpus(fit_corpus, train_instances)
        dev = instances_for_corpus(dev_corpus, train_instances)
    model = build_model(cfg, fit_instances)
    return train(fit_instances, dev, model, cfg.training, verbose=verbose)


def run_fold(
    cfg: RunConfig,
    fold: int,
    train_corpus: Corpus,
    test_corpus: Corpus,
    instances: Sequence[TaggingInstance],
    out_dir: Optional[Path],
) -> Dict[str, Any]:
    """Train and evaluate one fold; writes report/history/checkpoint under out_dir/fold_<i>."""
    train_instances = instances_for_corpus(train_corpus, instances)
    test_instances = instances_for_corpus(test_corpus, instances)
    model, history = fit(cfg, train_corpus, train_instances)
    record = evaluate_instances(model, test_instances)
    record.update({
        'fold': fold,
        'train_reviews': train_corpus.n_reviews,
        'test_reviews': test_corpus.n_reviews,
        'test_review_ids': [r.id for r in test_corpus.reviews],
    })
    if out_dir is not None:
        fold_dir = Path(out_dir) / f"fold_{fold}"
        save_json(record, fold_dir / 'report.json')
        save_json(history, fold_dir / 'history.json')
        save_checkpoint(model, fold_dir / 'model.ckpt')
    return record


def summarize_folds(records: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """Mean and sample standard deviation (ddof=1) of each score across folds."""
    rows = [{'fold': r['fold'], **flatten_scores(r)} for r in records]
    frame = pd.DataFrame(rows).set_index('fold')
    return {
        'k': len(records),
        'split_level': 'review',
        'mean': {m: float(frame[m].mean()) for m in SUMMARY_METRICS},
        'std': {m: float(frame[m].std(ddof=1)) for m in SUMMARY_METRICS},
        'folds': rows,
    }


def run_kfold(
    cfg: RunConfig,
    corpus: Corpus,
    instances: Sequence[TaggingInstance],
    out_dir: Optional[Path] = None,
) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    splits = kfold_split(corpus, cfg.k, cfg.seed)
    jobs = (delayed(run_fold)(cfg, i, tr, te, instances, out_dir) for i, (tr, te) in enumerate(splits))
    records = Parallel(n_jobs=cfg.jobs)(jobs)
    records = sorted(records, key=lambda r: r['fold'])
    summary = summarize_folds(records)
    if out_dir is not None:
        save_json(summary, Path(out_dir) / 'summary.json')
        pd.DataFrame(summary['folds']).to_csv(Path(out_dir) / 'folds.csv', index=False)
    return records, summary


def run_train_test(cfg: RunConfig, out_dir: Optional[Path] = None, verbose: bool = False) -> Dict[str, Any]:
    train_corpus, train_instances, _ = load_split(cfg, 'train')
    _, test_instances, _ = load_split(cfg, 'test')
    model, history = fit(cfg, train_corpus, train_instances, verbose=verbose)
    record = evaluate_instances(model, test_instances)
    if out_dir is not None:
        save_json(record, Path(out_dir) / 'report.json')
        save_json(history, Path(out_dir) / 'history.json')
        save_checkpoint(model, Path(out_dir) / 'model.ckpt')
    return record


def run_variant(cfg: RunConfig, variant: str, out_dir: Optional[Path], protocol: str) -> Dict[str, Any]:
    """One matrix row: apply the variant, validate, then train/test or k-fold."""
    vcfg = cfg.with_overrides({'variant': variant})
    vdir = Path(out_dir) / variant if out_dir is not None else None
    row: Dict[str, Any] = {'variant': variant, 'table': get_variant_config(variant)['table']}
    if protocol == 'kfold':
        vcfg.validate(require=('train_xml',))
        corpus, instances, _ = load_split(vcfg, 'train')
        # folds of one variant run sequentially; variants are the parallel unit here
        _, summary = run_kfold(replace(vcfg, jobs=1), corpus, instances, vdir)
        row.update({f"{m}_mean": summary['mean'][m] for m in SUMMARY_METRICS})
        row.update({f"{m}_std": summary['std'][m] for m in SUMMARY_METRICS})
    else:
        vcfg.validate(require=('train_xml', 'test_xml'))
        row.update(flatten_scores(run_train_test(vcfg, vdir)))
    return row


def run_matrix(
    cfg: RunConfig,
    variants: Sequence[str],
    out_dir: Optional[Path] = None,
    protocol: str = 'split',
) -> pd.DataFrame:
    """Run each variant and collect one summary row per variant."""
    rows = Parallel(n_jobs=cfg.jobs)(delayed(run_variant)(cfg, v, out_dir, protocol) for v in variants)
    frame = pd.DataFrame(rows)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        frame.to_csv(Path(out_dir) / 'matrix.csv', index=False)
        save_json(frame.to_dict(orient='records'), Path(out_dir) / 'matrix.json')
    return frame
