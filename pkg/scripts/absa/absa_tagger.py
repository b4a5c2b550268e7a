#!/usr/bin/env python3
"""
Command-line entry point for the aspect term tagger.

Subcommands:
    ingest     XML (+ CoNLL-U) -> dataset.jsonl + report.json
    train      train on train_xml, write checkpoint + history (and test report when test_xml is set)
    eval       score a checkpoint on a dataset or an XML split
    kfold      review-level k-fold cross-validation
    predict    tag raw sentences or a dataset, with aspect character offsets
    gradcheck  finite-difference check of every trainable tensor
    matrix     run a list of named variants (train/test or k-fold per variant)
    synth      write the synthetic corpus (XML + CoNLL-U)

Usage:
    python3 scripts/absa/absa_tagger.py synth --out data/absa/synthetic
    python3 scripts/absa/absa_tagger.py train --config data/absa/configs/example.yaml --out runs/demo
    python3 scripts/absa/absa_tagger.py kfold --config data/absa/configs/example.yaml --jobs 4 --out runs/kfold
    python3 scripts/absa/absa_tagger.py predict --checkpoint runs/demo/model.ckpt --text "lokumu tavsiye ederim."

Every command validates its configuration before writing anything. On
failure a JSON error record is printed to stderr and the exit code is 1.

Environment Variables:
    ABSA_JOBS: Default worker count for kfold/matrix (default: 1)
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from ml.corpus_absa import SPLIT_TAGS, fold_case, whitespace_tokenize
from ml.errors_absa import AbsaError, ArgumentError, ConfigError
from ml.experiments_absa.config_models import (
    VARIANT_CONFIGS,
    RunConfig,
    list_variants,
    load_run_config,
    parse_set_overrides,
)
from ml.experiments_absa.run_absa import (
    build_model,
    evaluate_instances,
    fit,
    load_split,
    predict_records,
    run_kfold,
    run_matrix,
)
from ml.features_absa import TaggingInstance, attach_contextual, load_contextual_vectors
from ml.metrics_absa import extract_spans, spans_to_char_offsets
from ml.pipeline_absa import (
    build_instances,
    ingest_files,
    make_synthetic_corpus,
    read_dataset,
    write_dataset,
    write_synthetic_corpus,
)
from ml.tagger_absa import TaggerModel, load_checkpoint, save_checkpoint
from ml.train_absa_tagger import gradient_check_report
from ml.utils import banner, save_json, write_jsonl

PATH_FLAGS = (
    'train_xml', 'test_xml', 'train_conllu', 'test_conllu',
    'word_vectors', 'pos_vectors', 'train_contextual', 'test_contextual', 'checkpoint',
)


# ============================================================
# CONFIG
# ============================================================

def run_config_from_args(args) -> RunConfig:
    """Defaults <- --config file <- --set items <- explicit flags."""
    overrides = parse_set_overrides(args.set)
    for key in PATH_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.out is not None:
        overrides['out_dir'] = args.out
    for key in ('seed', 'jobs', 'variant'):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_run_config(args.config, overrides)


def out_dir(cfg: RunConfig, required: bool = True):
    path = cfg.path('out_dir')
    if path is None and required:
        raise ConfigError("an output directory is needed (--out or 'out_dir' in the config)")
    return path


def _print_scores(record, quiet: bool):
    if quiet:
        return
    token, span = record['token'], record['span']
    print(f"  Sentences:        {record['n_sentences']}")
    print(f"  Weighted F1:      {token['weighted_f1']:.4f}")
    print(f"  Macro F1 (B,I,O): {token['macro_f1_all']:.4f}")
    print(f"  Macro F1 (B,I):   {token['macro_f1_bi']:.4f}")
    print(f"  Span F1:          {span['f1']:.4f}  (P {span['precision']:.4f}, R {span['recall']:.4f})")


# ============================================================
# COMMANDS
# ============================================================

def cmd_ingest(args) -> int:
    cfg = run_config_from_args(args)
    xml = args.xml or cfg.paths.get('train_xml')
    conllu = args.conllu or (cfg.paths.get('train_conllu') if not args.xml else None)
    if not xml:
        raise ConfigError("ingest needs --xml (or 'train_xml' in the config)")
    cfg.validate()
    out = out_dir(cfg)

    banner("INGEST", args.quiet)
    _, instances, report = ingest_files(
        xml, conllu, uncased=cfg.model.uncased, split_tag=args.split, on_overlap=cfg.on_overlap,
    )
    report['uncased'] = cfg.model.uncased
    report['on_overlap'] = cfg.on_overlap
    n = write_dataset(instances, out / 'dataset.jsonl')
    save_json(report, out / 'report.json')

    if not args.quiet:
        print(f"📂 {report['source']['xml']}: {report['reviews']} reviews, {report['sentences']} sentences, "
              f"{report['opinions']} opinions ({report['null_opinions']} NULL)")
        print(f"  Aspect spans:        {report['aspect_spans']}")
        print(f"  Dropped opinions:    {len(report['dropped_opinions'])}")
        print(f"  Alignment warnings:  {len(report['alignment_warnings'])}")
        print(f"\n✅ Wrote {n} instances to {out / 'dataset.jsonl'}")
    return 0


def cmd_train(args) -> int:
    cfg = run_config_from_args(args)
    cfg.validate(require=('train_xml',))
    out = out_dir(cfg)
    checkpoint = cfg.path('checkpoint') or out / 'model.ckpt'

    banner("TRAINING", args.quiet)
    if not args.quiet:
        print(f"  Variant:        {cfg.variant or '(none)'}")
        print(f"  Position mode:  {cfg.model.position_mode}")
        print(f"  POS embeddings: {cfg.model.use_pos}")
        print(f"  Epochs:         {cfg.training.epochs}")
        print(f"  Seed:           {cfg.seed}")

    train_corpus, train_instances, _ = load_split(cfg, 'train')
    model, history = fit(cfg, train_corpus, train_instances, verbose=not args.quiet)
    save_checkpoint(model, checkpoint)
    save_json(history, out / 'history.json')
    save_json(cfg.to_dict(), out / 'config.json')

    if cfg.paths.get('test_xml'):
        banner("TEST SPLIT", args.quiet)
        _, test_instances, _ = load_split(cfg, 'test')
        record = evaluate_instances(model, test_instances)
        save_json(record, out / 'report.json')
        _print_scores(record, args.quiet)

    if not args.quiet:
        print(f"\n✅ Checkpoint: {checkpoint}")
    return 0


def _fold_tokens(model: TaggerModel, instances):
    if not model.config.uncased:
        return list(instances)
    return [replace(inst, tokens=tuple(fold_case(t) for t in inst.tokens)) for inst in instances]


def _load_eval_instances(args, cfg: RunConfig, model: TaggerModel):
    """Instances from --dataset, or from --xml (+ --conllu) ingested with the model's casing."""
    if args.dataset:
        instances = read_dataset(args.dataset)
    elif args.xml:
        conllu = args.conllu if model.config.needs_trees else None
        if model.config.needs_trees and not conllu:
            raise ConfigError(f"checkpoint uses position_mode={model.config.position_mode!r}, "
                              f"use_pos={model.config.use_pos}; --conllu is needed")
        _, instances, _ = ingest_files(args.xml, conllu, uncased=model.config.uncased,
                                       split_tag='test', on_overlap=cfg.on_overlap)
    else:
        raise ArgumentError("give --dataset or --xml")
    instances = _fold_tokens(model, instances)
    if model.config.word_source == 'contextual':
        if not args.contextual:
            raise ConfigError("checkpoint reads contextual vectors; --contextual is needed")
        instances = attach_contextual(instances, load_contextual_vectors(args.contextual))
    return instances


def _checkpoint_path(args, cfg: RunConfig) -> Path:
    path = cfg.path('checkpoint')
    if path is None:
        raise ConfigError("--checkpoint is needed")
    return path


def cmd_eval(args) -> int:
    cfg = run_config_from_args(args)
    cfg.validate()
    quiet = args.quiet or cfg.path('out_dir') is None
    model = load_checkpoint(_checkpoint_path(args, cfg))
    instances = _load_eval_instances(args, cfg, model)

    banner("EVALUATION", quiet)
    record = evaluate_instances(model, instances)
    out = out_dir(cfg, required=False)
    if out is None:
        print(json.dumps(record, ensure_ascii=False, indent=2))
    else:
        save_json(record, out / 'eval.json')
        _print_scores(record, quiet)
    return 0


def cmd_kfold(args) -> int:
    cfg = run_config_from_args(args)
    if args.k is not None:
        cfg = cfg.with_overrides({'k': args.k})
    cfg.validate(require=('train_xml',))
    out = out_dir(cfg)

    banner(f"{cfg.k}-FOLD CROSS-VALIDATION (review level)", args.quiet)
    corpus, instances, _ = load_split(cfg, 'train')
    _, summary = run_kfold(cfg, corpus, instances, out)

    if not args.quiet:
        for row in summary['folds']:
            print(f"  Fold {row['fold']}: weighted F1 {row['weighted_f1']:.4f}, span F1 {row['span_f1']:.4f}")
        print(f"\n📊 Mean weighted F1: {summary['mean']['weighted_f1']:.4f} "
              f"(std {summary['std']['weighted_f1']:.4f})")
        print(f"✅ Summary: {out / 'summary.json'}")
    return 0


def _raw_instances(texts, model: TaggerModel):
    if model.config.needs_trees or model.config.word_source == 'contextual':
        raise ArgumentError("raw sentences can only be tagged by models without POS, tree positions "
                            "or contextual vectors; ingest the text and pass --dataset")
    instances = []
    for i, text in enumerate(texts):
        folded = fold_case(text) if model.config.uncased else text
        tokens, spans = whitespace_tokenize(folded)
        if not tokens:
            raise ArgumentError(f"input sentence {i} is empty")
        instances.append(TaggingInstance(
            sentence_id=f"input-{i}",
            tokens=tuple(tokens),
            labels=('O',) * len(tokens),
            token_spans=tuple(spans),
            text=text,
        ))
    return instances


def prediction_record(inst: TaggingInstance) -> dict:
    """Dataset record with predicted labels plus the aspect spans they encode."""
    record = inst.to_record()
    spans = extract_spans(inst.labels)
    aspects = []
    offsets = spans_to_char_offsets(spans, inst.token_spans) if inst.token_spans else [None] * len(spans)
    for (start, end), chars in zip(spans, offsets):
        aspect = {'tokens': [start, end], 'target': ' '.join(inst.tokens[start:end])}
        if chars is not None:
            aspect['from'], aspect['to'] = chars
            if inst.text is not None:
                aspect['target'] = inst.text[chars[0]:chars[1]]
        aspects.append(aspect)
    record['aspects'] = aspects
    return record


def cmd_predict(args) -> int:
    cfg = run_config_from_args(args)
    cfg.validate()
    model = load_checkpoint(_checkpoint_path(args, cfg))

    if args.text or args.input:
        texts = list(args.text or [])
        if args.input:
            with open(args.input, 'r', encoding='utf-8') as f:
                texts.extend(line.rstrip('\n') for line in f if line.strip())
        instances = _raw_instances(texts, model)
    else:
        instances = _load_eval_instances(args, cfg, model)

    records = [prediction_record(inst) for inst in predict_records(model, instances)]
    out = out_dir(cfg, required=False)
    if out is None:
        for record in records:
            print(json.dumps(record, ensure_ascii=False))
    else:
        n = write_jsonl(records, out / 'predictions.jsonl')
        if not args.quiet:
            print(f"✅ Wrote {n} predictions to {out / 'predictions.jsonl'}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = run_config_from_args(args)
    cfg.validate()

    if cfg.paths.get('train_xml'):
        _, instances, _ = load_split(cfg, 'train')
    else:
        if cfg.model.word_source == 'contextual':
            raise ConfigError("gradcheck with word_source='contextual' needs train_xml and train_contextual")
        corpus, trees = make_synthetic_corpus(n_sentences=max(args.sentences, 1), seed=cfg.seed)
        instances, _ = build_instances(corpus, trees)
    instances = instances[:args.sentences]

    model = build_model(cfg, instances)

    banner("GRADIENT CHECK", args.quiet)
    reports = {inst.sentence_id: gradient_check_report(model, inst, eps=args.eps) for inst in instances}
    worst = max(max(r.values()) for r in reports.values())
    result = {
        'eps': args.eps,
        'tolerance': args.tol,
        'max_relative_error': worst,
        'passed': worst <= args.tol,
        'sentences': reports,
    }
    out = out_dir(cfg, required=False)
    if out is not None:
        save_json(result, out / 'gradcheck.json')
    if not args.quiet:
        for name in next(iter(reports.values())):
            err = max(r[name] for r in reports.values())
            print(f"  {name:18s} {err:.3e}")
        status = "✅" if result['passed'] else "❌"
        print(f"\n{status} max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if result['passed'] else 1


def _resolve_variants(selection: str):
    if selection in ('all', None):
        return list(VARIANT_CONFIGS)
    if selection in ('bilstm-crf', 'contextual'):
        return list_variants(selection)
    names = [s.strip() for s in selection.split(',') if s.strip()]
    unknown = [n for n in names if n not in VARIANT_CONFIGS]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}")
    return names


def cmd_matrix(args) -> int:
    cfg = run_config_from_args(args)
    out = out_dir(cfg)
    variants = _resolve_variants(args.variants)
    require = ('train_xml',) if args.protocol == 'kfold' else ('train_xml', 'test_xml')
    for variant in variants:
        cfg.with_overrides({'variant': variant}).validate(require=require)

    banner(f"VARIANT MATRIX ({len(variants)} variants, protocol={args.protocol})", args.quiet)
    frame = run_matrix(cfg, variants, out, protocol=args.protocol)
    if not args.quiet:
        print(frame.to_string(index=False))
        print(f"\n✅ Matrix: {out / 'matrix.csv'}")
    return 0


def cmd_synth(args) -> int:
    if args.out is None:
        raise ConfigError("synth needs --out")
    if args.n_sentences < 1:
        raise ArgumentError(f"--n-sentences must be >= 1, got {args.n_sentences}")
    seed = args.seed if args.seed is not None else 13
    xml_path, conllu_path = write_synthetic_corpus(args.out, n_sentences=args.n_sentences, seed=seed)
    if not args.quiet:
        print(f"✅ Wrote {xml_path} and {conllu_path}")
    return 0


COMMANDS = {
    'ingest': cmd_ingest,
    'train': cmd_train,
    'eval': cmd_eval,
    'kfold': cmd_kfold,
    'predict': cmd_predict,
    'gradcheck': cmd_gradcheck,
    'matrix': cmd_matrix,
    'synth': cmd_synth,
}


# ============================================================
# ARGUMENTS
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None,
                        help='YAML run config (key: value pairs)')
    common.add_argument('--seed', type=int, default=None,
                        help='Seed for model init, shuffling and fold assignment')
    common.add_argument('--jobs', type=int, default=None,
                        help='Parallel worker processes for folds/variants (default: $ABSA_JOBS or 1)')
    common.add_argument('--out', type=str, default=None,
                        help='Output directory')
    common.add_argument('--variant', type=str, default=None, choices=sorted(VARIANT_CONFIGS),
                        metavar='VARIANT', help='Named configuration row (see --list-variants on matrix)')
    common.add_argument('--set', type=str, action='append', default=[], metavar='KEY=VALUE',
                        help='Override any config key (repeatable)')
    common.add_argument('--quiet', action='store_true',
                        help='Only warnings and errors')
    for key in PATH_FLAGS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=key, type=str, default=None,
                            help=f"Override '{key}'")

    parser = argparse.ArgumentParser(description='Aspect term extraction with a BiLSTM-CRF tagger')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('ingest', parents=[common], help='XML (+ CoNLL-U) -> JSON-lines dataset')
    p.add_argument('--xml', type=str, default=None, help='SemEval XML file')
    p.add_argument('--conllu', type=str, default=None, help='Matching CoNLL-U parses')
    p.add_argument('--split', type=str, default='unsplit', choices=SPLIT_TAGS)

    sub.add_parser('train', parents=[common], help='Train and save a checkpoint')

    for name, help_text in (('eval', 'Score a checkpoint'), ('predict', 'Tag sentences with a checkpoint')):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument('--dataset', type=str, default=None, help='JSON-lines dataset written by ingest')
        p.add_argument('--xml', type=str, default=None, help='SemEval XML file')
        p.add_argument('--conllu', type=str, default=None, help='CoNLL-U parses for --xml')
        p.add_argument('--contextual', type=str, default=None, help='Contextual vectors (JSON lines)')
        if name == 'predict':
            p.add_argument('--text', type=str, action='append', default=None, help='Raw sentence (repeatable)')
            p.add_argument('--input', type=str, default=None, help='Text file, one sentence per line')

    p = sub.add_parser('kfold', parents=[common], help='Review-level k-fold cross-validation')
    p.add_argument('--k', type=int, default=None, help='Number of folds (default: config k)')

    p = sub.add_parser('gradcheck', parents=[common], help='Finite-difference gradient check')
    p.add_argument('--sentences', type=int, default=3, help='Sentences to check (default: 3)')
    p.add_argument('--eps', type=float, default=1e-5, help='Central difference step (default: 1e-5)')
    p.add_argument('--tol', type=float, default=1e-4, help='Max relative error (default: 1e-4)')

    p = sub.add_parser('matrix', parents=[common], help='Run named variants')
    p.add_argument('--variants', type=str, default='all',
                   help="'all', 'bilstm-crf', 'contextual' or a comma-separated list")
    p.add_argument('--protocol', type=str, default='split', choices=['split', 'kfold'])

    p = sub.add_parser('synth', parents=[common], help='Write the synthetic corpus')
    p.add_argument('--n-sentences', type=int, default=50)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format='%(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )

    try:
        return COMMANDS[args.command](args)
    except AbsaError as e:
        record = {'status': 'error', 'command': args.command, **e.to_record()}
    except (OSError, ValueError) as e:
        record = {'status': 'error', 'command': args.command, 'error': type(e).__name__, 'message': str(e)}
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
    return 1


if __name__ == '__main__':
    sys.exit(main())
