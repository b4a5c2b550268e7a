#!/usr/bin/env python3
"""
Dataset building: SemEval XML (+ optional CoNLL-U parses) -> TaggingInstance records.

Joins each corpus sentence with its dependency tree (by `# sent_id` when
every tree has one, otherwise by document order), labels whitespace tokens
with B/I/O, projects UPOS tags and level indices onto those tokens, and
collects an ingestion report.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml.corpus_absa import (
    Corpus,
    Opinion,
    Review,
    Sentence,
    corpus_to_xml,
    parse_semeval_xml,
    resolve_overlaps,
    to_bio,
    whitespace_tokenize,
)
from ml.deptree_absa import (
    DepToken,
    DepTree,
    align_tokens,
    level_indices,
    parse_conllu,
    project_to_tokens,
    trees_to_conllu,
)
from ml.errors_absa import AlignmentError, ArgumentError
from ml.features_absa import TaggingInstance
from ml.metrics_absa import extract_spans
from ml.utils import PathLike, iter_jsonl, read_bytes, read_text, write_jsonl

logger = logging.getLogger(__name__)

OVERLAP_POLICIES = ('resolve', 'error')


def join_trees(sentences: Sequence[Sentence], trees: Sequence[DepTree]) -> List[DepTree]:
    """
    Pair every sentence with its tree.

    Raises:
        AlignmentError: a sentence has no tree, two trees share a sent_id,
            or counts differ
    """
    if trees and all(t.sentence_id is not None for t in trees):
        by_id: Dict[str, DepTree] = {}
        for tree in trees:
            if tree.sentence_id in by_id:
                raise AlignmentError("duplicate CoNLL-U sent_id", sentence_id=tree.sentence_id)
            by_id[tree.sentence_id] = tree
        joined = []
        for sentence in sentences:
            if sentence.id not in by_id:
                raise AlignmentError("no CoNLL-U tree with this sent_id", sentence_id=sentence.id)
            joined.append(by_id[sentence.id])
        if len(by_id) != len(sentences):
            extra = sorted(set(by_id) - {s.id for s in sentences})
            raise AlignmentError(f"{len(extra)} CoNLL-U trees match no sentence: {extra[:5]}",
                                 sentence_id=extra[0] if extra else '<none>')
        return joined

    if len(trees) != len(sentences):
        first = sentences[min(len(trees), len(sentences) - 1)].id if sentences else '<none>'
        raise AlignmentError(f"{len(sentences)} sentences but {len(trees)} CoNLL-U trees (joined by order)",
                             sentence_id=first)
    return list(trees)


def build_instances(
    corpus: Corpus,
    trees: Optional[Sequence[DepTree]] = None,
    on_overlap: str = 'resolve',
) -> Tuple[List[TaggingInstance], Dict[str, object]]:
    """
    Label every sentence of the corpus and attach syntax when trees are given.

    Args:
        corpus: Parsed corpus (already case-folded if the model is uncased)
        trees: Dependency trees for the corpus sentences, or None
        on_overlap: 'resolve' keeps the longest of overlapping opinions,
            'error' raises OverlapError

    Returns:
        (instances in corpus order, ingestion report dict)
    """
    if on_overlap not in OVERLAP_POLICIES:
        raise ArgumentError(f"on_overlap must be one of {OVERLAP_POLICIES}, got {on_overlap!r}")

    sentences = corpus.sentences
    joined = join_trees(sentences, trees) if trees is not None else [None] * len(sentences)

    instances = []
    dropped = []
    alignment_warnings = []
    positions: Counter = Counter()
    label_counts: Counter = Counter()
    n_null = n_merged = n_spans = 0

    for sentence, tree in zip(sentences, joined):
        tokens, spans = whitespace_tokenize(sentence.text)
        n_null += sum(1 for op in sentence.opinions if not op.has_span)
        span_ops = sentence.span_opinions
        n_merged += len(span_ops) - len({op.span for op in span_ops})

        if on_overlap == 'resolve':
            sentence, warnings = resolve_overlaps(sentence, spans)
            dropped.extend(warnings)
        labeled = to_bio(sentence, tokens, spans)

        pos_tags = levels = None
        if tree is not None:
            mapping = align_tokens(tokens, tree, sentence.id)
            for i, run in mapping.items():
                if len(run) > 1:
                    alignment_warnings.append({
                        'sentence_id': sentence.id,
                        'token': tokens[i],
                        'tree_tokens': [tree.token(j).form for j in run],
                    })
            pos_tags, levels = project_to_tokens(mapping, tree, level_indices(tree))

        for start, end in extract_spans(labeled.labels):
            n_spans += 1
            positions.update(range(start + 1, end + 1))
        label_counts.update(labeled.labels)

        instances.append(TaggingInstance(
            sentence_id=sentence.id,
            tokens=labeled.tokens,
            labels=labeled.labels,
            token_spans=tuple(spans),
            pos_tags=tuple(pos_tags) if pos_tags is not None else None,
            levels=tuple(levels) if levels is not None else None,
            text=sentence.text,
        ))

    report = {
        'split': corpus.split_tag,
        'reviews': corpus.n_reviews,
        'sentences': len(sentences),
        'opinions': corpus.n_opinions,
        'null_opinions': n_null,
        'merged_duplicate_opinions': n_merged,
        'aspect_spans': n_spans,
        'tokens': int(sum(label_counts.values())),
        'label_counts': {label: label_counts.get(label, 0) for label in ('B', 'I', 'O')},
        'has_trees': trees is not None,
        'dropped_opinions': dropped,
        'alignment_warnings': alignment_warnings,
        'aspect_word_positions': {str(k): positions[k] for k in sorted(positions)},
    }
    return instances, report


def ingest_files(
    xml_path: PathLike,
    conllu_path: Optional[PathLike] = None,
    uncased: bool = True,
    split_tag: str = 'unsplit',
    on_overlap: str = 'resolve',
) -> Tuple[Corpus, List[TaggingInstance], Dict[str, object]]:
    """Read an XML corpus (and its parses) from disk and build instances."""
    corpus = parse_semeval_xml(read_bytes(xml_path), split_tag=split_tag, uncased=uncased, source=str(xml_path))
    trees = parse_conllu(read_text(conllu_path)) if conllu_path else None
    instances, report = build_instances(corpus, trees, on_overlap=on_overlap)
    report['source'] = {'xml': Path(xml_path).name, 'conllu': Path(conllu_path).name if conllu_path else None}
    return corpus, instances, report


def instances_for_corpus(
    corpus: Corpus,
    instances: Sequence[TaggingInstance],
) -> List[TaggingInstance]:
    """Instances of the corpus' sentences, in corpus order."""
    by_id = {inst.sentence_id: inst for inst in instances}
    return [by_id[s.id] for s in corpus.sentences]


def write_dataset(instances: Sequence[TaggingInstance], filepath: PathLike) -> int:
    return write_jsonl((inst.to_record() for inst in instances), filepath)


def read_dataset(filepath: PathLike) -> List[TaggingInstance]:
    return [TaggingInstance.from_record(record) for record in iter_jsonl(filepath)]


# ============================================================
# SYNTHETIC CORPUS
# ============================================================

SYNTH_ASPECTS = (
    ('servis',), ('yemekler',), ('mekan',), ('tatlılar',), ('kahve',),
    ('fiyatlar',), ('lokum',), ('ördek', 'göğsü'), ('deniz', 'ürünleri'),
)
SYNTH_OTHER_NOUNS = (('akşam',), ('gün',), ('hafta', 'sonu'))
SYNTH_ADVERBS = ('gerçekten', 'çok', 'oldukça', 'biraz')
SYNTH_ADJECTIVES = {
    'harika': 'positive', 'güzel': 'positive', 'lezzetli': 'positive',
    'kötü': 'negative', 'pahalı': 'negative', 'soğuk': 'negative',
}


def _synthetic_sentence(rng: np.random.Generator, sentence_id: str, with_aspect: bool):
    adverb = SYNTH_ADVERBS[rng.integers(len(SYNTH_ADVERBS))]
    adjectives = sorted(SYNTH_ADJECTIVES)
    adjective = adjectives[rng.integers(len(adjectives))]
    pool = SYNTH_ASPECTS if with_aspect else SYNTH_OTHER_NOUNS
    noun = pool[rng.integers(len(pool))]
    use_det = bool(rng.integers(2))

    words = [adverb, adjective] + (['bu'] if use_det else []) + list(noun)
    text = ' '.join(words) + '.'

    # Tree: the (last) noun is the root; everything else hangs off it.
    n = len(words)
    root = n
    rows = [(adverb, 'ADV', 2, 'advmod'), (adjective, 'ADJ', root, 'amod')]
    if use_det:
        rows.append(('bu', 'DET', root, 'det'))
    for word in noun[:-1]:
        rows.append((word, 'NOUN', root, 'nmod:poss'))
    rows.append((noun[-1], 'NOUN', 0, 'root'))
    rows.append(('.', 'PUNCT', root, 'punct'))
    tokens = tuple(
        DepToken(index=i, form=form, upos=upos, head=head, deprel=deprel)
        for i, (form, upos, head, deprel) in enumerate(rows, 1)
    )
    tree = DepTree(sentence_id=sentence_id, tokens=tokens, root_index=root)

    opinions = ()
    if with_aspect:
        target = ' '.join(noun)
        start = text.index(target, len(adverb) + len(adjective) + 2)
        opinions = (Opinion(target=target, category='GENERAL', polarity=SYNTH_ADJECTIVES[adjective],
                            start=start, end=start + len(target)),)
    return Sentence(id=sentence_id, text=text, opinions=opinions), tree


def make_synthetic_corpus(
    n_sentences: int = 50,
    seed: int = 13,
    sentences_per_review: int = 2,
    aspect_rate: float = 0.8,
) -> Tuple[Corpus, List[DepTree]]:
    """
    Small corpus with planted aspects and matching parses.

    Every sentence is "<adverb> <adjective> [bu] <noun phrase>." whose parse
    puts the final noun at the root; aspect noun phrases are annotated, so
    aspect tokens always sit at (or right under) the tree root.
    """
    if n_sentences < 1 or sentences_per_review < 1:
        raise ArgumentError("n_sentences and sentences_per_review must be >= 1")
    rng = np.random.default_rng(seed)
    reviews = []
    trees = []
    for r, first in enumerate(range(0, n_sentences, sentences_per_review)):
        sentences = []
        for k in range(first, min(first + sentences_per_review, n_sentences)):
            sentence, tree = _synthetic_sentence(rng, f"s{r}:{k - first}", bool(rng.random() < aspect_rate))
            sentences.append(sentence)
            trees.append(tree)
        reviews.append(Review(id=f"s{r}", sentences=tuple(sentences)))
    return Corpus(reviews=tuple(reviews)), trees


def write_synthetic_corpus(out_dir: PathLike, n_sentences: int = 50, seed: int = 13) -> Tuple[Path, Path]:
    """Write synthetic.xml and synthetic.conllu into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, trees = make_synthetic_corpus(n_sentences, seed)
    xml_path = out / 'synthetic.xml'
    conllu_path = out / 'synthetic.conllu'
    xml_path.write_bytes(corpus_to_xml(corpus))
    conllu_path.write_text(trees_to_conllu(trees), encoding='utf-8')
    return xml_path, conllu_path
