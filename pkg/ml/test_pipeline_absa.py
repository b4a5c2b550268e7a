#!/usr/bin/env python3
"""
Tests for corpus ingestion, tree joining and the synthetic corpus.
"""

from pathlib import Path

import pytest

from ml.corpus_absa import parse_semeval_xml
from ml.deptree_absa import parse_conllu, validate_tree
from ml.errors_absa import AlignmentError, ArgumentError, OverlapError
from ml.pipeline_absa import (
    build_instances,
    ingest_files,
    instances_for_corpus,
    join_trees,
    make_synthetic_corpus,
    read_dataset,
    write_dataset,
    write_synthetic_corpus,
)

FIXTURES = Path(__file__).parent.parent / 'data' / 'absa' / 'fixtures'
XML = FIXTURES / 'reviews_tr_small.xml'
CONLLU = FIXTURES / 'reviews_tr_small.conllu'


@pytest.fixture(scope='module')
def ingested():
    return ingest_files(XML, CONLLU, split_tag='train')


# ============================================================
# INGESTION
# ============================================================

def test_fixture_report_counts(ingested):
    _, instances, report = ingested
    assert len(instances) == 6
    assert report['reviews'] == 3
    assert report['sentences'] == 6
    assert report['opinions'] == 7
    assert report['null_opinions'] == 1
    assert report['merged_duplicate_opinions'] == 1
    assert report['aspect_spans'] == 5
    assert report['tokens'] == 29
    assert report['label_counts'] == {'B': 5, 'I': 2, 'O': 22}
    assert report['has_trees'] is True
    assert report['source'] == {'xml': 'reviews_tr_small.xml', 'conllu': 'reviews_tr_small.conllu'}


def test_label_and_syntax_projection(ingested):
    _, instances, _ = ingested
    by_id = {inst.sentence_id: inst for inst in instances}

    first = by_id['r1:0']
    assert first.tokens == ('lokumu', 'tavsiye', 'ederim.')
    assert first.labels == ('B', 'O', 'O')
    assert first.pos_tags == ('NOUN', 'NOUN', 'VERB')
    assert first.levels == (0, 1, 2)

    mekan = by_id['r2:0']
    assert mekan.tokens[-1] == 'mekan.'
    assert mekan.labels[-1] == 'B'
    assert mekan.pos_tags[-1] == 'NOUN'
    assert mekan.levels[-1] == 6

    assert by_id['r1:1'].labels[2:5] == ('B', 'I', 'I')
    assert by_id['r3:1'].labels == ('O', 'O')


def test_attached_punctuation_reported(ingested):
    _, _, report = ingested
    warned = {(w['sentence_id'], w['token']) for w in report['alignment_warnings']}
    assert ('r2:0', 'mekan.') in warned
    assert all(len(w['tree_tokens']) > 1 for w in report['alignment_warnings'])


def test_cased_ingest_keeps_surface():
    _, instances, report = ingest_files(XML, uncased=False)
    assert instances[4].tokens[0] == 'Servis'
    assert report['has_trees'] is False
    assert all(inst.pos_tags is None and inst.levels is None for inst in instances)


def test_missing_tree_raises():
    corpus = parse_semeval_xml(XML.read_bytes())
    trees = parse_conllu(CONLLU.read_text(encoding='utf-8'))
    with pytest.raises(AlignmentError) as exc:
        join_trees(corpus.sentences, trees[:-1])
    assert exc.value.sentence_id == 'r3:1'


def test_trees_joined_by_id_not_order():
    corpus = parse_semeval_xml(XML.read_bytes())
    trees = parse_conllu(CONLLU.read_text(encoding='utf-8'))
    joined = join_trees(corpus.sentences, trees[::-1])
    assert [t.sentence_id for t in joined] == [s.id for s in corpus.sentences]


def test_duplicate_sent_id_raises():
    corpus = parse_semeval_xml(XML.read_bytes())
    trees = parse_conllu(CONLLU.read_text(encoding='utf-8'))
    # same tree count, but one sentence's tree appears twice and another is gone
    doubled = list(trees[:-1]) + [trees[0]]
    with pytest.raises(AlignmentError) as exc:
        join_trees(corpus.sentences, doubled)
    assert exc.value.sentence_id == trees[0].sentence_id
    assert 'duplicate' in exc.value.message


def test_overlap_policy():
    xml = b"""<Reviews><Review rid="x"><sentences><sentence id="x:0">
        <text>ordek gogsu ozel</text><Opinions>
        <Opinion target="ordek gogsu" category="FOOD#QUALITY" polarity="positive" from="0" to="11"/>
        <Opinion target="gogsu ozel" category="FOOD#QUALITY" polarity="positive" from="6" to="16"/>
        </Opinions></sentence></sentences></Review></Reviews>"""
    corpus = parse_semeval_xml(xml)
    instances, report = build_instances(corpus)
    assert instances[0].labels == ('B', 'I', 'O')
    assert len(report['dropped_opinions']) == 1
    with pytest.raises(OverlapError):
        build_instances(corpus, on_overlap='error')
    with pytest.raises(ArgumentError):
        build_instances(corpus, on_overlap='ignore')


def test_dataset_round_trip(ingested, tmp_path):
    corpus, instances, _ = ingested
    path = tmp_path / 'dataset.jsonl'
    assert write_dataset(instances, path) == 6
    assert read_dataset(path) == instances
    assert instances_for_corpus(corpus, instances[::-1]) == instances


# ============================================================
# SYNTHETIC CORPUS
# ============================================================

def test_synthetic_corpus_is_deterministic():
    first = make_synthetic_corpus(n_sentences=20, seed=4)
    second = make_synthetic_corpus(n_sentences=20, seed=4)
    assert first == second
    assert make_synthetic_corpus(n_sentences=20, seed=5)[0] != first[0]


def test_synthetic_corpus_is_valid():
    corpus, trees = make_synthetic_corpus(n_sentences=25, seed=13, sentences_per_review=2)
    assert corpus.n_sentences == 25
    assert corpus.n_reviews == 13
    for tree in trees:
        assert validate_tree(tree.sentence_id, tree.tokens) == tree.root_index
    instances, report = build_instances(corpus, trees)
    assert len(instances) == 25
    assert report['aspect_spans'] == sum(1 for s in corpus.sentences if s.opinions)
    for inst in instances:
        if 'B' in inst.labels:
            start = inst.labels.index('B')
            assert inst.pos_tags[start] == 'NOUN'


def test_synthetic_files_ingest(tmp_path):
    xml_path, conllu_path = write_synthetic_corpus(tmp_path, n_sentences=10, seed=2)
    _, instances, report = ingest_files(xml_path, conllu_path)
    assert len(instances) == 10
    assert report['has_trees'] is True


def test_synthetic_rejects_empty():
    with pytest.raises(ArgumentError):
        make_synthetic_corpus(n_sentences=0)


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))
