#!/usr/bin/env python3
"""
Tests for SemEval XML ingestion, BIO labeling and review-level splits.
"""

import os
from collections import Counter
from pathlib import Path

import pytest

from ml.corpus_absa import (
    Corpus,
    Opinion,
    Review,
    Sentence,
    corpus_to_xml,
    fold_case,
    kfold_split,
    parse_semeval_xml,
    resolve_overlaps,
    to_bio,
    train_dev_split,
    whitespace_tokenize,
)
from ml.errors_absa import AlignmentError, ArgumentError, CorpusParseError, CorpusValidationError, OverlapError
from ml.metrics_absa import extract_spans, spans_to_char_offsets

FIXTURES = Path(__file__).parent.parent / 'data' / 'absa' / 'fixtures'


def _fixture(name: str) -> bytes:
    return (FIXTURES / name).read_bytes()


def _corpus_of(n_reviews: int) -> Corpus:
    reviews = tuple(
        Review(id=f"r{i}", sentences=(Sentence(id=f"r{i}:0", text=f"cümle {i}"),))
        for i in range(n_reviews)
    )
    return Corpus(reviews=reviews)


# ============================================================
# PARSING
# ============================================================

def test_listing_one_document():
    corpus = parse_semeval_xml(_fixture('listing1_review.xml'))
    assert corpus.n_reviews == 1
    assert corpus.n_sentences == 1
    assert corpus.n_opinions == 1
    op = corpus.sentences[0].opinions[0]
    assert (op.target, op.start, op.end) == ('yemekler', 6, 14)
    assert op.category == 'FOOD#QUALITY'
    assert op.polarity == 'positive'
    assert corpus.reviews[0].id == '1001'


def test_small_fixture_counts_and_order():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'), split_tag='train')
    assert corpus.split_tag == 'train'
    assert corpus.n_reviews == 3
    assert corpus.n_sentences == 6
    assert corpus.n_opinions == 7
    assert [s.id for s in corpus.sentences] == ['r1:0', 'r1:1', 'r2:0', 'r2:1', 'r3:0', 'r3:1']
    assert corpus.sentences[-1].opinions == ()


def test_null_opinion_has_no_span():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'))
    sentence = corpus.sentences[4]
    assert len(sentence.opinions) == 2
    assert [op.has_span for op in sentence.opinions] == [True, False]
    assert len(sentence.span_opinions) == 1


def test_document_without_opinions():
    xml = b"""<Reviews><Review rid="a"><sentences>
        <sentence id="a:0"><text>Tekrar gelecegiz.</text></sentence>
        <sentence id="a:1"><text>Bir daha.</text><Opinions/></sentence>
    </sentences></Review></Reviews>"""
    corpus = parse_semeval_xml(xml)
    assert all(s.opinions == () for s in corpus.sentences)


def test_uncased_keeps_offsets_valid():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'), uncased=True)
    for sentence in corpus.sentences:
        assert sentence.text == fold_case(sentence.text)
        for op in sentence.span_opinions:
            assert sentence.text[op.start:op.end] == op.target
    assert corpus.sentences[4].opinions[0].target == 'servis'


def test_fold_case_preserves_length():
    text = "İstanbul'da IŞIK"
    assert len(fold_case(text)) == len(text)
    assert fold_case(text).startswith('i')


def test_malformed_xml_reports_line():
    xml = b"<Reviews>\n<Review rid='a'>\n<sentences>\n</Review>\n</Reviews>"
    with pytest.raises(CorpusParseError) as exc:
        parse_semeval_xml(xml, source='broken.xml')
    assert exc.value.fields['line'] is not None
    assert exc.value.fields['path'] == 'broken.xml'


def test_wrong_root_rejected():
    with pytest.raises(CorpusParseError):
        parse_semeval_xml(b"<Sentences><sentence id='x'/></Sentences>")


def test_target_mismatch_names_sentence():
    xml = """<Reviews><Review rid="a"><sentences><sentence id="a:0">
        <text>Bütün yemekler harikaydı.</text>
        <Opinions><Opinion target="yemek" from="6" to="14" category="FOOD#QUALITY" polarity="positive"/></Opinions>
    </sentence></sentences></Review></Reviews>""".encode('utf-8')
    with pytest.raises(CorpusValidationError) as exc:
        parse_semeval_xml(xml)
    assert exc.value.fields['sentence_id'] == 'a:0'
    assert exc.value.fields['target'] == 'yemek'


def test_out_of_range_offsets_rejected():
    xml = b"""<Reviews><Review rid="a"><sentences><sentence id="a:0">
        <text>kisa</text>
        <Opinions><Opinion target="kisa" from="0" to="40"/></Opinions>
    </sentence></sentences></Review></Reviews>"""
    with pytest.raises(CorpusValidationError):
        parse_semeval_xml(xml)


def test_duplicate_review_id_rejected():
    xml = b"""<Reviews>
        <Review rid="a"><sentences><sentence id="a:0"><text>bir</text></sentence></sentences></Review>
        <Review rid="a"><sentences><sentence id="a:1"><text>iki</text></sentence></sentences></Review>
    </Reviews>"""
    with pytest.raises(CorpusParseError):
        parse_semeval_xml(xml)


def test_xml_round_trip():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'), split_tag='test')
    again = parse_semeval_xml(corpus_to_xml(corpus), split_tag='test')
    assert again == corpus


@pytest.mark.skipif(not os.getenv('ABSA_SEMEVAL_TR_TRAIN'), reason='ABSA_SEMEVAL_TR_TRAIN not set')
def test_real_turkish_train_file():
    corpus = parse_semeval_xml(Path(os.environ['ABSA_SEMEVAL_TR_TRAIN']).read_bytes(), split_tag='train')
    assert corpus.n_reviews == 1104


@pytest.mark.skipif(not os.getenv('ABSA_SEMEVAL_TR_TEST'), reason='ABSA_SEMEVAL_TR_TEST not set')
def test_real_turkish_test_file():
    corpus = parse_semeval_xml(Path(os.environ['ABSA_SEMEVAL_TR_TEST']).read_bytes(), split_tag='test')
    assert corpus.n_reviews == 144


@pytest.mark.skipif(not (os.getenv('ABSA_TRANSLATED_TRAIN') and os.getenv('ABSA_TRANSLATED_TEST')),
                    reason='ABSA_TRANSLATED_TRAIN / ABSA_TRANSLATED_TEST not set')
def test_real_translated_files():
    train = parse_semeval_xml(Path(os.environ['ABSA_TRANSLATED_TRAIN']).read_bytes(), split_tag='train')
    test = parse_semeval_xml(Path(os.environ['ABSA_TRANSLATED_TEST']).read_bytes(), split_tag='test')
    assert (train.n_reviews, test.n_reviews) == (2000, 676)


# ============================================================
# TOKENIZATION AND BIO
# ============================================================

def test_whitespace_tokenize():
    assert whitespace_tokenize("lokumu tavsiye ederim.") == (
        ['lokumu', 'tavsiye', 'ederim.'], [(0, 6), (7, 14), (15, 22)]
    )
    assert whitespace_tokenize("") == ([], [])
    assert whitespace_tokenize("  a  b ") == (['a', 'b'], [(2, 3), (5, 6)])


def test_tokens_reproduce_text():
    text = "Son ziyaretimde  ördek göğsü\tözel vardı, inanılmazdı."
    tokens, spans = whitespace_tokenize(text)
    for token, (a, b) in zip(tokens, spans):
        assert text[a:b] == token


def _labels(sentence: Sentence):
    tokens, spans = whitespace_tokenize(sentence.text)
    return to_bio(sentence, tokens, spans).labels


def test_bio_single_word_aspect():
    sentence = Sentence('s', "lokumu tavsiye ederim.", (Opinion('lokumu', start=0, end=6),))
    assert _labels(sentence) == ('B', 'O', 'O')


def test_bio_multi_word_aspect():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'))
    assert _labels(corpus.sentences[1]) == ('O', 'O', 'B', 'I', 'I', 'O', 'O')


def test_bio_no_opinions_all_outside():
    assert _labels(Sentence('s', "Tekrar geleceğiz.")) == ('O', 'O')


def test_bio_ignores_null_and_merges_same_span():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'))
    assert _labels(corpus.sentences[3]) == ('O', 'B', 'O')
    assert _labels(corpus.sentences[4]) == ('B', 'O', 'O')


def test_bio_partial_token_labels_whole_token():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'))
    labels = _labels(corpus.sentences[2])
    assert labels[-1] == 'B'
    assert labels.count('B') == 1 and 'I' not in labels


def test_bio_spans_map_back_to_opinions():
    corpus = parse_semeval_xml(_fixture('reviews_tr_small.xml'))
    for sentence in corpus.sentences:
        tokens, spans = whitespace_tokenize(sentence.text)
        labeled = to_bio(sentence, tokens, spans)
        got = Counter(spans_to_char_offsets(extract_spans(labeled.labels), spans))
        expected = Counter()
        for op in {op.span: op for op in sentence.span_opinions}.values():
            covered = [s for s in spans if s[0] < op.end and op.start < s[1]]
            expected[(covered[0][0], covered[-1][1])] += 1
        assert got == expected


def test_overlapping_opinions_raise():
    text = "Son ziyaretimde ördek göğsü özel vardı, inanılmazdı."
    sentence = Sentence('s', text, (
        Opinion('ördek göğsü', start=16, end=27),
        Opinion('ördek göğsü özel', start=16, end=32),
    ))
    tokens, spans = whitespace_tokenize(text)
    with pytest.raises(OverlapError) as exc:
        to_bio(sentence, tokens, spans)
    assert exc.value.fields['sentence_id'] == 's'


def test_resolve_overlaps_keeps_longest():
    text = "Son ziyaretimde ördek göğsü özel vardı, inanılmazdı."
    sentence = Sentence('s', text, (
        Opinion('ördek göğsü', start=16, end=27),
        Opinion('ördek göğsü özel', start=16, end=32),
        Opinion('NULL'),
    ))
    tokens, spans = whitespace_tokenize(text)
    resolved, warnings = resolve_overlaps(sentence, spans)
    assert [op.target for op in resolved.opinions] == ['ördek göğsü özel', 'NULL']
    assert len(warnings) == 1
    assert warnings[0]['dropped']['target'] == 'ördek göğsü'
    assert to_bio(resolved, tokens, spans).labels == ('O', 'O', 'B', 'I', 'I', 'O', 'O')


def test_resolve_overlaps_tie_prefers_earlier_start():
    text = "ab cd ef"
    sentence = Sentence('s', text, (Opinion('cd ef', start=3, end=8), Opinion('ab cd', start=0, end=5)))
    _, spans = whitespace_tokenize(text)
    resolved, warnings = resolve_overlaps(sentence, spans)
    assert [op.target for op in resolved.opinions] == ['ab cd']
    assert warnings[0]['kept']['target'] == 'ab cd'


def test_span_covering_no_token():
    sentence = Sentence('s9', "ab  cd", (Opinion('  ', start=2, end=4),))
    tokens, spans = whitespace_tokenize(sentence.text)
    with pytest.raises(AlignmentError) as exc:
        to_bio(sentence, tokens, spans)
    assert exc.value.fields['sentence_id'] == 's9'


# ============================================================
# SPLITS
# ============================================================

def test_kfold_exact_division():
    pairs = kfold_split(_corpus_of(10), k=5, seed=13)
    assert len(pairs) == 5
    for train, test in pairs:
        assert train.n_reviews == 8 and test.n_reviews == 2
        assert train.split_tag == 'train' and test.split_tag == 'test'


def test_kfold_remainder_and_coverage():
    corpus = _corpus_of(11)
    pairs = kfold_split(corpus, k=5, seed=7)
    assert sorted(test.n_reviews for _, test in pairs) == [2, 2, 2, 2, 3]
    seen = [r.id for _, test in pairs for r in test.reviews]
    assert sorted(seen) == sorted(r.id for r in corpus.reviews)
    for train, test in pairs:
        assert not {r.id for r in train.reviews} & {r.id for r in test.reviews}


def test_kfold_deterministic():
    corpus = _corpus_of(12)
    first = [[r.id for r in te.reviews] for _, te in kfold_split(corpus, 4, seed=3)]
    second = [[r.id for r in te.reviews] for _, te in kfold_split(corpus, 4, seed=3)]
    assert first == second


def test_kfold_argument_errors():
    with pytest.raises(ArgumentError):
        kfold_split(_corpus_of(10), k=1, seed=0)
    with pytest.raises(ArgumentError):
        kfold_split(_corpus_of(3), k=5, seed=0)


def test_train_dev_split_is_review_level():
    corpus = _corpus_of(10)
    train, dev = train_dev_split(corpus, 0.2, seed=13)
    assert train.n_reviews == 8 and dev.n_reviews == 2
    assert not {r.id for r in train.reviews} & {r.id for r in dev.reviews}


if __name__ == '__main__':
    raise SystemExit(pytest.main([__file__, '-v']))
