#!/usr/bin/env python3
"""
SemEval ABSA corpus ingestion.

Parses Reviews/Review/sentences/sentence XML documents, validates the
character-span opinion annotations, aligns them to whitespace tokens as
B/I/O labels and produces review-level train/test and k-fold splits.

Offsets are character offsets into the raw sentence text ([from, to),
0-based). Lowercasing (the "uncased" setting) is applied after validation
and never changes a string's length, so offsets stay valid.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from lxml import etree
from sklearn.model_selection import KFold, train_test_split

from ml.errors_absa import (
    AlignmentError,
    ArgumentError,
    CorpusParseError,
    CorpusValidationError,
    OverlapError,
)

logger = logging.getLogger(__name__)

NULL_TARGET = 'NULL'
BIO_LABELS = ('B', 'I', 'O')
SPLIT_TAGS = ('train', 'test', 'unsplit')

Span = Tuple[int, int]


def fold_case(text: str) -> str:
    """
    Lowercase without changing length.

    Characters whose lowercase form is longer than one code point (Turkish
    dotted capital I lowers to "i" + combining dot) keep only the first
    code point, so every character offset computed on the original text
    still addresses the same character.
    """
    out = []
    for ch in text:
        low = ch.lower()
        out.append(low[0] if len(low) != 1 else low)
    return ''.join(out)


# ============================================================
# DOMAIN TYPES
# ============================================================

@dataclass(frozen=True)
class Opinion:
    target: str
    category: str = ''
    polarity: str = ''
    start: int = 0
    end: int = 0

    @property
    def has_span(self) -> bool:
        return self.target != NULL_TARGET

    @property
    def span(self) -> Span:
        return (self.start, self.end)

    def to_dict(self) -> Dict[str, object]:
        return {
            'target': self.target,
            'category': self.category,
            'polarity': self.polarity,
            'from': self.start,
            'to': self.end,
        }


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    opinions: Tuple[Opinion, ...] = ()

    @property
    def span_opinions(self) -> Tuple[Opinion, ...]:
        return tuple(op for op in self.opinions if op.has_span)


@dataclass(frozen=True)
class Review:
    id: str
    sentences: Tuple[Sentence, ...]


@dataclass(frozen=True)
class Corpus:
    reviews: Tuple[Review, ...]
    split_tag: str = 'unsplit'

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ArgumentError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")
        seen = set()
        for review in self.reviews:
            if review.id in seen:
                raise ArgumentError(f"duplicate review id {review.id!r} in corpus")
            seen.add(review.id)

    @property
    def sentences(self) -> List[Sentence]:
        return [s for review in self.reviews for s in review.sentences]

    @property
    def n_reviews(self) -> int:
        return len(self.reviews)

    @property
    def n_sentences(self) -> int:
        return sum(len(r.sentences) for r in self.reviews)

    @property
    def n_opinions(self) -> int:
        return sum(len(s.opinions) for s in self.sentences)

    def select(self, indices: Sequence[int], split_tag: str) -> 'Corpus':
        return Corpus(reviews=tuple(self.reviews[int(i)] for i in indices), split_tag=split_tag)


@dataclass(frozen=True)
class LabeledSequence:
    """
    Token sequence with B/I/O labels.

    Gold sequences produced by to_bio are always well-formed; decoded
    predictions may contain an I right after O, which is allowed here and
    repaired by the metrics module before span extraction.
    """
    sentence_id: str
    tokens: Tuple[str, ...]
    labels: Tuple[str, ...]
    token_spans: Optional[Tuple[Span, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ArgumentError(
                f"sentence {self.sentence_id}: {len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        bad = [lab for lab in self.labels if lab not in BIO_LABELS]
        if bad:
            raise ArgumentError(f"sentence {self.sentence_id}: unknown labels {sorted(set(bad))}")

    def is_well_formed(self) -> bool:
        prev = 'O'
        for lab in self.labels:
            if lab == 'I' and prev == 'O':
                return False
            prev = lab
        return True

    def to_record(self) -> Dict[str, object]:
        return {
            'sentence_id': self.sentence_id,
            'tokens': list(self.tokens),
            'labels': list(self.labels),
        }


# ============================================================
# XML PARSING
# ============================================================

def _line(elem) -> Optional[int]:
    return getattr(elem, 'sourceline', None)


def _parse_offset(value: Optional[str], name: str, sentence_id: str, target: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise CorpusValidationError(
            f"opinion {target!r} has non-integer {name}={value!r}", sentence_id=sentence_id, target=target
        )


def _parse_opinion(elem, sentence_id: str, text: str) -> Opinion:
    target = elem.get('target', NULL_TARGET)
    category = elem.get('category', '')
    polarity = elem.get('polarity', '')

    if target == NULL_TARGET:
        # NULL opinions carry no span; offsets are kept when they parse, else 0.
        try:
            start, end = int(elem.get('from', 0)), int(elem.get('to', 0))
        except ValueError:
            start, end = 0, 0
        return Opinion(target, category, polarity, start, end)

    start = _parse_offset(elem.get('from'), 'from', sentence_id, target)
    end = _parse_offset(elem.get('to'), 'to', sentence_id, target)
    if not (0 <= start < end <= len(text)):
        raise CorpusValidationError(
            f"opinion {target!r} span [{start},{end}) outside sentence of length {len(text)}",
            sentence_id=sentence_id, target=target,
        )
    if text[start:end] != target:
        raise CorpusValidationError(
            f"opinion span [{start},{end}) reads {text[start:end]!r}, not target {target!r}",
            sentence_id=sentence_id, target=target,
        )
    return Opinion(target, category, polarity, start, end)


def parse_semeval_xml(
    data: bytes,
    split_tag: str = 'unsplit',
    uncased: bool = False,
    source: Optional[str] = None,
) -> Corpus:
    """
    Parse a SemEval ABSA XML document into a Corpus.

    Args:
        data: UTF-8 XML document (bytes; str is encoded first)
        split_tag: 'train', 'test' or 'unsplit'
        uncased: Lowercase sentence text and targets after validation
        source: Optional file name used in error messages

    Returns:
        Corpus preserving document order of reviews, sentences and opinions

    Raises:
        CorpusParseError: malformed XML or missing structure (with line number)
        CorpusValidationError: bad offsets or target/substring mismatch
    """
    if isinstance(data, str):
        data = data.encode('utf-8')

    parser = etree.XMLParser(resolve_entities=False, no_network=True, remove_comments=True)
    try:
        root = etree.fromstring(data, parser)
    except etree.XMLSyntaxError as e:
        raise CorpusParseError(e.msg, line=e.lineno, path=source) from e

    if root.tag != 'Reviews':
        raise CorpusParseError(f"root element is <{root.tag}>, expected <Reviews>", line=_line(root), path=source)

    reviews = []
    review_ids = set()
    sentence_ids = set()
    for review_elem in root.findall('Review'):
        review_id = review_elem.get('rid') or review_elem.get('id')
        if not review_id:
            raise CorpusParseError("Review element without rid", line=_line(review_elem), path=source)
        if review_id in review_ids:
            raise CorpusParseError(f"duplicate review id {review_id!r}", line=_line(review_elem), path=source)
        review_ids.add(review_id)

        sentences = []
        for sent_elem in review_elem.iterfind('sentences/sentence'):
            sentence_id = sent_elem.get('id')
            if not sentence_id:
                raise CorpusParseError("sentence element without id", line=_line(sent_elem), path=source)
            if sentence_id in sentence_ids:
                raise CorpusParseError(f"duplicate sentence id {sentence_id!r}", line=_line(sent_elem), path=source)
            sentence_ids.add(sentence_id)

            text_elem = sent_elem.find('text')
            text = text_elem.text if text_elem is not None and text_elem.text is not None else ''
            if not text.strip():
                raise CorpusValidationError("empty sentence text", sentence_id=sentence_id)

            opinions = tuple(
                _parse_opinion(op_elem, sentence_id, text)
                for op_elem in sent_elem.iterfind('Opinions/Opinion')
            )
            if uncased:
                text = fold_case(text)
                opinions = tuple(
                    replace(op, target=fold_case(op.target)) if op.has_span else op for op in opinions
                )
            sentences.append(Sentence(id=sentence_id, text=text, opinions=opinions))

        if not sentences:
            raise CorpusParseError(f"review {review_id!r} has no sentences", line=_line(review_elem), path=source)
        reviews.append(Review(id=review_id, sentences=tuple(sentences)))

    logger.info("Parsed %d reviews / %d sentences%s", len(reviews), len(sentence_ids),
                f" from {source}" if source else "")
    return Corpus(reviews=tuple(reviews), split_tag=split_tag)


def corpus_to_xml(corpus: Corpus) -> bytes:
    """Serialize a Corpus back into the SemEval XML layout."""
    root = etree.Element('Reviews')
    for review in corpus.reviews:
        review_elem = etree.SubElement(root, 'Review', rid=review.id)
        sentences_elem = etree.SubElement(review_elem, 'sentences')
        for sentence in review.sentences:
            sent_elem = etree.SubElement(sentences_elem, 'sentence', id=sentence.id)
            etree.SubElement(sent_elem, 'text').text = sentence.text
            if sentence.opinions:
                opinions_elem = etree.SubElement(sent_elem, 'Opinions')
                for op in sentence.opinions:
                    etree.SubElement(
                        opinions_elem, 'Opinion',
                        target=op.target, category=op.category, polarity=op.polarity,
                        **{'from': str(op.start), 'to': str(op.end)},
                    )
    return etree.tostring(root, xml_declaration=True, encoding='UTF-8', pretty_print=True)


# ============================================================
# TOKENIZATION AND BIO ALIGNMENT
# ============================================================

_TOKEN_RE = re.compile(r'\S+')


def whitespace_tokenize(text: str) -> Tuple[List[str], List[Span]]:
    """Split on whitespace; punctuation stays attached to its word."""
    tokens, spans = [], []
    for match in _TOKEN_RE.finditer(text):
        tokens.append(match.group())
        spans.append((match.start(), match.end()))
    return tokens, spans


def _covered_tokens(token_spans: Sequence[Span], start: int, end: int) -> List[int]:
    return [i for i, (a, b) in enumerate(token_spans) if a < end and start < b]


def _distinct_span_opinions(sentence: Sentence) -> List[Opinion]:
    """Span-ful opinions with identical [from, to) merged (first one wins)."""
    seen = set()
    distinct = []
    for op in sentence.span_opinions:
        if op.span in seen:
            continue
        seen.add(op.span)
        distinct.append(op)
    return distinct


def resolve_overlaps(sentence: Sentence, token_spans: Sequence[Span]) -> Tuple[Sentence, List[Dict[str, object]]]:
    """
    Drop opinions that share a token with a longer opinion.

    Longest span wins; ties go to the earlier start, then document order.
    Identical spans are not overlaps (one target, several categories).

    Returns:
        (sentence with the surviving opinions, list of warning records)
    """
    distinct = _distinct_span_opinions(sentence)
    order = sorted(range(len(distinct)),
                   key=lambda i: (-(distinct[i].end - distinct[i].start), distinct[i].start, i))
    kept: List[Tuple[Opinion, set]] = []
    dropped_spans = set()
    warnings = []
    for i in order:
        op = distinct[i]
        cover = set(_covered_tokens(token_spans, op.start, op.end))
        winner = next((k for k, k_cover in kept if cover & k_cover), None)
        if winner is None:
            kept.append((op, cover))
            continue
        dropped_spans.add(op.span)
        warnings.append({
            'sentence_id': sentence.id,
            'dropped': op.to_dict(),
            'kept': winner.to_dict(),
        })
        logger.warning("sentence %s: dropped opinion %r overlapping %r", sentence.id, op.target, winner.target)

    if not dropped_spans:
        return sentence, warnings
    opinions = tuple(op for op in sentence.opinions if not (op.has_span and op.span in dropped_spans))
    return replace(sentence, opinions=opinions), warnings


def to_bio(sentence: Sentence, tokens: Sequence[str], token_spans: Sequence[Span]) -> LabeledSequence:
    """
    Label tokens B/I/O from the sentence's character-span opinions.

    Every token whose span overlaps an opinion is labeled (an opinion that
    bisects a token labels the whole token); the first such token gets B,
    the rest I. NULL-target opinions produce no labels.

    Raises:
        OverlapError: two distinct opinions cover a shared token
        AlignmentError: an opinion overlaps no token
    """
    if len(tokens) != len(token_spans):
        raise ArgumentError(f"sentence {sentence.id}: {len(tokens)} tokens but {len(token_spans)} spans")

    labels = ['O'] * len(tokens)
    owner: Dict[int, Opinion] = {}
    covers = []
    for op in _distinct_span_opinions(sentence):
        cover = _covered_tokens(token_spans, op.start, op.end)
        if not cover:
            raise AlignmentError(f"opinion span [{op.start},{op.end}) overlaps no token",
                                 sentence_id=sentence.id, token=op.target)
        for idx in cover:
            if idx in owner:
                raise OverlapError(sentence.id, owner[idx], op)
            owner[idx] = op
        covers.append(cover)

    for cover in covers:
        labels[cover[0]] = 'B'
        for idx in cover[1:]:
            labels[idx] = 'I'

    return LabeledSequence(
        sentence_id=sentence.id,
        tokens=tuple(tokens),
        labels=tuple(labels),
        token_spans=tuple(tuple(s) for s in token_spans),
    )


# ============================================================
# SPLITS
# ============================================================

def kfold_split(corpus: Corpus, k: int, seed: int) -> List[Tuple[Corpus, Corpus]]:
    """
    Review-level k-fold cross-validation splits.

    Reviews are shuffled with `seed` and cut into k folds whose sizes differ
    by at most one; fold i is the test set of pair i.
    """
    if k < 2:
        raise ArgumentError(f"k must be >= 2, got {k}")
    if corpus.n_reviews < k:
        raise ArgumentError(f"cannot split {corpus.n_reviews} reviews into {k} folds")

    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    pairs = []
    for train_idx, test_idx in splitter.split(list(range(corpus.n_reviews))):
        pairs.append((corpus.select(train_idx, 'train'), corpus.select(test_idx, 'test')))
    return pairs


def train_dev_split(corpus: Corpus, dev_fraction: float, seed: int) -> Tuple[Corpus, Corpus]:
    """Carve a review-level dev set off a training corpus."""
    if not 0.0 < dev_fraction < 1.0:
        raise ArgumentError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    if corpus.n_reviews < 2:
        raise ArgumentError("need at least 2 reviews to hold out a dev set")
    train_idx, dev_idx = train_test_split(
        list(range(corpus.n_reviews)), test_size=dev_fraction, random_state=seed, shuffle=True
    )
    return corpus.select(sorted(train_idx), 'train'), corpus.select(sorted(dev_idx), 'test')
