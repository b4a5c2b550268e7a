#!/usr/bin/env python3
"""
Evaluation for B/I/O aspect tagging.

Token level: per-label TP/FP/FN from the confusion matrix, F1 = TP / (TP + (FP + FN) / 2),
macro averages (over all three labels and over B/I only) and the
support-weighted average.
Span level: exact-match precision/recall/F1 over aspect spans after BIO repair.
"""

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from ml.corpus_absa import LabeledSequence
from ml.crf_absa import LABELS
from ml.errors_absa import ArgumentError

Span = Tuple[int, int]


@dataclass(frozen=True)
class LabelStats:
    tp: int
    fp: int
    fn: int
    support: int
    precision: float
    recall: float
    f1: float

    @property
    def predicted(self) -> int:
        return self.tp + self.fp


@dataclass(frozen=True)
class LabelReport:
    per_label: Dict[str, LabelStats]
    macro_f1_all: float
    macro_f1_bi: float
    weighted_f1: float
    n_tokens: int

    @property
    def macro_f1(self) -> float:
        return self.macro_f1_all

    def to_dict(self) -> Dict[str, object]:
        return {
            'labels': {label: asdict(stats) for label, stats in self.per_label.items()},
            'macro_f1_all': self.macro_f1_all,
            'macro_f1_bi': self.macro_f1_bi,
            'weighted_f1': self.weighted_f1,
            'n_tokens': self.n_tokens,
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [{'label': label, **asdict(stats)} for label, stats in self.per_label.items()]
        return pd.DataFrame(rows, columns=['label', 'tp', 'fp', 'fn', 'support', 'precision', 'recall', 'f1'])

    def to_text(self) -> str:
        frame = self.to_frame()
        lines = [frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")]
        lines.append(f"macro F1 (B,I,O): {self.macro_f1_all:.4f}")
        lines.append(f"macro F1 (B,I):   {self.macro_f1_bi:.4f}")
        lines.append(f"weighted F1:      {self.weighted_f1:.4f}")
        return '\n'.join(lines)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


def _ratio(num: int, denom: int) -> float:
    return num / denom if denom > 0 else 0.0


def _aligned_pairs(gold: Sequence[LabeledSequence], pred: Sequence[LabeledSequence]):
    if len(gold) != len(pred):
        raise ArgumentError(f"{len(gold)} gold sequences but {len(pred)} predicted")
    by_id = {}
    for seq in pred:
        if seq.sentence_id in by_id:
            raise ArgumentError(f"duplicate predicted sentence id {seq.sentence_id!r}")
        by_id[seq.sentence_id] = seq
    pairs = []
    for g in gold:
        p = by_id.get(g.sentence_id)
        if p is None:
            raise ArgumentError(f"no prediction for sentence {g.sentence_id!r}")
        if len(p.labels) != len(g.labels):
            raise ArgumentError(
                f"sentence {g.sentence_id}: {len(g.labels)} gold labels, {len(p.labels)} predicted"
            )
        pairs.append((g, p))
    return pairs


def confusion_counts(gold: Sequence[LabeledSequence], pred: Sequence[LabeledSequence]) -> np.ndarray:
    """L x L counts (rows gold, columns predicted) in label order B, I, O."""
    pairs = _aligned_pairs(gold, pred)
    y_true = [lab for g, _ in pairs for lab in g.labels]
    y_pred = [lab for _, p in pairs for lab in p.labels]
    if not y_true:
        return np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    return confusion_matrix(y_true, y_pred, labels=list(LABELS)).astype(np.int64)


def report_from_confusion(counts: np.ndarray) -> LabelReport:
    """Build a LabelReport from (possibly summed) confusion counts."""
    per_label = {}
    included = []
    for k, label in enumerate(LABELS):
        tp = int(counts[k, k])
        fp = int(counts[:, k].sum()) - tp
        fn = int(counts[k, :].sum()) - tp
        support = tp + fn
        per_label[label] = LabelStats(
            tp=tp, fp=fp, fn=fn, support=support,
            precision=_ratio(tp, tp + fp), recall=_ratio(tp, support), f1=_f1(tp, fp, fn),
        )
        # absent from both gold and predictions: F1 undefined, left out of macro
        if support > 0 or fp > 0:
            included.append(label)

    def macro(labels):
        chosen = [per_label[lab].f1 for lab in labels if lab in included]
        return float(np.mean(chosen)) if chosen else 0.0

    total_support = sum(s.support for s in per_label.values())
    weighted = (sum(s.support * s.f1 for s in per_label.values()) / total_support) if total_support else 0.0
    return LabelReport(
        per_label=per_label,
        macro_f1_all=macro(LABELS),
        macro_f1_bi=macro(('B', 'I')),
        weighted_f1=float(weighted),
        n_tokens=int(counts.sum()),
    )


def token_prf(gold: Sequence[LabeledSequence], pred: Sequence[LabeledSequence]) -> LabelReport:
    return report_from_confusion(confusion_counts(gold, pred))


# ============================================================
# SPANS
# ============================================================

def repair_bio(labels: Sequence[str]) -> Tuple[str, ...]:
    """Promote an I that follows O (or opens the sequence) to B."""
    repaired = []
    prev = 'O'
    for lab in labels:
        if lab == 'I' and prev == 'O':
            lab = 'B'
        repaired.append(lab)
        prev = lab
    return tuple(repaired)


def extract_spans(labels: Sequence[str]) -> List[Span]:
    """Token spans [start, end) of the B(I*) runs in repaired labels."""
    spans = []
    start = None
    for i, lab in enumerate(repair_bio(labels)):
        if lab == 'B' or lab == 'O':
            if start is not None:
                spans.append((start, i))
                start = None
            if lab == 'B':
                start = i
    if start is not None:
        spans.append((start, len(labels)))
    return spans


def spans_to_char_offsets(spans: Sequence[Span], token_spans: Sequence[Span]) -> List[Span]:
    """Token spans -> character offsets [from, to) in the sentence text."""
    return [(token_spans[s][0], token_spans[e - 1][1]) for s, e in spans]


@dataclass(frozen=True)
class SpanReport:
    tp: int
    n_gold: int
    n_pred: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def span_exact_match(gold: Sequence[LabeledSequence], pred: Sequence[LabeledSequence]) -> SpanReport:
    """
    Exact-match span scores.

    Two empty span sets agree perfectly (P = R = F1 = 1). When only one side
    is empty, the undefined ratio is 0: predicting nothing against gold spans
    scores precision 0, not 1. F1 is 0 when P + R = 0.
    """
    gold_spans: Counter = Counter()
    pred_spans: Counter = Counter()
    for g, p in _aligned_pairs(gold, pred):
        gold_spans.update((g.sentence_id,) + s for s in extract_spans(g.labels))
        pred_spans.update((g.sentence_id,) + s for s in extract_spans(p.labels))

    tp = sum((gold_spans & pred_spans).values())
    n_gold = sum(gold_spans.values())
    n_pred = sum(pred_spans.values())
    both_empty = n_pred == 0 and n_gold == 0
    precision = tp / n_pred if n_pred else float(both_empty)
    recall = tp / n_gold if n_gold else float(both_empty)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return SpanReport(tp=tp, n_gold=n_gold, n_pred=n_pred, precision=precision, recall=recall, f1=f1)


def evaluation_record(gold: Sequence[LabeledSequence], pred: Sequence[LabeledSequence]) -> Dict[str, object]:
    """Token and span scores together, as written to report JSON."""
    return {
        'n_sentences': len(gold),
        'token': token_prf(gold, pred).to_dict(),
        'span': span_exact_match(gold, pred).to_dict(),
    }
