#!/usr/bin/env python3
"""
CoNLL-U dependency trees and level indices.

Reads the output of an external dependency parser, validates each sentence
block as a rooted tree, and computes the per-token level index used by the
tree positional encoding: the root gets the maximum depth of the tree and
every edge away from the root lowers the value by one, so the deepest
tokens sit at level 0.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ml.corpus_absa import fold_case
from ml.errors_absa import AlignmentError, ConlluParseError, TreeValidationError

logger = logging.getLogger(__name__)

UPOS_TAGS = (
    'ADJ', 'ADP', 'ADV', 'AUX', 'CCONJ', 'DET', 'INTJ', 'NOUN', 'NUM',
    'PART', 'PRON', 'PROPN', 'PUNCT', 'SCONJ', 'SYM', 'VERB', 'X',
)
N_COLUMNS = 10


@dataclass(frozen=True)
class DepToken:
    index: int
    form: str
    upos: str
    head: int
    deprel: str
    # LEMMA, XPOS, FEATS, DEPS, MISC as read; only written back out.
    extra: Tuple[str, str, str, str, str] = field(default=('_', '_', '_', '_', '_'), compare=False)

    def to_conllu(self) -> str:
        lemma, xpos, feats, deps, misc = self.extra
        return '\t'.join([str(self.index), self.form, lemma, self.upos, xpos, feats,
                          str(self.head), self.deprel, deps, misc])


@dataclass(frozen=True)
class DepTree:
    sentence_id: Optional[str]
    tokens: Tuple[DepToken, ...]
    root_index: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> List[str]:
        return [t.form for t in self.tokens]

    @property
    def upos(self) -> List[str]:
        return [t.upos for t in self.tokens]

    def token(self, index: int) -> DepToken:
        return self.tokens[index - 1]


@dataclass(frozen=True)
class LevelIndexVector:
    values: Tuple[int, ...]
    max_index: int

    def depths(self) -> List[int]:
        return [self.max_index - v for v in self.values]


# ============================================================
# PARSING
# ============================================================

def _iter_blocks(text: str):
    """Yield [(line_number, line), ...] for each blank-line separated block."""
    block = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip('\r')
        if line.strip() == '':
            if block:
                yield block
                block = []
            continue
        block.append((lineno, line))
    if block:
        yield block


def _parse_int(value: str, name: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConlluParseError(f"{name} column is not an integer: {value!r}", line=lineno)


def validate_tree(sentence_id: Optional[str], tokens: Sequence[DepToken]) -> int:
    """
    Check the head graph is a single rooted tree over all tokens.

    Returns:
        Index of the root token

    Raises:
        TreeValidationError: bad ids, zero or multiple roots, dangling heads, cycles
    """
    n = len(tokens)
    for expected, tok in enumerate(tokens, 1):
        if tok.index != expected:
            raise TreeValidationError(f"token ids must be consecutive from 1, found {tok.index} at position {expected}",
                                      sentence_id)
        if not 0 <= tok.head <= n:
            raise TreeValidationError(f"token {tok.index} has head {tok.head} outside 0..{n}", sentence_id)
        if tok.head == tok.index:
            raise TreeValidationError(f"token {tok.index} is its own head", sentence_id, cycle=[tok.index])

    roots = [t.index for t in tokens if t.head == 0]
    if len(roots) != 1:
        raise TreeValidationError(f"expected exactly one root, found {len(roots)} {roots}", sentence_id)

    heads = {t.index: t.head for t in tokens}
    state: Dict[int, int] = {}  # 1 = on current path, 2 = reaches root
    for start in heads:
        path = []
        node = start
        while node != 0 and state.get(node) != 2:
            if state.get(node) == 1:
                cycle = path[path.index(node):]
                raise TreeValidationError(f"cycle through tokens {cycle}", sentence_id, cycle=cycle)
            state[node] = 1
            path.append(node)
            node = heads[node]
        for visited in path:
            state[visited] = 2
    return roots[0]


def parse_conllu(text: str) -> List[DepTree]:
    """
    Parse CoNLL-U text into validated dependency trees.

    Multiword-token range lines ("3-4") are skipped; empty nodes ("5.1")
    are rejected. `# sent_id = X` sets the tree's sentence id.

    Raises:
        ConlluParseError: wrong column count, bad integer fields, unknown UPOS
        TreeValidationError: invalid head structure
    """
    trees = []
    for block in _iter_blocks(text):
        sentence_id = None
        tokens = []
        for lineno, line in block:
            if line.startswith('#'):
                key, sep, value = line[1:].partition('=')
                if sep and key.strip() == 'sent_id':
                    sentence_id = value.strip()
                continue

            cols = line.split('\t')
            if len(cols) != N_COLUMNS:
                raise ConlluParseError(f"expected {N_COLUMNS} tab-separated columns, found {len(cols)}", line=lineno)
            token_id = cols[0]
            if '-' in token_id:
                continue
            if '.' in token_id:
                raise ConlluParseError(f"empty nodes are not supported (id {token_id})", line=lineno)

            index = _parse_int(token_id, 'ID', lineno)
            head = _parse_int(cols[6], 'HEAD', lineno)
            upos = cols[3]
            if upos not in UPOS_TAGS:
                raise ConlluParseError(f"unknown UPOS tag {upos!r}", line=lineno)
            tokens.append(DepToken(
                index=index, form=cols[1], upos=upos, head=head, deprel=cols[7],
                extra=(cols[2], cols[4], cols[5], cols[8], cols[9]),
            ))

        if not tokens:
            raise ConlluParseError("sentence block has no token lines", line=block[0][0])
        root = validate_tree(sentence_id, tokens)
        trees.append(DepTree(sentence_id=sentence_id, tokens=tuple(tokens), root_index=root))

    logger.debug("Parsed %d dependency trees", len(trees))
    return trees


def trees_to_conllu(trees: Sequence[DepTree]) -> str:
    """Serialize trees back to CoNLL-U (ids renumbered as stored, ranges dropped)."""
    blocks = []
    for tree in trees:
        lines = []
        if tree.sentence_id is not None:
            lines.append(f"# sent_id = {tree.sentence_id}")
        lines.extend(tok.to_conllu() for tok in tree.tokens)
        blocks.append('\n'.join(lines))
    return '\n\n'.join(blocks) + '\n\n' if blocks else ''


# ============================================================
# LEVEL INDICES
# ============================================================

def tree_depths(tree: DepTree) -> List[int]:
    """Edge-count depth of every token, breadth-first from the root."""
    children: Dict[int, List[int]] = {t.index: [] for t in tree.tokens}
    for tok in tree.tokens:
        if tok.head != 0:
            children[tok.head].append(tok.index)

    depth = {tree.root_index: 0}
    queue = deque([tree.root_index])
    while queue:
        node = queue.popleft()
        for child in children[node]:
            depth[child] = depth[node] + 1
            queue.append(child)
    return [depth[t.index] for t in tree.tokens]


def level_indices(tree: DepTree) -> LevelIndexVector:
    depths = tree_depths(tree)
    max_index = max(depths)
    return LevelIndexVector(values=tuple(max_index - d for d in depths), max_index=max_index)


# ============================================================
# TOKEN ALIGNMENT
# ============================================================

def align_tokens(
    sentence_tokens: Sequence[str],
    tree: DepTree,
    sentence_id: Optional[str] = None,
) -> Dict[int, List[int]]:
    """
    Map each whitespace token (0-based) to the tree tokens (1-based) it covers.

    Identity when counts and case-folded forms agree; otherwise a greedy
    left-to-right match where one whitespace token may absorb a run of
    tree tokens whose forms concatenate to it (the parser splits off
    punctuation and clitics).

    Raises:
        AlignmentError: a token cannot be rebuilt from the next tree tokens,
            or tree tokens are left over
    """
    sid = sentence_id if sentence_id is not None else (tree.sentence_id or '<unknown>')
    forms = [fold_case(f) for f in tree.forms]
    surface = [fold_case(t) for t in sentence_tokens]

    if len(surface) == len(forms) and surface == forms:
        return {i: [i + 1] for i in range(len(surface))}

    mapping: Dict[int, List[int]] = {}
    j = 0
    for i, token in enumerate(surface):
        consumed = ''
        run = []
        while j < len(forms) and len(consumed) < len(token):
            candidate = consumed + forms[j]
            if not token.startswith(candidate):
                break
            consumed = candidate
            run.append(j + 1)
            j += 1
        if consumed != token:
            raise AlignmentError(
                f"token {i} {sentence_tokens[i]!r} does not match parser tokens starting at {j + 1}",
                sentence_id=sid, token=sentence_tokens[i],
            )
        mapping[i] = run

    if j != len(forms):
        leftover = ' '.join(tree.forms[j:])
        raise AlignmentError(f"parser tokens left unaligned: {leftover!r}", sentence_id=sid, token=leftover)
    return mapping


def project_to_tokens(
    mapping: Dict[int, List[int]],
    tree: DepTree,
    levels: LevelIndexVector,
) -> Tuple[List[str], List[int]]:
    """
    POS tag and level index per whitespace token.

    Each token takes the values of its first mapped tree token that is not
    PUNCT, falling back to the first mapped token.
    """
    pos_tags, token_levels = [], []
    for i in range(len(mapping)):
        run = mapping[i]
        chosen = next((idx for idx in run if tree.token(idx).upos != 'PUNCT'), run[0])
        pos_tags.append(tree.token(chosen).upos)
        token_levels.append(levels.values[chosen - 1])
    return pos_tags, token_levels
