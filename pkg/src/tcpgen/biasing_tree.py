"""Prefix tree over subword-tokenized biasing words, with cursor traversal.

The tree is built once per biasing list and shared read-only.  Each search
hypothesis carries a tiny `TreeState`: either a node id (an in-progress
match of some biasing-word prefix) or `DETACHED` (the current in-progress
word has left the tree; nothing is valid until the next word boundary).
Segmentation is deterministic, so a single cursor suffices — an in-progress
word can match at most one tree path.
"""

from __future__ import annotations

from dataclasses import dataclass

from .lexicon import SubwordVocab, UnsegmentableWord, tokenize_word

DETACHED = -1
ROOT = 0


@dataclass(frozen=True)
class TreeState:
    node: int


ROOT_STATE = TreeState(ROOT)
DETACHED_STATE = TreeState(DETACHED)


class PrefixTree:
    """Trie over token sequences of accepted biasing words.

    nodes[i] is a dict subword-id -> child node id; word_end[i] marks nodes
    completing at least one biasing word.  Node 0 is the root.
    """

    def __init__(self, word_final: tuple[bool, ...]):
        self.children: list[dict[int, int]] = [{}]
        self.word_end: list[bool] = [False]
        self.word_final = word_final  # per lexical id, from the vocab
        self.n_words = 0
        self.skipped: tuple[str, ...] = ()

    def insert(self, ids) -> None:
        node = ROOT
        for sid in ids:
            nxt = self.children[node].get(sid)
            if nxt is None:
                nxt = len(self.children)
                self.children[node][sid] = nxt
                self.children.append({})
                self.word_end.append(False)
            node = nxt
        self.word_end[node] = True
        self.n_words += 1

    def __len__(self) -> int:
        return len(self.children)


def build_tree(vocab: SubwordVocab, words) -> PrefixTree:
    """Build the trie for `words`; unsegmentable words are skipped.

    Duplicates collapse (set semantics).  Skipped words are recorded on
    `tree.skipped` for the caller to report.  An empty accepted set yields
    a single-root tree, which disables biasing downstream.
    """
    tree = PrefixTree(tuple(vocab._word_final))
    skipped = []
    for word in sorted(set(words)):
        try:
            seq = tokenize_word(vocab, word)
        except (UnsegmentableWord, ValueError):
            skipped.append(word)
            continue
        tree.insert(seq.ids)
    tree.skipped = tuple(skipped)
    return tree


def valid_set(tree: PrefixTree, state: TreeState) -> set[int]:
    """Subword ids that extend the current in-progress biasing-word prefix."""
    if state.node == DETACHED:
        return set()
    return set(tree.children[state.node].keys())


def advance_state(tree: PrefixTree, state: TreeState, emitted: int) -> TreeState:
    """Cursor transition on an emitted lexical subword.

    On-tree moves follow the child edge; a word-final unit always returns
    to the root (word complete or abandoned at a boundary); an off-tree
    word-internal unit detaches until the next boundary.
    """
    if emitted >= len(tree.word_final) or emitted < 0:
        raise ValueError(f"non-lexical id {emitted} in tree traversal")
    final = tree.word_final[emitted]
    if state.node != DETACHED:
        child = tree.children[state.node].get(emitted)
        if child is not None:
            return ROOT_STATE if final else TreeState(child)
    return ROOT_STATE if final else DETACHED_STATE


def dump_tree(tree: PrefixTree, vocab: SubwordVocab) -> str:
    """Indented text dump, one node per line, '*' marking word ends."""
    lines = ["."]

    def walk(node: int, depth: int) -> None:
        kids = sorted(tree.children[node].items(), key=lambda kv: vocab.units[kv[0]])
        for sid, child in kids:
            mark = " *" if tree.word_end[child] else ""
            lines.append("  " * depth + vocab.units[sid] + mark)
            walk(child, depth + 1)

    walk(ROOT, 1)
    return "\n".join(lines) + "\n"
