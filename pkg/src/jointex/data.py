"""Corpus format, BIO span conversion, vocabularies, pre-trained embeddings.

Corpus files hold one token per line and a blank line between sentences::

    index<TAB>token<TAB>bio_tag<TAB>heads<TAB>relations

``heads`` is a comma list of 0-based token indices and ``relations`` the
aligned comma list of labels. A token outside every relation points to
itself with label ``N``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .layers import EmbeddingTable
from .ner import BioTagset, split_tag
from .relations import NO_RELATION, Arcs

logger = logging.getLogger(__name__)

UNK = "<unk>"
PLACEHOLDER = "_"


class CorpusError(ValueError):
    """Malformed corpus or embeddings file; the message names the line."""


@dataclass
class AnnotatedSentence:
    tokens: list[str]
    bio_tags: list[str]
    arcs: Arcs

    def __post_init__(self):
        if not (len(self.tokens) == len(self.bio_tags) == len(self.arcs)):
            raise ValueError(
                f"tokens/tags/arcs lengths differ: {len(self.tokens)}/{len(self.bio_tags)}/{len(self.arcs)}"
            )

    @property
    def n(self) -> int:
        return len(self.tokens)

    def spans(self) -> list[tuple[int, int, str]]:
        return decode_bio(self.bio_tags)

    @classmethod
    def unlabeled(cls, tokens) -> "AnnotatedSentence":
        tokens = list(tokens)
        return cls(tokens, ["O"] * len(tokens), [[(i, NO_RELATION)] for i in range(len(tokens))])


# ----------------------------------------------------------------------------
# BIO


def encode_bio(spans, n: int) -> list[str]:
    """Inclusive (start, end, type) spans to a tag list of length n."""
    tags = ["O"] * n
    for start, end, etype in sorted(spans):
        if not (0 <= start <= end < n):
            raise ValueError(f"span ({start}, {end}) outside [0, {n})")
        if any(t != "O" for t in tags[start : end + 1]):
            raise ValueError(f"overlapping span ({start}, {end}, {etype})")
        tags[start] = f"B-{etype}"
        for k in range(start + 1, end + 1):
            tags[k] = f"I-{etype}"
    return tags


def decode_bio(tags) -> list[tuple[int, int, str]]:
    """Tag list to inclusive spans. An orphan ``I-X`` opens a new ``X`` span."""
    spans = []
    cur: list | None = None
    for i, tag in enumerate(tags):
        prefix, etype = split_tag(tag)
        if prefix == "O":
            if cur:
                spans.append(tuple(cur))
            cur = None
        elif prefix == "B" or cur is None or cur[2] != etype:
            if cur:
                spans.append(tuple(cur))
            cur = [i, i, etype]
        else:
            cur[1] = i
    if cur:
        spans.append(tuple(cur))
    return spans


def repair_bio(tags) -> list[str]:
    return encode_bio(decode_bio(tags), len(tags))


def head_violations(sentence: AnnotatedSentence) -> list[str]:
    """Arcs whose head sits inside an entity but is not its last token."""
    owner = {}
    for start, end, _ in sentence.spans():
        for k in range(start, end + 1):
            owner[k] = end
    problems = []
    for i, token_arcs in enumerate(sentence.arcs):
        for j, lab in token_arcs:
            if lab == NO_RELATION:
                continue
            if j in owner and owner[j] != j:
                problems.append(f"token {i} -> head {j} ({lab}): head is not the last token of its entity")
    return problems


# ----------------------------------------------------------------------------
# corpus files


def _parse_block(block, require_labels: bool, validate: bool) -> AnnotatedSentence:
    tokens, tags, heads_rels = [], [], []
    for lineno, line in block:
        cols = line.split("\t")
        if require_labels and len(cols) != 5:
            raise CorpusError(f"line {lineno}: expected 5 tab-separated columns, got {len(cols)}")
        if len(cols) < 2:
            raise CorpusError(f"line {lineno}: expected at least index and token columns")
        try:
            idx = int(cols[0])
        except ValueError:
            raise CorpusError(f"line {lineno}: non-integer token index {cols[0]!r}") from None
        if idx != len(tokens):
            raise CorpusError(f"line {lineno}: token index {idx}, expected {len(tokens)}")
        tokens.append(cols[1])
        tag = cols[2] if len(cols) > 2 and cols[2] != PLACEHOLDER else "O"
        try:
            split_tag(tag)
        except ValueError as e:
            raise CorpusError(f"line {lineno}: {e}") from None
        tags.append(tag)
        if len(cols) > 4 and cols[3] != PLACEHOLDER:
            heads = cols[3].split(",")
            rels = cols[4].split(",")
            if len(heads) != len(rels):
                raise CorpusError(f"line {lineno}: {len(heads)} heads but {len(rels)} relations")
            try:
                hs = [int(h) for h in heads]
            except ValueError:
                raise CorpusError(f"line {lineno}: non-integer head in {cols[3]!r}") from None
            heads_rels.append((lineno, list(zip(hs, rels))))
        else:
            heads_rels.append((lineno, [(idx, NO_RELATION)]))
    n = len(tokens)
    arcs = []
    for lineno, token_arcs in heads_rels:
        for h, _ in token_arcs:
            if not 0 <= h < n:
                raise CorpusError(f"line {lineno}: head {h} out of range for a {n}-token sentence")
        arcs.append(token_arcs)
    sent = AnnotatedSentence(tokens, tags, arcs)
    if validate:
        problems = head_violations(sent)
        if problems:
            raise CorpusError(f"line {block[0][0]}: sentence violates head convention: {problems[0]}")
    return sent


def parse_corpus_text(text: str, require_labels: bool = True, validate: bool = True) -> list[AnnotatedSentence]:
    sentences, block = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if block:
                sentences.append(_parse_block(block, require_labels, validate))
                block = []
            continue
        block.append((lineno, line))
    if block:
        sentences.append(_parse_block(block, require_labels, validate))
    return sentences


def parse_corpus(path, require_labels: bool = True, validate: bool = True) -> list[AnnotatedSentence]:
    """Read a corpus file. Set ``require_labels=False`` for prediction inputs."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_corpus_text(text, require_labels=require_labels, validate=validate)


def format_corpus(sentences) -> str:
    blocks = []
    for s in sentences:
        lines = []
        for i, (tok, tag, token_arcs) in enumerate(zip(s.tokens, s.bio_tags, s.arcs)):
            heads = ",".join(str(j) for j, _ in token_arcs)
            rels = ",".join(lab for _, lab in token_arcs)
            lines.append(f"{i}\t{tok}\t{tag}\t{heads}\t{rels}")
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def write_corpus(sentences, path) -> None:
    Path(path).write_text(format_corpus(sentences), encoding="utf-8")


# ----------------------------------------------------------------------------
# vocabularies


@dataclass
class Vocab:
    words: list[str]
    chars: list[str]
    entity_types: list[str]
    relations: list[str]
    word_index: dict[str, int] = field(init=False, repr=False)
    char_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.words[0] != UNK or self.chars[0] != UNK:
            raise ValueError("id 0 must be the unknown symbol")
        if self.relations[0] != NO_RELATION:
            raise ValueError("relation id 0 must be the N label")
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.char_index = {c: i for i, c in enumerate(self.chars)}

    @classmethod
    def build(cls, sentences, extra_words=()) -> "Vocab":
        words, chars = [UNK], [UNK]
        seen_w, seen_c = {UNK}, {UNK}
        types, rels = set(), set()
        for s in sentences:
            for tok in s.tokens:
                if tok not in seen_w:
                    seen_w.add(tok)
                    words.append(tok)
                for ch in tok:
                    if ch not in seen_c:
                        seen_c.add(ch)
                        chars.append(ch)
            for _, _, t in s.spans():
                types.add(t)
            for token_arcs in s.arcs:
                rels.update(lab for _, lab in token_arcs if lab != NO_RELATION)
        for w in extra_words:
            if w not in seen_w:
                seen_w.add(w)
                words.append(w)
        return cls(words, chars, sorted(types), [NO_RELATION] + sorted(rels))

    @property
    def tagset(self) -> BioTagset:
        return BioTagset(self.entity_types)

    def word_id(self, token: str) -> int:
        """Exact form, then lowercase, then unknown."""
        i = self.word_index.get(token)
        if i is None:
            i = self.word_index.get(token.lower(), 0)
        return i

    def char_ids(self, token: str) -> list[int]:
        ids = [self.char_index.get(ch, 0) for ch in token]
        return ids if ids else [0]

    def to_dict(self) -> dict:
        return {
            "words": self.words,
            "chars": self.chars,
            "entity_types": self.entity_types,
            "relations": self.relations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["words"]), list(d["chars"]), list(d["entity_types"]), list(d["relations"]))


# ----------------------------------------------------------------------------
# pre-trained embeddings


def read_embeddings_file(path) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2 or not parts[0]:
                continue
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise CorpusError(f"line {lineno}: vector has {len(vals)} values, expected {dim}")
            if word in vectors:
                logger.warning("embeddings line %d: duplicate word %r ignored (first occurrence wins)", lineno, word)
                continue
            try:
                vectors[word] = np.array([float(v) for v in vals])
            except ValueError:
                raise CorpusError(f"line {lineno}: non-numeric vector value") from None
    return vectors


def load_pretrained_embeddings(path, vocab: Vocab, rng: np.random.Generator, trainable: bool = True):
    """Build the word table from a ``word v1 ... vd`` text file.

    Returns ``(table, stats)``. Vocabulary words missing from the file (and
    the unknown row) get uniform(-0.25, 0.25) vectors from ``rng``.
    """
    vectors = read_embeddings_file(path)
    if not vectors:
        raise CorpusError(f"{path}: no vectors found")
    dim = len(next(iter(vectors.values())))
    matrix = rng.uniform(-0.25, 0.25, size=(len(vocab.words), dim))
    found = 0
    for i, w in enumerate(vocab.words[1:], start=1):
        vec = vectors.get(w)
        if vec is None:
            vec = vectors.get(w.lower())
        if vec is not None:
            matrix[i] = vec
            found += 1
    total = len(vocab.words) - 1
    coverage = found / total if total else 0.0
    stats = {"dim": dim, "vocab": total, "found": found, "coverage": coverage}
    logger.info("pre-trained embeddings: %d/%d vocabulary words found (%.1f%%)", found, total, 100 * coverage)
    return EmbeddingTable(Tensor(matrix), trainable=trainable), stats
