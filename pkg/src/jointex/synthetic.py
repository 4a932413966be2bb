"""Template-generated corpora in the standard column format.

Three entity types (PER, ORG, LOC) and three relation labels (LivesIn,
WorksFor, LocatedIn). Relation arcs sit on the last token of the dependent
entity and point at the last token of the head entity.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .data import AnnotatedSentence, encode_bio, parse_corpus_text
from .relations import NO_RELATION

PEOPLE = ["John Smith", "Mary", "Ann Lee", "Peter Jones", "Lisa", "Tom Brown", "Karen White"]
ORGS = ["Acme Corp", "Globex", "Initech Inc", "Umbrella", "Stark Industries"]
PLACES = ["California", "New York", "Boston", "Paris", "San Diego", "Berlin"]

# (template, [(dependent slot, head slot, label), ...]); slots are filled in order
TEMPLATES = [
    ("{PER} lives in {LOC} .", [("PER", "LOC", "LivesIn")]),
    ("{PER} works for {ORG} .", [("PER", "ORG", "WorksFor")]),
    ("{ORG} is based in {LOC} .", [("ORG", "LOC", "LocatedIn")]),
    ("{PER} , who works for {ORG} , lives in {LOC} .", [("PER", "ORG", "WorksFor"), ("PER", "LOC", "LivesIn")]),
    ("{ORG} in {LOC} hired {PER} .", [("ORG", "LOC", "LocatedIn"), ("PER", "ORG", "WorksFor")]),
    ("{PER} visited {LOC} yesterday .", []),
]

_POOLS = {"PER": PEOPLE, "ORG": ORGS, "LOC": PLACES}


def make_sentence(template: str, relations, rng: np.random.Generator) -> AnnotatedSentence:
    tokens: list[str] = []
    spans = {}
    for piece in template.split(" "):
        if piece.startswith("{") and piece.endswith("}"):
            etype = piece[1:-1]
            pool = _POOLS[etype]
            name = pool[int(rng.integers(len(pool)))].split(" ")
            spans[etype] = (len(tokens), len(tokens) + len(name) - 1, etype)
            tokens.extend(name)
        else:
            tokens.append(piece)
    tags = encode_bio(list(spans.values()), len(tokens))
    arcs = [[] for _ in tokens]
    for dep, head, label in relations:
        arcs[spans[dep][1]].append((spans[head][1], label))
    arcs = [a if a else [(i, NO_RELATION)] for i, a in enumerate(arcs)]
    return AnnotatedSentence(tokens, tags, arcs)


def generate(n_sentences: int, seed: int = 0) -> list[AnnotatedSentence]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_sentences):
        template, rels = TEMPLATES[k % len(TEMPLATES)]
        out.append(make_sentence(template, rels, rng))
    return out


def bundled_fixture() -> list[AnnotatedSentence]:
    """The packaged 20-sentence training fixture."""
    text = resources.files("jointex").joinpath("fixtures/synthetic20.tsv").read_text(encoding="utf-8")
    return parse_corpus_text(text)


def bundled_fixture_path():
    return resources.files("jointex").joinpath("fixtures/synthetic20.tsv")
