"""Entity and relation scoring under the strict (S), boundaries (B), and relaxed (R) protocols.

Counts are micro-averaged over the corpus. A relation is correct when its
label matches and both argument entities are correct under the same
entity protocol. Self-arcs labelled ``N`` are bookkeeping and never scored.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .data import AnnotatedSentence, decode_bio
from .ner import split_tag
from .relations import NO_RELATION

MODES = ("S", "B", "R")

METRIC_COLUMNS = [
    "epoch", "split", "ent_p", "ent_r", "ent_f1", "rel_p", "rel_r", "rel_f1", "overall_f1", "loss_clean", "loss_adv",
]


def f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    # 2pr/(p+r) written on the counts, so the ratio is rounded only once
    f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"evaluation mode must be one of {MODES}, got {mode!r}")


def _token_types(tags) -> list[str | None]:
    return [split_tag(t)[1] for t in tags]


def _relaxed_correct(gold_spans, pred_tags) -> dict[tuple[int, int], bool]:
    """Per gold span: does any of its tokens carry the gold type?"""
    types = _token_types(pred_tags)
    return {(s, e): t in types[s : e + 1] for s, e, t in gold_spans}


def _check_lengths(gold, pred) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} sentences, predictions {len(pred)}")


def score_entities(gold: list[AnnotatedSentence], pred: list[AnnotatedSentence], mode: str = "S"):
    """Micro (tp, fp, fn) for entities."""
    _check_mode(mode)
    _check_lengths(gold, pred)
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        gspans = decode_bio(g.bio_tags)
        pspans = decode_bio(p.bio_tags)
        if mode == "R":
            ok = _relaxed_correct(gspans, p.bio_tags)
            types = _token_types(p.bio_tags)
            covered = set()
            for s, e, _ in gspans:
                covered.update(range(s, e + 1))
                if ok[(s, e)]:
                    tp += 1
                else:
                    fn += 1
                    if any(types[s : e + 1]):
                        fp += 1
            # typed tokens outside every gold span are spurious entities
            fp += sum(1 for s, e, _ in pspans if not covered.intersection(range(s, e + 1)))
            continue
        key = (lambda s: s) if mode == "S" else (lambda s: s[:2])
        gset = {key(s) for s in gspans}
        pset = {key(s) for s in pspans}
        tp += len(gset & pset)
        fp += len(pset - gset)
        fn += len(gset - pset)
    return tp, fp, fn


def relation_triples(sentence: AnnotatedSentence, mode: str = "S") -> set:
    """Scored relations as (dependent entity, head entity, label) keys.

    Each token maps to the entity containing it; tokens outside every
    entity map to a typeless single-token pseudo-entity, which can never
    match a gold entity under S.
    """
    spans = decode_bio(sentence.bio_tags)
    owner = {}
    for s, e, t in spans:
        for k in range(s, e + 1):
            owner[k] = (s, e, t)
    triples = set()
    for i, token_arcs in enumerate(sentence.arcs):
        for j, lab in token_arcs:
            if lab == NO_RELATION:
                continue
            dep = owner.get(i, (i, i, None))
            head = owner.get(j, (j, j, None))
            if mode != "S":
                dep, head = dep[:2], head[:2]
            triples.add((dep, head, lab))
    return triples


def score_relations(gold: list[AnnotatedSentence], pred: list[AnnotatedSentence], entity_mode: str = "S"):
    """Micro (tp, fp, fn) for relations, arguments judged under ``entity_mode``."""
    _check_mode(entity_mode)
    _check_lengths(gold, pred)
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        if entity_mode == "R":
            # boundaries are known: key arguments by gold span, then require relaxed correctness
            gtrip = relation_triples(g, "B")
            ok = _relaxed_correct(decode_bio(g.bio_tags), p.bio_tags)
            ptrip = relation_triples(AnnotatedSentence(p.tokens, g.bio_tags, p.arcs), "B")
            hits = {r for r in ptrip & gtrip if ok.get(r[0], False) and ok.get(r[1], False)}
            tp += len(hits)
            fp += len(ptrip - hits)
            fn += len(gtrip - hits)
            continue
        gtrip = relation_triples(g, entity_mode)
        ptrip = relation_triples(p, entity_mode)
        tp += len(gtrip & ptrip)
        fp += len(ptrip - gtrip)
        fn += len(gtrip - ptrip)
    return tp, fp, fn


@dataclass
class EvalReport:
    mode: str
    ent_counts: tuple[int, int, int]
    rel_counts: tuple[int, int, int]

    @property
    def entity(self) -> tuple[float, float, float]:
        return f1(*self.ent_counts)

    @property
    def relation(self) -> tuple[float, float, float]:
        return f1(*self.rel_counts)

    @property
    def overall_f1(self) -> float:
        return (self.entity[2] + self.relation[2]) / 2.0

    def row(self, epoch="", split="", loss_clean="", loss_adv="") -> dict:
        ep, er, ef = self.entity
        rp, rr, rf = self.relation
        return {
            "epoch": epoch, "split": split,
            "ent_p": ep, "ent_r": er, "ent_f1": ef,
            "rel_p": rp, "rel_r": rr, "rel_f1": rf,
            "overall_f1": self.overall_f1,
            "loss_clean": loss_clean, "loss_adv": loss_adv,
        }

    def to_text(self) -> str:
        ep, er, ef = self.entity
        rp, rr, rf = self.relation
        lines = [
            f"evaluation mode: {self.mode}",
            f"{'task':<10}{'P':>9}{'R':>9}{'F1':>9}{'tp':>7}{'fp':>7}{'fn':>7}",
            f"{'entity':<10}{ep:>9.4f}{er:>9.4f}{ef:>9.4f}" + "".join(f"{c:>7d}" for c in self.ent_counts),
            f"{'relation':<10}{rp:>9.4f}{rr:>9.4f}{rf:>9.4f}" + "".join(f"{c:>7d}" for c in self.rel_counts),
            f"{'overall':<10}{'':>18}{self.overall_f1:>9.4f}",
        ]
        return "\n".join(lines)

    def to_csv(self, epoch="", split="") -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(self.row(epoch, split))
        return buf.getvalue()


def evaluate(gold: list[AnnotatedSentence], pred: list[AnnotatedSentence], mode: str = "S") -> EvalReport:
    return EvalReport(mode, score_entities(gold, pred, mode), score_relations(gold, pred, mode))
