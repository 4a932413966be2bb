"""Entity heads: linear-chain CRF (full NER) and per-token softmax (entity classification)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import uniform_init


class BioTagset:
    """``O`` followed by ``B-X``, ``I-X`` for each entity type, in the given order."""

    def __init__(self, entity_types):
        types = list(entity_types)
        if len(set(types)) != len(types):
            raise ValueError(f"duplicate entity types: {types}")
        self.entity_types = types
        self.tags = ["O"]
        for t in types:
            self.tags += [f"B-{t}", f"I-{t}"]
        self.index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def __eq__(self, other) -> bool:
        return isinstance(other, BioTagset) and other.tags == self.tags

    def __repr__(self) -> str:
        return f"BioTagset({self.entity_types})"

    def encode(self, tags) -> list[int]:
        try:
            return [self.index[t] for t in tags]
        except KeyError as e:
            raise ValueError(f"unknown tag {e.args[0]!r}") from None

    def decode(self, ids) -> list[str]:
        return [self.tags[int(i)] for i in ids]


def split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, _, etype = tag.partition("-")
    if prefix not in ("B", "I") or not etype:
        raise ValueError(f"malformed BIO tag {tag!r}")
    return prefix, etype


def bio_allowed_bigrams(tagset: BioTagset) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks (T x T transitions, T starts): False where BIO is violated.

    ``I-X`` may only follow ``B-X`` or ``I-X`` and may not open a sentence.
    """
    T = len(tagset)
    allowed = np.ones((T, T), dtype=bool)
    start = np.ones(T, dtype=bool)
    for j, tag in enumerate(tagset.tags):
        prefix, etype = split_tag(tag)
        if prefix != "I":
            continue
        start[j] = False
        for i, prev in enumerate(tagset.tags):
            pp, pt = split_tag(prev)
            allowed[i, j] = pp in ("B", "I") and pt == etype
    return allowed, start


@dataclass
class CrfParams:
    """Emission projection plus transition, start, and stop scores."""

    proj_w: Tensor  # 2H x T
    proj_b: Tensor  # T
    transitions: Tensor  # T x T, [prev, next]
    start: Tensor  # T
    stop: Tensor  # T

    @property
    def num_tags(self) -> int:
        return self.transitions.shape[0]

    @classmethod
    def init(cls, rng, in_dim: int, num_tags: int):
        return cls(
            Tensor(uniform_init(rng, in_dim, (in_dim, num_tags)), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
            Tensor(np.zeros((num_tags, num_tags)), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
        )

    @classmethod
    def zeros(cls, num_tags: int, in_dim: int = 1):
        return cls(
            Tensor(np.zeros((in_dim, num_tags)), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
            Tensor(np.zeros((num_tags, num_tags)), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
            Tensor(np.zeros(num_tags), requires_grad=True),
        )

    def emissions(self, features: Tensor) -> Tensor:
        return ad.matmul(features, self.proj_w) + self.proj_b

    def tensors(self) -> dict[str, Tensor]:
        return {
            "proj_w": self.proj_w,
            "proj_b": self.proj_b,
            "transitions": self.transitions,
            "start": self.start,
            "stop": self.stop,
        }


def _check_tags(tags, n: int, T: int) -> np.ndarray:
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (n,):
        raise ValueError(f"expected {n} gold tags, got {tags.shape[0] if tags.ndim else 0}")
    if n and (tags.min() < 0 or tags.max() >= T):
        raise ValueError(f"gold tag index out of range [0, {T})")
    return tags


def ec_softmax_loss(logits: Tensor, gold_tags) -> Tensor:
    """Summed token cross-entropy of the gold tags under per-token softmax."""
    n, T = logits.shape
    tags = _check_tags(gold_tags, n, T)
    log_z = ad.logsumexp(logits, axis=1)
    gold = logits[np.arange(n), tags]
    return ad.tsum(log_z - gold)


def crf_log_partition(emissions: Tensor, p: CrfParams) -> Tensor:
    """log Z by the forward algorithm in log space."""
    n = emissions.shape[0]
    if n == 0:
        raise ValueError("CRF needs at least one token")
    T = p.num_tags
    alpha = p.start + emissions[0]
    for t in range(1, n):
        scores = ad.reshape(alpha, (T, 1)) + p.transitions
        alpha = ad.logsumexp(scores, axis=0) + emissions[t]
    return ad.logsumexp(alpha + p.stop, axis=0)


def crf_path_score(emissions: Tensor, tags, p: CrfParams) -> Tensor:
    n = emissions.shape[0]
    tags = _check_tags(tags, n, p.num_tags)
    score = ad.tsum(emissions[np.arange(n), tags]) + p.start[int(tags[0])] + p.stop[int(tags[-1])]
    if n > 1:
        score = score + ad.tsum(p.transitions[tags[:-1], tags[1:]])
    return score


def crf_nll(emissions: Tensor, gold_tags, p: CrfParams) -> Tensor:
    """Negative log-likelihood of the gold tag path: log Z minus its score."""
    return crf_log_partition(emissions, p) - crf_path_score(emissions, gold_tags, p)


def path_score_np(em: np.ndarray, tags, trans: np.ndarray, start: np.ndarray, stop: np.ndarray) -> float:
    s = start[tags[0]] + stop[tags[-1]] + sum(em[t, y] for t, y in enumerate(tags))
    s += sum(trans[a, b] for a, b in zip(tags[:-1], tags[1:]))
    return float(s)


def viterbi_decode(emissions, p: CrfParams, constrain_bio: bool = False, tagset: BioTagset | None = None) -> list[int]:
    """Exact highest-scoring tag path; ties resolve to the lowest index.

    With ``constrain_bio`` the BIO-violating transitions (and ``I-X`` at the
    sentence start) are masked out, which requires ``tagset``.
    """
    em = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=np.float64)
    n, T = em.shape
    if n == 0:
        raise ValueError("cannot decode an empty sequence")
    trans = p.transitions.data.copy()
    start = p.start.data.copy()
    stop = p.stop.data
    if constrain_bio:
        if tagset is None or len(tagset) != T:
            raise ValueError("constrained decoding needs the matching BioTagset")
        allowed, start_ok = bio_allowed_bigrams(tagset)
        trans[~allowed] = -np.inf
        start[~start_ok] = -np.inf
    score = start + em[0]
    back = np.zeros((n, T), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(T)] + em[t]
    last = int(np.argmax(score + stop))
    path = [last]
    for t in range(n - 1, 0, -1):
        last = int(back[t, last])
        path.append(last)
    return path[::-1]


def greedy_decode(logits, allowed: np.ndarray | None = None) -> list[int]:
    """Independent per-token argmax, lowest index on ties.

    ``allowed`` (n x T boolean) optionally restricts the candidate tags per token.
    """
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if allowed is not None:
        x = np.where(allowed, x, -np.inf)
    return [int(i) for i in np.argmax(x, axis=1)]
