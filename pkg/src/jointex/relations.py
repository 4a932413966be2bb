"""Multi-label head selection: every (dependent, head, label) triple gets its own sigmoid.

Arcs are stored per dependent token as a list of ``(head_index, label)``
pairs. A token without relations carries the single self-arc ``(i, "N")``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import EmbeddingTable, embedding_lookup, uniform_init

NO_RELATION = "N"

Arcs = list[list[tuple[int, str]]]


@dataclass
class RelScorerParams:
    """score[i, j, k] = v_k . tanh(U z_j + W z_i + b): token j as head of token i under label k."""

    u: Tensor  # D x L, candidate head
    w: Tensor  # D x L, dependent
    b: Tensor  # L
    v: Tensor  # L x R, one column per label including "N"

    @property
    def num_labels(self) -> int:
        return self.v.shape[1]

    @classmethod
    def init(cls, rng, in_dim: int, hidden: int, num_labels: int):
        return cls(
            Tensor(uniform_init(rng, in_dim, (in_dim, hidden)), requires_grad=True),
            Tensor(uniform_init(rng, in_dim, (in_dim, hidden)), requires_grad=True),
            Tensor(np.zeros(hidden), requires_grad=True),
            Tensor(uniform_init(rng, hidden, (hidden, num_labels)), requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"u": self.u, "w": self.w, "b": self.b, "v": self.v}


def build_relation_inputs(bilstm_out: Tensor, tags, label_table: EmbeddingTable) -> Tensor:
    """Append the embedding of each token's entity tag to its encoder output."""
    if len(tags) != bilstm_out.shape[0]:
        raise ValueError("one tag per token required")
    return ad.concat([bilstm_out, embedding_lookup(label_table, tags)], axis=1)


def score_heads(z: Tensor, p: RelScorerParams) -> Tensor:
    n = z.shape[0]
    L = p.b.shape[0]
    heads = ad.reshape(ad.matmul(z, p.u), (1, n, L))
    deps = ad.reshape(ad.matmul(z, p.w), (n, 1, L))
    hidden = ad.tanh(deps + heads + p.b)
    return ad.matmul(hidden, p.v)


def gold_target(arcs: Arcs, n: int, labels: list[str]) -> np.ndarray:
    """Binary n x n x R target with 1 at every gold (dependent, head, label)."""
    index = {lab: k for k, lab in enumerate(labels)}
    y = np.zeros((n, n, len(labels)))
    if len(arcs) != n:
        raise ValueError(f"expected arcs for {n} tokens, got {len(arcs)}")
    for i, token_arcs in enumerate(arcs):
        for j, lab in token_arcs:
            if not 0 <= j < n:
                raise ValueError(f"head {j} out of range for token {i}")
            y[i, j, index[lab]] = 1.0
    return y


def rel_loss(scores: Tensor, gold: Arcs, labels: list[str]) -> Tensor:
    """Sigmoid cross-entropy over the full n x n x R grid, summed.

    Gold triples contribute -log sigmoid(s); every other triple -log(1 - sigmoid(s)).
    Uses -log sigmoid(s) = softplus(-s) and -log(1 - sigmoid(s)) = softplus(s).
    """
    n = scores.shape[0]
    y = gold_target(gold, n, labels)
    # softplus(s) - y*s covers both cases
    return ad.tsum(ad.softplus(scores)) - ad.tsum(scores * y)


def decode_relations(scores, labels: list[str], threshold: float = 0.5) -> Arcs:
    """Every non-"N" triple with probability >= threshold; otherwise the self N arc."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    probs = ad._stable_sigmoid(s)
    n = s.shape[0]
    usable = [k for k, lab in enumerate(labels) if lab != NO_RELATION]
    arcs: Arcs = []
    for i in range(n):
        token_arcs = [(j, labels[k]) for j in range(n) for k in usable if probs[i, j, k] >= threshold]
        arcs.append(token_arcs if token_arcs else [(i, NO_RELATION)])
    return arcs
