"""Embedding tables, LSTM recurrences, character word encoder, dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class EmbeddingTable:
    """V x d lookup matrix. Row 0 is the unknown symbol."""

    weight: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.weight.requires_grad = self.trainable

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def random(cls, rng, vocab_size: int, dim: int, trainable: bool = True, name: str | None = None):
        w = Tensor(uniform_init(rng, dim, (vocab_size, dim)), name=name)
        return cls(w, trainable)


def embedding_lookup(table: EmbeddingTable, ids) -> Tensor:
    """Gather rows of ``table``; gradients scatter back to those rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise IndexError(f"embedding id out of range [0, {table.vocab_size})")
    return ad.take(table.weight, ids)


@dataclass
class LstmParams:
    """Fused gate weights, gate order (input, forget, cell, output)."""

    w_x: Tensor  # d x 4H
    w_h: Tensor  # H x 4H
    bias: Tensor  # 4H

    def __post_init__(self):
        four_h = self.bias.shape[0]
        if four_h % 4 or self.w_x.shape[1] != four_h or self.w_h.shape != (four_h // 4, four_h):
            raise ValueError(
                f"inconsistent LSTM shapes: w_x {self.w_x.shape}, w_h {self.w_h.shape}, bias {self.bias.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.bias.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @classmethod
    def init(cls, rng, input_dim: int, hidden: int, forget_bias: float = 1.0):
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = forget_bias
        return cls(
            Tensor(uniform_init(rng, input_dim, (input_dim, 4 * hidden)), requires_grad=True),
            Tensor(uniform_init(rng, hidden, (hidden, 4 * hidden)), requires_grad=True),
            Tensor(bias, requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``x`` may be a vector or a batch of rows."""
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden or c_prev.shape[-1] != p.hidden:
        raise ValueError(
            f"LSTM dimension mismatch: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"expected input {p.input_dim}, hidden {p.hidden}"
        )
    H = p.hidden
    z = ad.matmul(x, p.w_x) + ad.matmul(h_prev, p.w_h) + p.bias
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H : 2 * H])
    g = ad.tanh(z[..., 2 * H : 3 * H])
    o = ad.sigmoid(z[..., 3 * H : 4 * H])
    c = f * c_prev + i * g
    h = o * ad.tanh(c)
    return h, c


def _run_direction(xs: Tensor, p: LstmParams, reverse: bool) -> list[Tensor]:
    n = xs.shape[0]
    h = Tensor(np.zeros(p.hidden))
    c = Tensor(np.zeros(p.hidden))
    outs: list[Tensor | None] = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        h, c = lstm_cell_step(xs[t], h, c, p)
        outs[t] = h
    return outs


def bilstm_sequence(xs: Tensor, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    """n x d input to n x 2H output; row t = [forward h_t, backward h_t]."""
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError(f"bilstm_sequence needs a non-empty n x d input, got shape {xs.shape}")
    f = ad.stack(_run_direction(xs, fwd, reverse=False), axis=0)
    b = ad.stack(_run_direction(xs, bwd, reverse=True), axis=0)
    return ad.concat([f, b], axis=1)


def _final_states_masked(x_steps: Tensor, mask: np.ndarray, p: LstmParams) -> Tensor:
    """Run a batch of left-aligned padded sequences, return the state at each row's last valid step.

    ``x_steps`` is words x steps x d, ``mask`` is words x steps with 1 for real characters.
    Padded steps carry the previous state forward unchanged.
    """
    W, T = mask.shape
    h = Tensor(np.zeros((W, p.hidden)))
    c = Tensor(np.zeros((W, p.hidden)))
    for t in range(T):
        h_new, c_new = lstm_cell_step(x_steps[:, t, :], h, c, p)
        m = mask[:, t : t + 1]
        if m.all():
            h, c = h_new, c_new
        else:
            keep = 1.0 - m
            h = h_new * m + h * keep
            c = c_new * m + c * keep
    return h


def char_word_batch(
    word_ids,
    char_ids: list[list[int]],
    wtab: EmbeddingTable,
    ctab: EmbeddingTable,
    char_lstm: tuple[LstmParams, LstmParams],
) -> Tensor:
    """Token representations for a whole sentence at once: n x (d_w + 2 d_ch).

    Each row is [word embedding, final forward char state, final backward char state].
    Batching across words is exact: padding is masked out of both directions.
    """
    n = len(char_ids)
    if n == 0 or len(word_ids) != n:
        raise ValueError("word ids and char ids must be non-empty and aligned")
    seqs = [list(c) if len(c) else [0] for c in char_ids]
    lengths = np.array([len(s) for s in seqs])
    T = int(lengths.max())
    fwd_ids = np.zeros((n, T), dtype=np.int64)
    bwd_ids = np.zeros((n, T), dtype=np.int64)
    for w, s in enumerate(seqs):
        fwd_ids[w, : len(s)] = s
        bwd_ids[w, : len(s)] = s[::-1]
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
    fwd_lstm, bwd_lstm = char_lstm
    h_f = _final_states_masked(embedding_lookup(ctab, fwd_ids), mask, fwd_lstm)
    h_b = _final_states_masked(embedding_lookup(ctab, bwd_ids), mask, bwd_lstm)
    words = embedding_lookup(wtab, word_ids)
    return ad.concat([words, h_f, h_b], axis=1)


def char_word_representation(word_id: int, char_ids, wtab, ctab, char_lstm) -> Tensor:
    """Single-token form of :func:`char_word_batch`, returns a vector."""
    return char_word_batch([word_id], [list(char_ids)], wtab, ctab, char_lstm)[0]


def dropout_apply(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity at inference or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask
