"""End-to-end joint model: embeddings, shared BiLSTM, entity head, relation head."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import AnnotatedSentence, Vocab, decode_bio
from .layers import EmbeddingTable, LstmParams, bilstm_sequence, char_word_batch, dropout_apply, uniform_init
from .ner import BioTagset, CrfParams, crf_nll, ec_softmax_loss, greedy_decode, split_tag, viterbi_decode
from .relations import NO_RELATION, Arcs, RelScorerParams, build_relation_inputs, decode_relations, rel_loss, score_heads

MODE_NER = "ner"
MODE_EC = "ec"
_MODE_ALIASES = {"ner": MODE_NER, "ner-crf": MODE_NER, "crf": MODE_NER, "ec": MODE_EC, "ec-softmax": MODE_EC}


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode.lower()]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected NER-CRF or EC-softmax") from None


@dataclass
class ModelConfig:
    mode: str = MODE_NER
    word_dim: int = 50
    char_dim: int = 25
    char_hidden: int = 25
    hidden: int = 64
    label_dim: int = 25
    rel_hidden: int = 64
    dropout: float = 0.1
    constrain_bio: bool = True
    rel_threshold: float = 0.5
    label_source: str = "predicted"  # or "gold" (teacher forcing)
    train_word_embeddings: bool = True

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.label_source not in ("predicted", "gold"):
            raise ValueError(f"label_source must be 'predicted' or 'gold', got {self.label_source!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 < self.rel_threshold < 1.0:
            raise ValueError(f"rel_threshold must be in (0, 1), got {self.rel_threshold}")

    @property
    def token_dim(self) -> int:
        """Width D of the concatenated word representation."""
        return self.word_dim + 2 * self.char_hidden

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ParameterStore:
    """Ordered name -> Tensor registry of every model parameter."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self):
        return [(k, t) for k, t in self._params.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            t.data[...] = snap[k]


@dataclass
class SoftmaxParams:
    proj_w: Tensor
    proj_b: Tensor

    def emissions(self, features: Tensor) -> Tensor:
        return ad.matmul(features, self.proj_w) + self.proj_b

    def tensors(self) -> dict[str, Tensor]:
        return {"proj_w": self.proj_w, "proj_b": self.proj_b}


class JointLosses(NamedTuple):
    loss_ner: Tensor
    loss_rel: Tensor
    loss_joint: Tensor
    embedded_input: Tensor


@dataclass
class EncodedSentence:
    word_ids: list[int]
    char_ids: list[list[int]]
    gold_tags: np.ndarray
    arcs: Arcs
    in_entity: np.ndarray  # gold boundary mask, used by EC decoding


class JointModel:
    def __init__(self, config: ModelConfig, vocab: Vocab, rng: np.random.Generator | None = None,
                 word_table: EmbeddingTable | None = None):
        self.config = config
        self.vocab = vocab
        self.relations = list(vocab.relations)
        rng = rng if rng is not None else np.random.default_rng(0)
        if config.mode == MODE_NER:
            self.tagset: BioTagset | None = vocab.tagset
            self.labels = list(self.tagset.tags)
        else:
            self.tagset = None
            self.labels = ["O"] + list(vocab.entity_types)
        T = len(self.labels)
        c = config
        self.store = ParameterStore()
        if word_table is None:
            word_table = EmbeddingTable(Tensor(rng.uniform(-0.25, 0.25, (len(vocab.words), c.word_dim))))
        elif word_table.dim != c.word_dim or word_table.vocab_size != len(vocab.words):
            raise ValueError("word table shape does not match vocab and word_dim")
        word_table.trainable = c.train_word_embeddings
        word_table.weight.requires_grad = c.train_word_embeddings
        self.word_table = word_table
        self.char_table = EmbeddingTable.random(rng, len(vocab.chars), c.char_dim)
        self.label_table = EmbeddingTable.random(rng, T, c.label_dim)
        self.char_lstm = (LstmParams.init(rng, c.char_dim, c.char_hidden), LstmParams.init(rng, c.char_dim, c.char_hidden))
        self.encoder = (LstmParams.init(rng, c.token_dim, c.hidden), LstmParams.init(rng, c.token_dim, c.hidden))
        if c.mode == MODE_NER:
            self.head = CrfParams.init(rng, 2 * c.hidden, T)
        else:
            self.head = SoftmaxParams(
                Tensor(uniform_init(rng, 2 * c.hidden, (2 * c.hidden, T)), requires_grad=True),
                Tensor(np.zeros(T), requires_grad=True),
            )
        self.rel = RelScorerParams.init(rng, 2 * c.hidden + c.label_dim, c.rel_hidden, len(self.relations))

        s = self.store
        s.add("word_emb", self.word_table.weight)
        s.add("char_emb", self.char_table.weight)
        s.add("label_emb", self.label_table.weight)
        for prefix, pair in (("char_lstm", self.char_lstm), ("encoder", self.encoder)):
            for direction, p in zip(("fwd", "bwd"), pair):
                for k, t in p.tensors().items():
                    s.add(f"{prefix}.{direction}.{k}", t)
        head_name = "crf" if c.mode == MODE_NER else "ec"
        for k, t in self.head.tensors().items():
            s.add(f"{head_name}.{k}", t)
        for k, t in self.rel.tensors().items():
            s.add(f"rel.{k}", t)

    # ------------------------------------------------------------------

    def label_ids(self, bio_tags) -> np.ndarray:
        if self.config.mode == MODE_NER:
            return np.array(self.tagset.encode(bio_tags), dtype=np.int64)
        index = {lab: i for i, lab in enumerate(self.labels)}
        out = []
        for tag in bio_tags:
            _, etype = split_tag(tag)
            out.append(index.get(etype or "O", 0))
        return np.array(out, dtype=np.int64)

    def encode(self, sentence: AnnotatedSentence) -> EncodedSentence:
        if sentence.n == 0:
            raise ValueError("empty sentence")
        in_entity = np.zeros(sentence.n, dtype=bool)
        for start, end, _ in decode_bio(sentence.bio_tags):
            in_entity[start : end + 1] = True
        return EncodedSentence(
            [self.vocab.word_id(t) for t in sentence.tokens],
            [self.vocab.char_ids(t) for t in sentence.tokens],
            self.label_ids(sentence.bio_tags),
            sentence.arcs,
            in_entity,
        )

    def embed(self, enc: EncodedSentence) -> Tensor:
        return char_word_batch(enc.word_ids, enc.char_ids, self.word_table, self.char_table, self.char_lstm)

    def _ec_allowed(self, in_entity: np.ndarray) -> np.ndarray:
        T = len(self.labels)
        allowed = np.zeros((len(in_entity), T), dtype=bool)
        allowed[in_entity, 1:] = True
        allowed[~in_entity, 0] = True
        return allowed

    def decode_tags(self, emissions, in_entity: np.ndarray) -> list[int]:
        if self.config.mode == MODE_NER:
            return viterbi_decode(emissions, self.head, self.config.constrain_bio, self.tagset)
        return greedy_decode(emissions, self._ec_allowed(in_entity))

    def _heads(self, x: Tensor, training: bool, rng):
        x = dropout_apply(x, self.config.dropout, training, rng)
        h = bilstm_sequence(x, *self.encoder)
        h = dropout_apply(h, self.config.dropout, training, rng)
        return h, self.head.emissions(h)

    def forward_joint(self, sentence, training: bool = False, rng=None, perturbation=None) -> JointLosses:
        """Losses for one sentence.

        ``perturbation`` (n x D array) is added to the concatenated word
        representation before dropout. The returned ``embedded_input`` is the
        unperturbed representation, still attached to the graph.
        """
        enc = sentence if isinstance(sentence, EncodedSentence) else self.encode(sentence)
        w = self.embed(enc)
        x = w if perturbation is None else w + Tensor(perturbation)
        h, em = self._heads(x, training, rng)
        if self.config.mode == MODE_NER:
            loss_ner = crf_nll(em, enc.gold_tags, self.head)
        else:
            loss_ner = ec_softmax_loss(em, enc.gold_tags)
        if self.config.label_source == "gold":
            label_tags = enc.gold_tags
        else:
            label_tags = self.decode_tags(em, enc.in_entity)
        z = build_relation_inputs(h, label_tags, self.label_table)
        scores = score_heads(z, self.rel)
        loss_rel = rel_loss(scores, enc.arcs, self.relations)
        return JointLosses(loss_ner, loss_rel, loss_ner + loss_rel, w)

    def predict(self, tokens, boundaries=None) -> tuple[list[str], Arcs]:
        """Decode BIO tags and relation arcs.

        ``tokens`` may be a token list or an :class:`AnnotatedSentence`; in EC
        mode the sentence's gold tags (or ``boundaries``, a list of inclusive
        spans) supply the entity boundaries.
        """
        if isinstance(tokens, AnnotatedSentence):
            sentence = tokens
        else:
            sentence = AnnotatedSentence.unlabeled(tokens)
        if sentence.n == 0:
            raise ValueError("cannot predict on an empty token list")
        if boundaries is not None:
            tags = ["O"] * sentence.n
            for start, end, *_ in boundaries:
                tags[start] = "B-X"
                for k in range(start + 1, end + 1):
                    tags[k] = "I-X"
            sentence = AnnotatedSentence(sentence.tokens, tags, sentence.arcs)
        if self.config.mode == MODE_NER:
            sentence = AnnotatedSentence(sentence.tokens, ["O"] * sentence.n, sentence.arcs)
        with ad.no_grad():
            enc = self.encode(sentence)
            w = self.embed(enc)
            h, em = self._heads(w, False, None)
            tag_ids = self.decode_tags(em, enc.in_entity)
            z = build_relation_inputs(h, tag_ids, self.label_table)
            scores = score_heads(z, self.rel)
        bio = self._to_bio(tag_ids, enc.in_entity, sentence)
        arcs = decode_relations(scores, self.relations, self.config.rel_threshold)
        return bio, enforce_last_token_heads(arcs, bio)

    def _to_bio(self, tag_ids, in_entity, sentence) -> list[str]:
        if self.config.mode == MODE_NER:
            return self.tagset.decode(tag_ids)
        # EC: gold boundaries with predicted per-token types
        starts = set()
        prev = False
        for i, inside in enumerate(in_entity):
            if inside and (not prev or sentence.bio_tags[i].startswith("B-")):
                starts.add(i)
            prev = inside
        out = []
        for i, t in enumerate(tag_ids):
            if t == 0:
                out.append("O")
            else:
                prefix = "B" if i in starts else "I"
                out.append(f"{prefix}-{self.labels[t]}")
        return out

    def config_dict(self) -> dict:
        return asdict(self.config)


def enforce_last_token_heads(arcs: Arcs, bio_tags) -> Arcs:
    """Move each head that lands inside a multi-token entity to that entity's last token."""
    last = {}
    for start, end, _ in decode_bio(bio_tags):
        for k in range(start, end + 1):
            last[k] = end
    out: Arcs = []
    for i, token_arcs in enumerate(arcs):
        fixed: list[tuple[int, str]] = []
        for j, lab in token_arcs:
            if lab != NO_RELATION:
                j = last.get(j, j)
            if (j, lab) not in fixed:
                fixed.append((j, lab))
        out.append(fixed)
    return out
