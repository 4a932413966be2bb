"""Training loop: Adam, early stopping, and adversarial training on the word representation.

An adversarial step computes ``g``, the gradient of the joint loss with
respect to the concatenated word representation, without touching any
parameter gradient or optimizer state. The perturbation
``eta = epsilon * g / ||g||`` (with ``epsilon = alpha * sqrt(D)``) is then
added to that representation in a second forward pass, and the parameters
are updated on the sum of the clean and perturbed losses.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import AnnotatedSentence
from .evaluation import METRIC_COLUMNS, EvalReport, evaluate
from .model import JointModel, ParameterStore

logger = logging.getLogger(__name__)

ALPHA_GRID = (5e-2, 1e-2, 1e-3, 1e-4)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class AdvConfig:
    enabled: bool = False
    alpha: float = 1e-3
    dim: int | None = None  # width D of the perturbed representation
    norm_scope: str = "sentence"  # or "token"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.norm_scope not in ("sentence", "token"):
            raise ValueError(f"norm_scope must be 'sentence' or 'token', got {self.norm_scope!r}")

    @property
    def epsilon(self) -> float:
        if self.dim is None:
            raise ValueError("representation width D is unset; call bind(model) first")
        return self.alpha * math.sqrt(self.dim)

    def bind(self, model: JointModel) -> "AdvConfig":
        self.dim = model.config.token_dim
        return self


def epsilon_for(alpha: float, dim: int) -> float:
    return alpha * math.sqrt(dim)


def adversarial_perturbation(g: np.ndarray, epsilon: float, norm_scope: str = "sentence") -> np.ndarray:
    """epsilon * g / ||g||_2, with the norm over the whole sentence (or per token row)."""
    g = np.asarray(g, dtype=np.float64)
    if norm_scope == "token":
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        if not np.all(norms > 0):
            logger.warning("zero input gradient on some tokens; those rows are left unperturbed")
        return np.where(norms > 0, epsilon * g / safe, 0.0)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        logger.warning("zero input gradient; adversarial perturbation is zero")
        return np.zeros_like(g)
    return epsilon * g / norm


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def snapshot(self):
        return self.step_count, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}


def adam_update(state: AdamState, params: ParameterStore) -> None:
    """Bias-corrected Adam step over every trainable parameter, then clear gradients."""
    trainable = params.trainable()
    for name, t in trainable:
        if t.grad is None:
            raise ValueError(f"missing gradient for trainable parameter {name!r}")
        if not np.all(np.isfinite(t.grad)):
            raise DivergenceError(f"non-finite gradient in {name!r}")
    state.step_count += 1
    k = state.step_count
    bc1 = 1.0 - state.beta1**k
    bc2 = 1.0 - state.beta2**k
    for name, t in trainable:
        g = t.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        t.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grad()


@dataclass
class EarlyStopState:
    patience: int = 30
    best_metric: float = -math.inf
    best_epoch: int = 0
    since_improvement: int = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record one epoch; True when training should stop.

        Stops once ``patience`` consecutive epochs bring no strict improvement.
        """
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        return self.since_improvement >= self.patience


def _finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise DivergenceError(f"non-finite {what}: {x}")
    return x


def input_gradient(model: JointModel, sentence, training: bool = True, rng=None):
    """Clean forward plus g = dL/dw at the word representation.

    Leaves parameter values, parameter gradients, and optimizer state
    untouched. Returns ``(losses, g)``; the clean graph is retained so that
    the caller can still backpropagate ``losses.loss_joint``.
    """
    losses = model.forward_joint(sentence, training=training, rng=rng)
    (g,) = ad.grad(losses.loss_joint, [losses.embedded_input], retain_graph=True)
    return losses, g


def accumulate_step(model: JointModel, sentence, adv: AdvConfig | None, rng, weight: float = 1.0) -> dict:
    """Forward/backward for one sentence, adding ``weight`` x gradients into the parameters."""
    if adv is None or not adv.enabled:
        losses = model.forward_joint(sentence, training=True, rng=rng)
        clean = _finite(losses.loss_joint.item(), "clean loss")
        total = losses.loss_joint if weight == 1.0 else ad.scale(losses.loss_joint, weight)
        total.backward()
        return {"loss_clean": clean, "loss_adv": None}
    if adv.dim is None:
        adv.bind(model)
    losses, g = input_gradient(model, sentence, training=True, rng=rng)
    clean = _finite(losses.loss_joint.item(), "clean loss")
    eta = adversarial_perturbation(g, adv.epsilon, adv.norm_scope)
    adv_losses = model.forward_joint(sentence, training=True, rng=rng, perturbation=eta)
    adv_val = _finite(adv_losses.loss_joint.item(), "adversarial loss")
    total = losses.loss_joint + adv_losses.loss_joint
    if weight != 1.0:
        total = ad.scale(total, weight)
    total.backward()
    return {"loss_clean": clean, "loss_adv": adv_val}


def train_step(model: JointModel, sentence, adv: AdvConfig | None, adam: AdamState, rng) -> dict:
    """One sentence-level update (clean, or clean + adversarial when ``adv.enabled``)."""
    model.store.zero_grad()
    metrics = accumulate_step(model, sentence, adv, rng)
    adam_update(adam, model.store)
    return metrics


def adversarial_step(model: JointModel, sentence, adv: AdvConfig, adam: AdamState, rng=None) -> dict:
    return train_step(model, sentence, adv, adam, rng if rng is not None else np.random.default_rng(0))


def predict_corpus(model: JointModel, sentences) -> list[AnnotatedSentence]:
    out = []
    for s in sentences:
        tags, arcs = model.predict(s)
        out.append(AnnotatedSentence(list(s.tokens), tags, arcs))
    return out


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 30
    batch_size: int = 1
    eval_mode: str = "S"
    eval_train: bool = False
    target_f1: float | None = None  # stop as soon as dev overall F1 reaches this
    seed: int = 0


@dataclass
class TrainReport:
    rows: list[dict]
    best_epoch: int
    best_metric: float
    epochs_run: int
    best_report: EvalReport | None
    stopped_early: bool


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    return repr(float(x))


def fit(model: JointModel, train: list[AnnotatedSentence], dev: list[AnnotatedSentence], config: TrainConfig,
        adv: AdvConfig | None = None, rng: np.random.Generator | None = None,
        metrics_path=None, checkpoint_path=None) -> TrainReport:
    """Train with per-epoch dev evaluation, keep the best overall-F1 parameters.

    The model ends holding the best parameters. Per-epoch rows follow
    ``METRIC_COLUMNS`` and are also written to ``metrics_path`` when given.
    """
    if not train or not dev:
        raise ValueError("training and development corpora must be non-empty")
    from .checkpoint import save_checkpoint

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if adv is not None and adv.enabled:
        adv.bind(model)
    encoded = [model.encode(s) for s in train]
    adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    stopper = EarlyStopState(patience=config.patience)
    best_snap = model.store.snapshot()
    best_report = None
    rows: list[dict] = []
    fh = None
    writer = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()

    def emit(row):
        row = {k: (_fmt(v) if k not in ("epoch", "split") else v) for k, v in row.items()}
        rows.append(row)
        if writer is not None:
            writer.writerow(row)
            fh.flush()

    stopped_early = False
    epoch = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(encoded))
            clean_sum, adv_sum = 0.0, 0.0
            for b0 in range(0, len(order), config.batch_size):
                batch = order[b0 : b0 + config.batch_size]
                model.store.zero_grad()
                for idx in batch:
                    m = accumulate_step(model, encoded[idx], adv, rng, weight=1.0 / len(batch))
                    clean_sum += m["loss_clean"]
                    if m["loss_adv"] is not None:
                        adv_sum += m["loss_adv"]
                adam_update(adam, model.store)
            loss_clean = clean_sum / len(encoded)
            loss_adv = adv_sum / len(encoded) if adv is not None and adv.enabled else None

            if config.eval_train:
                tr = evaluate(train, predict_corpus(model, train), config.eval_mode)
                emit(tr.row(epoch, "train", loss_clean, loss_adv))
            else:
                emit({**{c: "" for c in METRIC_COLUMNS}, "epoch": epoch, "split": "train",
                      "loss_clean": loss_clean, "loss_adv": loss_adv})
            report = evaluate(dev, predict_corpus(model, dev), config.eval_mode)
            emit(report.row(epoch, "dev"))
            logger.info("epoch %d loss %.4f dev overall F1 %.4f", epoch, loss_clean, report.overall_f1)

            improved = report.overall_f1 > stopper.best_metric
            stop = stopper.update(epoch, report.overall_f1)
            if improved:
                best_snap = model.store.snapshot()
                best_report = report
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)
            if config.target_f1 is not None and report.overall_f1 >= config.target_f1:
                stopped_early = True
                break
            if stop:
                stopped_early = True
                break
    finally:
        if fh is not None:
            fh.close()
    model.store.restore(best_snap)
    return TrainReport(rows, stopper.best_epoch, stopper.best_metric, epoch, best_report, stopped_early)


def write_metrics_csv(rows, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
