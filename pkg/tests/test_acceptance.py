"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary (see ``conftest.py``) and when this file is run directly.
"""

import time
import zlib

import numpy as np
import pytest

from jointex import autodiff as ad
from jointex.autodiff import Tensor, check_gradients
from jointex.checkpoint import checkpoint_from_bytes, checkpoint_bytes
from jointex.data import AnnotatedSentence, Vocab, encode_bio
from jointex.evaluation import evaluate, f1, score_entities
from jointex.layers import EmbeddingTable, LstmParams, bilstm_sequence, char_word_batch, lstm_cell_step
from jointex.model import JointModel, ModelConfig
from jointex.ner import BioTagset, CrfParams, bio_allowed_bigrams, crf_log_partition, crf_nll, ec_softmax_loss, viterbi_decode
from jointex.relations import RelScorerParams, rel_loss, score_heads
from jointex.synthetic import bundled_fixture
from jointex.trainer import (
    AdamState,
    AdvConfig,
    TrainConfig,
    accumulate_step,
    adversarial_perturbation,
    fit,
    input_gradient,
    predict_corpus,
    train_step,
)

from oracles import brute_force_crf, naive_rel_loss, path_score
from test_autodiff import BINARY, UNARY

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})")
    assert ok, detail


def small_config(**kw) -> ModelConfig:
    base = dict(word_dim=12, char_dim=6, char_hidden=6, hidden=10, label_dim=5, rel_hidden=8, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return bundled_fixture()


@pytest.fixture(scope="module")
def vocab(corpus):
    return Vocab.build(corpus)


def random_crf(rng, T):
    p = CrfParams.zeros(T)
    p.transitions.data[...] = rng.normal(size=(T, T))
    p.start.data[...] = rng.normal(size=T)
    p.stop.data[...] = rng.normal(size=T)
    return p


def test_criterion_1_crf_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, mismatches, count = 0.0, 0, 500
    for _ in range(count):
        n, T = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        em = rng.normal(size=(n, T)) * 2
        p = random_crf(rng, T)
        gold = rng.integers(0, T, size=n)
        log_z, best, *_ = brute_force_crf(em, p.transitions.data, p.start.data, p.stop.data)
        # log Z as used inside crf_nll: nll + gold path score
        nll = crf_nll(Tensor(em), gold, p).item()
        via_nll = nll + path_score(em, gold, p.transitions.data, p.start.data, p.stop.data)
        worst = max(worst, abs(crf_log_partition(Tensor(em), p).item() - log_z), abs(via_nll - log_z))
        mismatches += viterbi_decode(em, p) != best
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and mismatches == 0 and elapsed < 30
    record(1, "CRF log Z and Viterbi match brute force", ok,
           f"{count} instances, max |dlogZ| {worst:.1e}, viterbi mismatches {mismatches}, {elapsed:.1f}s")


def _op_suite(rng_seed_base=0):
    worst = {}
    for table, arity in ((UNARY, 1), (BINARY, 2)):
        for name, op in table.items():
            rng = np.random.default_rng(zlib.crc32(name.encode()) + rng_seed_base)
            weights = rng.normal(size=64)
            w_max = 0.0
            for _ in range(20):
                args = [Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(arity)]

                def f():
                    out = op(*args)
                    return ad.tsum(out * Tensor(weights[: out.size].reshape(out.shape)))

                w_max = max(w_max, check_gradients(f, args))
            worst[name] = w_max
    return worst


def _layer_suite():
    rng = np.random.default_rng(202)
    worst = {}
    p = LstmParams.init(rng, 3, 4)
    x = Tensor(rng.normal(size=3), requires_grad=True)
    h0, c0 = Tensor(rng.normal(size=4), requires_grad=True), Tensor(rng.normal(size=4), requires_grad=True)
    worst["lstm_cell"] = check_gradients(
        lambda: ad.tsum(ad.concat(list(lstm_cell_step(x, h0, c0, p)), axis=0)), [x, h0, c0, *p.tensors().values()])
    fwd, bwd = LstmParams.init(rng, 3, 2), LstmParams.init(rng, 3, 2)
    xs = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    wts = Tensor(rng.normal(size=(4, 4)))
    worst["bilstm"] = check_gradients(lambda: ad.tsum(bilstm_sequence(xs, fwd, bwd) * wts),
                                      [xs, *fwd.tensors().values(), *bwd.tensors().values()])
    wtab, ctab = EmbeddingTable.random(rng, 5, 3), EmbeddingTable.random(rng, 6, 2)
    chars = (LstmParams.init(rng, 2, 2), LstmParams.init(rng, 2, 2))
    worst["char_word"] = check_gradients(
        lambda: ad.tsum(ad.tanh(char_word_batch([1, 3], [[1, 2, 3], [4]], wtab, ctab, chars))),
        [wtab.weight, ctab.weight, *chars[0].tensors().values()])
    crf = random_crf(rng, 4)
    em = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    worst["crf_nll"] = check_gradients(lambda: crf_nll(em, [0, 2, 1], crf),
                                       [em, crf.transitions, crf.start, crf.stop])
    worst["ec_softmax"] = check_gradients(lambda: ec_softmax_loss(em, [3, 0, 1]), [em])
    rp = RelScorerParams.init(rng, 4, 3, 2)
    z = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    worst["rel_loss"] = check_gradients(
        lambda: rel_loss(score_heads(z, rp), [[(2, "R")], [(1, "N")], [(0, "R"), (2, "R")]], ["N", "R"]),
        [z, *rp.tensors().values()])
    return worst


def test_criterion_2_gradient_suite(vocab):
    t0 = time.perf_counter()
    ops = {**_op_suite(), **_layer_suite()}
    op_worst = max(ops.values())
    sentence = AnnotatedSentence(["Ann", "Paris"], ["B-PER", "B-LOC"], [[(1, "LivesIn")], [(1, "N")]])
    joint = {}
    for source in ("gold", "predicted"):
        m = JointModel(small_config(label_source=source), vocab, np.random.default_rng(303))
        params = [t for _, t in m.store.trainable()]
        joint[source] = check_gradients(lambda: m.forward_joint(sentence).loss_joint, params,
                                        max_coords=40, rng=np.random.default_rng(0))
    elapsed = time.perf_counter() - t0
    ok = op_worst <= 1e-5 and max(joint.values()) <= 1e-4 and elapsed < 120
    worst_op = max(ops, key=ops.get)
    record(2, "finite-difference gradient checks", ok,
           f"{len(ops)} ops worst {op_worst:.1e} ({worst_op}); L_Joint gold-labels {joint['gold']:.1e}, "
           f"predicted-labels {joint['predicted']:.1e}; {elapsed:.1f}s")


def test_criterion_3_adversarial_contract(vocab, corpus):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    norm_err, ascent, beats, draws = 0.0, 0, 0, 200
    models = [JointModel(small_config(), vocab, np.random.default_rng(s)) for s in range(5)]
    for d in range(draws):
        m = models[d % len(models)]
        s = corpus[int(rng.integers(len(corpus)))]
        losses, g = input_gradient(m, s, training=False)
        w = losses.embedded_input.data
        eps = 1e-3 * np.linalg.norm(w) * float(rng.uniform(0.1, 1.0))
        eta = adversarial_perturbation(g, eps)
        norm_err = max(norm_err, abs(np.linalg.norm(eta) - eps))
        r = rng.normal(size=g.shape)
        eta_rand = eps * r / np.linalg.norm(r)
        l0 = losses.loss_joint.item()
        l_adv = m.forward_joint(s, perturbation=eta).loss_joint.item()
        l_rand = m.forward_joint(s, perturbation=eta_rand).loss_joint.item()
        ascent += l_adv >= l0 - 1e-9
        beats += l_adv >= l_rand
    elapsed = time.perf_counter() - t0
    ok = norm_err <= 1e-12 and ascent >= 0.95 * draws and beats >= 0.90 * draws and elapsed < 120
    record(3, "adversarial perturbation contract", ok,
           f"max | ||eta|| - eps | {norm_err:.1e}; ascent {ascent}/{draws}; beats random {beats}/{draws}; {elapsed:.1f}s")


def test_criterion_4_parameter_freeze(vocab, corpus):
    m = JointModel(small_config(dropout=0.2), vocab, np.random.default_rng(505))
    adam = AdamState()
    adv = AdvConfig(enabled=True, alpha=0.01)
    rng = np.random.default_rng(0)
    for s in corpus[:3]:
        train_step(m, s, adv, adam, rng)
    params_before = {k: t.data.tobytes() for k, t in m.store.items()}
    grads_before = {k: t.grad for k, t in m.store.items()}
    steps_before, m_before, v_before = adam.snapshot()
    input_gradient(m, corpus[4], training=True, rng=np.random.default_rng(1))
    same_params = all(t.data.tobytes() == params_before[k] for k, t in m.store.items())
    same_grads = all(t.grad is None and grads_before[k] is None for k, t in m.store.items())
    same_moments = adam.step_count == steps_before and all(
        adam.m[k].tobytes() == m_before[k].tobytes() and adam.v[k].tobytes() == v_before[k].tobytes() for k in m_before)

    # the accumulated update gradient equals d/dtheta of L(w) + L(w + eta) and nothing else
    m2 = JointModel(small_config(), vocab, np.random.default_rng(506))
    adv2 = AdvConfig(enabled=True, alpha=0.01).bind(m2)
    s = corpus[5]
    m2.store.zero_grad()
    accumulate_step(m2, s, adv2, None)
    got = {k: t.grad.copy() for k, t in m2.store.trainable()}
    _, g = input_gradient(m2, s, training=False)
    eta = adversarial_perturbation(g, adv2.epsilon)
    names, tensors = zip(*m2.store.trainable())
    total = m2.forward_joint(s).loss_joint + m2.forward_joint(s, perturbation=eta).loss_joint
    ref = dict(zip(names, ad.grad(total, list(tensors))))
    composed = all(np.array_equal(got[k], ref[k]) for k in names)
    ok = same_params and same_grads and same_moments and composed
    record(4, "gradient pass leaves parameters and optimizer state untouched", ok,
           f"params {same_params}, grad buffers {same_grads}, moments {same_moments}, update composition {composed}")


OVERFIT = dict(word_dim=20, char_dim=10, char_hidden=10, hidden=32, label_dim=10, rel_hidden=32, dropout=0.0)


@pytest.mark.parametrize("adv_on", [False, True], ids=["at_off", "at_on"])
def test_criterion_5_overfit(corpus, vocab, adv_on):
    m = JointModel(ModelConfig(**OVERFIT), vocab, np.random.default_rng(0))
    adv = AdvConfig(enabled=adv_on, alpha=1e-3)
    t0 = time.perf_counter()
    rep = fit(m, corpus, corpus, TrainConfig(lr=0.01, max_epochs=300, patience=300, target_f1=1.0),
              adv=adv, rng=np.random.default_rng(1))
    elapsed = time.perf_counter() - t0
    final = evaluate(corpus, predict_corpus(m, corpus), "S")
    ent, rel = final.entity[2], final.relation[2]
    ok = ent == 1.0 and rel == 1.0 and rep.epochs_run <= 300 and elapsed < 300
    label = "AT on, alpha=1e-3" if adv_on else "AT off"
    record(5, f"overfit 20-sentence fixture, {label}", ok,
           f"strict entity F1 {ent}, relation F1 {rel}, {rep.epochs_run} epochs, {elapsed:.1f}s")


def test_criterion_6_rel_loss_oracle():
    rng = np.random.default_rng(606)
    labels = ["N", "LivesIn", "WorksFor", "LocatedIn"]
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        s = rng.normal(size=(n, n, 4)) * 3
        arcs = []
        for i in range(n):
            k = int(rng.integers(0, 3))
            if k == 0:
                arcs.append([(i, "N")])
            else:
                arcs.append(sorted({(int(rng.integers(n)), labels[int(rng.integers(1, 4))]) for _ in range(k)}))
        worst = max(worst, abs(rel_loss(Tensor(s), arcs, labels).item() - naive_rel_loss(s, arcs, labels)))
    record(6, "rel_loss matches naive double loop", worst <= 1e-10, f"100 instances, max abs diff {worst:.1e}")


def _sent(tags):
    return AnnotatedSentence([f"w{i}" for i in range(len(tags))], list(tags), [[(i, "N")] for i in range(len(tags))])


def test_criterion_7_evaluation_fixtures():
    checks = []
    checks.append(f1(2, 1, 2) == (2 / 3, 0.5, 4 / 7))
    checks.append(f1(0, 0, 0) == (0.0, 0.0, 0.0) and f1(3, 0, 0) == (1.0, 1.0, 1.0))
    gold = [_sent(encode_bio([(0, 1, "PER"), (3, 3, "LOC")], 4))]
    pred = [_sent(encode_bio([(0, 1, "PER"), (2, 2, "LOC")], 4))]
    checks.append(score_entities(gold, pred, "S") == (1, 1, 1) and f1(1, 1, 1) == (0.5, 0.5, 0.5))
    checks.append(score_entities(gold, pred, "B") == (1, 1, 1))
    checks.append(score_entities([_sent(["B-PER", "I-PER"])], [_sent(["B-PER", "B-ORG"])], "R") == (1, 0, 0))

    rng = np.random.default_rng(707)
    types = ["PER", "LOC", "ORG"]

    def random_tags(n):
        spans, pos = [], 0
        while pos < n:
            if rng.random() < 0.5:
                end = min(n - 1, pos + int(rng.integers(0, 3)))
                spans.append((pos, end, types[int(rng.integers(3))]))
                pos = end + 1
            pos += int(rng.integers(0, 2))
        return encode_bio(spans, n)

    ordering_ok = 0
    for _ in range(1000):
        lens = rng.integers(1, 9, size=int(rng.integers(1, 4)))
        g = [_sent(random_tags(int(n))) for n in lens]
        p = [_sent(random_tags(int(n))) for n in lens]
        ordering_ok += score_entities(g, p, "B")[0] >= score_entities(g, p, "S")[0]
    ok = all(checks) and ordering_ok == 1000
    record(7, "evaluation fixtures and mode ordering", ok,
           f"{sum(checks)}/{len(checks)} hand fixtures exact; tp_B >= tp_S on {ordering_ok}/1000 sets")


def test_criterion_8_determinism_and_persistence(tmp_path, corpus, vocab):
    def run(path):
        m = JointModel(small_config(dropout=0.1), vocab, np.random.default_rng(808))
        fit(m, corpus[:8], corpus[8:12], TrainConfig(lr=0.01, max_epochs=3, patience=5),
            adv=AdvConfig(enabled=True, alpha=0.01), rng=np.random.default_rng(9), metrics_path=path)
        return m

    m = run(tmp_path / "a.csv")
    run(tmp_path / "b.csv")
    same_csv = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    loaded = checkpoint_from_bytes(checkpoint_bytes(m))
    rng = np.random.default_rng(809)
    words = vocab.words[1:] + ["unseen", "Qwerty"]
    same_pred = 0
    for _ in range(100):
        toks = [words[int(rng.integers(len(words)))] for _ in range(int(rng.integers(1, 10)))]
        same_pred += m.predict(toks) == loaded.predict(toks)
    record(8, "fixed-seed runs and checkpoint round-trip", same_csv and same_pred == 100,
           f"identical CSVs {same_csv}; identical predictions {same_pred}/100")


def test_criterion_9_reduction_identities():
    rng = np.random.default_rng(909)
    worst = 0.0
    for _ in range(200):
        T = int(rng.integers(1, 8))
        em = rng.normal(size=(1, T)) * 3
        gold = [int(rng.integers(T))]
        worst = max(worst, abs(crf_nll(Tensor(em), gold, CrfParams.zeros(T)).item() - ec_softmax_loss(Tensor(em), gold).item()))
    ts = BioTagset(["PER", "LOC", "ORG"])
    allowed, start_ok = bio_allowed_bigrams(ts)
    invalid = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 10))
        p = random_crf(rng, len(ts))
        p.transitions.data *= 3
        path = viterbi_decode(rng.normal(size=(n, len(ts))) * 3, p, True, ts)
        invalid += (not start_ok[path[0]]) or any(not allowed[a, b] for a, b in zip(path[:-1], path[1:]))
    ok = worst <= 1e-9 and invalid == 0
    record(9, "zero-transition CRF equals softmax; constrained Viterbi valid", ok,
           f"max |diff| {worst:.1e}; invalid sequences {invalid}/10000")


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
