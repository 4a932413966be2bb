import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jointex.autodiff import Tensor
from jointex.model import JointModel, ParameterStore
from jointex.trainer import (
    ALPHA_GRID,
    AdamState,
    AdvConfig,
    EarlyStopState,
    TrainConfig,
    adam_update,
    adversarial_perturbation,
    epsilon_for,
    fit,
    input_gradient,
    train_step,
)

from conftest import tiny_config
from oracles import NaiveAdam


def store_of(*arrays_):
    s = ParameterStore()
    for i, a in enumerate(arrays_):
        s.add(f"p{i}", Tensor(np.array(a, dtype=np.float64), requires_grad=True))
    return s


class TestPerturbation:
    def test_epsilon(self):
        assert epsilon_for(0.01, 400) == pytest.approx(0.2)
        adv = AdvConfig(enabled=True, alpha=0.01, dim=400)
        assert adv.epsilon == pytest.approx(0.2)

    def test_unit_direction(self):
        np.testing.assert_allclose(adversarial_perturbation(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)), st.floats(1e-4, 10.0))
    def test_norm_equals_epsilon(self, g, eps):
        if np.linalg.norm(g) < 1e-6:
            return
        assert abs(np.linalg.norm(adversarial_perturbation(g, eps)) - eps) <= 1e-12 * max(1.0, eps)

    def test_zero_gradient_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            eta = adversarial_perturbation(np.zeros((2, 3)), 0.5)
        np.testing.assert_array_equal(eta, 0.0)
        assert "zero input gradient" in caplog.text

    def test_token_scope(self):
        g = np.array([[3.0, 4.0], [0.0, 2.0], [0.0, 0.0]])
        eta = adversarial_perturbation(g, 0.5, "token")
        np.testing.assert_allclose(np.linalg.norm(eta, axis=1), [0.5, 0.5, 0.0])

    def test_alpha_validation(self):
        for bad in (0.0, -1e-3, 1.5):
            with pytest.raises(ValueError):
                AdvConfig(alpha=bad)
        assert all(0 < a <= 1 for a in ALPHA_GRID)

    def test_unbound_epsilon(self):
        with pytest.raises(ValueError, match="bind"):
            AdvConfig(enabled=True).epsilon


class TestAdam:
    def test_first_step_is_lr(self):
        s = store_of([1.0, -2.0, 3.0])
        s["p0"].grad = np.array([0.5, -7.0, 1e-3])
        adam_update(AdamState(lr=0.01), s)
        np.testing.assert_allclose(s["p0"].data, [0.99, -1.99, 2.99], atol=1e-7)
        assert s["p0"].grad is None

    def test_zero_gradient_zero_update(self):
        s = store_of([1.0, 2.0])
        s["p0"].grad = np.zeros(2)
        adam_update(AdamState(), s)
        np.testing.assert_array_equal(s["p0"].data, [1.0, 2.0])

    def test_moments_decay(self):
        s = store_of([0.0])
        st_ = AdamState()
        s["p0"].grad = np.array([1.0])
        adam_update(st_, s)
        m1 = st_.m["p0"].copy()
        s["p0"].grad = np.array([0.0])
        adam_update(st_, s)
        np.testing.assert_allclose(st_.m["p0"], 0.9 * m1)

    def test_matches_naive_over_100_steps(self):
        rng = np.random.default_rng(0)
        init = rng.normal(size=(3, 2))
        s = store_of(init)
        ref, ref_params = NaiveAdam(lr=0.01), {"p0": init.copy()}
        st_ = AdamState(lr=0.01)
        for _ in range(100):
            g = rng.normal(size=(3, 2))
            s["p0"].grad = g.copy()
            adam_update(st_, s)
            ref.step(ref_params, {"p0": g})
            np.testing.assert_allclose(s["p0"].data, ref_params["p0"], rtol=0, atol=1e-12)

    def test_missing_gradient_raises(self):
        s = store_of([1.0], [2.0])
        s["p0"].grad = np.array([1.0])
        with pytest.raises(ValueError, match="p1"):
            adam_update(AdamState(), s)

    def test_frozen_parameters_skipped(self):
        s = store_of([1.0])
        s.add("frozen", Tensor(np.array([5.0])))
        s["p0"].grad = np.array([1.0])
        adam_update(AdamState(), s)
        assert s["frozen"].data[0] == 5.0


class TestEarlyStop:
    def test_plateau(self):
        es = EarlyStopState(patience=3)
        stops = [es.update(e, m) for e, m in enumerate([1, 2, 3, 3, 3, 3], start=1)]
        assert stops == [False] * 5 + [True]
        assert es.best_epoch == 3

    def test_improvement_resets(self):
        es = EarlyStopState(patience=2)
        assert not any(es.update(e, m) for e, m in enumerate([1, 1, 2, 2, 3], start=1))
        assert es.best_epoch == 5


def _snapshot(model, adam):
    return model.store.snapshot(), {k: (t.grad if t.grad is None else t.grad.copy()) for k, t in model.store.items()}, adam.snapshot()


class TestSteps:
    def test_disabled_adversary_matches_clean_step(self, fixture_vocab, fixture_corpus):
        s = fixture_corpus[2]
        a = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(4))
        b = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(4))
        ad_a, ad_b = AdamState(), AdamState()
        for _ in range(3):
            train_step(a, s, None, ad_a, np.random.default_rng(0))
            train_step(b, s, AdvConfig(enabled=False, alpha=0.05), ad_b, np.random.default_rng(0))
        for (_, x), (_, y) in zip(a.store.items(), b.store.items()):
            assert x.data.tobytes() == y.data.tobytes()

    def test_gradient_pass_freezes_parameters(self, fixture_vocab, fixture_corpus):
        m = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(5))
        adam = AdamState()
        train_step(m, fixture_corpus[0], AdvConfig(enabled=True, alpha=0.01), adam, np.random.default_rng(0))
        before = _snapshot(m, adam)
        input_gradient(m, fixture_corpus[1], training=False)
        after = _snapshot(m, adam)
        assert all(before[0][k].tobytes() == after[0][k].tobytes() for k in before[0])
        assert before[1] == after[1] == {k: None for k in before[1]}
        assert before[2][0] == after[2][0]
        for k in before[2][1]:
            assert before[2][1][k].tobytes() == after[2][1][k].tobytes()
            assert before[2][2][k].tobytes() == after[2][2][k].tobytes()

    def test_adversarial_step_reports_both_losses(self, fixture_vocab, fixture_corpus):
        m = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(6))
        before = m.store.snapshot()
        out = train_step(m, fixture_corpus[0], AdvConfig(enabled=True, alpha=0.05), AdamState(), np.random.default_rng(0))
        assert math.isfinite(out["loss_clean"]) and math.isfinite(out["loss_adv"])
        assert out["loss_adv"] != out["loss_clean"]
        assert any(before[k].tobytes() != t.data.tobytes() for k, t in m.store.items())


def _loss_at(model, sentence, eta):
    return model.forward_joint(sentence, training=False, perturbation=eta).loss_joint.item()


class TestAdversaryProperties:
    def test_first_order_ascent(self, fixture_vocab, fixture_corpus):
        rng = np.random.default_rng(7)
        m = JointModel(tiny_config(label_source="gold"), fixture_vocab, rng)
        ok = 0
        for k in range(40):
            s = fixture_corpus[k % len(fixture_corpus)]
            losses, g = input_gradient(m, s, training=False)
            eps = 1e-4 * np.linalg.norm(losses.embedded_input.data)
            eta = adversarial_perturbation(g, eps)
            ok += _loss_at(m, s, eta) >= losses.loss_joint.item() - 1e-9
        assert ok == 40

    def test_beats_random_direction(self, fixture_vocab, fixture_corpus):
        rng = np.random.default_rng(8)
        m = JointModel(tiny_config(label_source="gold"), fixture_vocab, rng)
        wins = 0
        for k in range(40):
            s = fixture_corpus[k % len(fixture_corpus)]
            _, g = input_gradient(m, s, training=False)
            eps = 0.01
            r = rng.normal(size=g.shape)
            wins += _loss_at(m, s, adversarial_perturbation(g, eps)) >= _loss_at(m, s, eps * r / np.linalg.norm(r))
        assert wins >= 36


class TestFit:
    def _run(self, vocab, corpus, path, adv):
        m = JointModel(tiny_config(), vocab, np.random.default_rng(1))
        cfg = TrainConfig(lr=0.01, max_epochs=2, patience=5)
        return m, fit(m, corpus[:6], corpus[6:9], cfg, adv, np.random.default_rng(2), metrics_path=path)

    def test_deterministic_csv(self, fixture_vocab, fixture_corpus, tmp_path):
        for adv in (None, AdvConfig(enabled=True, alpha=0.01)):
            _, r1 = self._run(fixture_vocab, fixture_corpus, tmp_path / "a.csv", adv)
            _, r2 = self._run(fixture_vocab, fixture_corpus, tmp_path / "b.csv", adv)
            assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
            assert r1.epochs_run == 2

    def test_csv_layout(self, fixture_vocab, fixture_corpus, tmp_path):
        self._run(fixture_vocab, fixture_corpus, tmp_path / "m.csv", AdvConfig(enabled=True, alpha=0.01))
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "epoch,split,ent_p,ent_r,ent_f1,rel_p,rel_r,rel_f1,overall_f1,loss_clean,loss_adv"
        assert len(lines) == 1 + 2 * 2
        train_row = lines[1].split(",")
        assert train_row[:2] == ["1", "train"] and math.isfinite(float(train_row[-1]))

    def test_loss_decreases(self, fixture_vocab, fixture_corpus):
        m = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(1))
        rep = fit(m, fixture_corpus, fixture_corpus[:3], TrainConfig(lr=0.02, max_epochs=5, patience=10),
                  rng=np.random.default_rng(0))
        losses = [float(r["loss_clean"]) for r in rep.rows if r["split"] == "train"]
        assert losses[-1] < losses[0]

    def test_best_parameters_restored(self, fixture_vocab, fixture_corpus):
        m = JointModel(tiny_config(), fixture_vocab, np.random.default_rng(1))
        rep = fit(m, fixture_corpus[:4], fixture_corpus[:4], TrainConfig(lr=0.02, max_epochs=4, patience=10),
                  rng=np.random.default_rng(0))
        from jointex.evaluation import evaluate
        from jointex.trainer import predict_corpus
        now = evaluate(fixture_corpus[:4], predict_corpus(m, fixture_corpus[:4]), "S").overall_f1
        assert now == rep.best_metric or rep.best_report is None

    def test_empty_corpus(self, tiny_model):
        with pytest.raises(ValueError):
            fit(tiny_model, [], [], TrainConfig())
