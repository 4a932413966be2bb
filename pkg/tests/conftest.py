import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jointex.data import Vocab
from jointex.model import JointModel, ModelConfig
from jointex.synthetic import bundled_fixture

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixture_corpus():
    return bundled_fixture()


@pytest.fixture(scope="session")
def fixture_vocab(fixture_corpus):
    return Vocab.build(fixture_corpus)


def tiny_config(**kw) -> ModelConfig:
    base = dict(word_dim=6, char_dim=4, char_hidden=3, hidden=5, label_dim=3, rel_hidden=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model(fixture_vocab):
    return JointModel(tiny_config(), fixture_vocab, np.random.default_rng(1))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
