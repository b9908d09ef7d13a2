import numpy as np
import pytest

from ttmkit.model import Batch, ModelConfig, TTMModel
from ttmkit.scenario import ScenarioConfig


def tiny_batch(seed=1, T=4, n_mel_frames=12, clean=True):
    rng = np.random.default_rng(seed)
    present = np.array([[True, False, True, True], [True, True, False, False]])[:, :T]
    return Batch(
        head=rng.normal(size=(2, T, 4)),
        lip=rng.random((2, T, 8, 8, 1)),
        mel=rng.normal(size=(2, n_mel_frames, 80)),
        present=present,
        labels=np.array([[1, 0, 0, 1], [0, 1, 1, 0]], float)[:, :T],
        mel_clean=rng.normal(size=(2, n_mel_frames, 80)) if clean else None,
    )


def tiny_model(seed=0, beta=0.3, **overrides):
    m = TTMModel(ModelConfig.tiny(**overrides), seed=seed)
    m.set_threshold(beta)
    return m


def tiny_scenario(**overrides):
    base = dict(frames=30, n_feat=4, image_size=8, n_train=6, n_val=3, n_test=3)
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture
def batch():
    return tiny_batch()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
