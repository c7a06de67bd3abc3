import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mintad.config import DataConfig, LossConfig, ModelConfig, OptimConfig, RunConfig, ScheduleConfig

# (criterion, passed, detail) rows filled in by test_acceptance
ACCEPTANCE_LINES = []


def tiny_config(**overrides) -> RunConfig:
    """A model small enough to train for a few epochs in well under a second."""
    cfg = RunConfig(
        seed=0,
        precision="float64",
        batch_size=4,
        run_id="tiny",
        data=DataConfig(num_classes=2, channels=3, height=4, width=4, n_train=4,
                        n_test_normal=2, n_test_anomalous=2, image_size=12),
        model=ModelConfig(width=8, heads=2, enc_depth=1, dec_depth=1, ff_mult=2, dropout=0.1,
                          token_dim=4, classifier_hidden=8, inr_depth=2),
        loss=LossConfig(prior_reduction="mean"),
        optim=OptimConfig(lr=1e-2),
        schedule=ScheduleConfig(total_epochs=4, decay_epoch=3),
    )
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture(scope="session")
def toy_five_seeds():
    """Default toy boundary experiment over seeds 0..4 and its wall time."""
    from mintad.experiments import toy_experiment
    from mintad.toy import ToyConfig

    start = time.perf_counter()
    results = toy_experiment(ToyConfig(), range(5))
    return results, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
