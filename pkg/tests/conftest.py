import time
from dataclasses import dataclass

import pytest

from spokenvqa.data import generate_dataset
from spokenvqa.model import ModelBundle, profile
from spokenvqa.training import TrainConfig, train_stage1, train_stage2

# Overfit recipe: 16 samples, tiny profile, 300 epochs per stage at peak lr 3e-3.
OVERFIT_CFG = TrainConfig(init_lr=3e-3, min_lr=3e-5, warmup_lr=1e-5, warmup_steps=50, epochs=300, batch_size=4,
                          seed=0)

# one line per acceptance criterion, printed at the end of the run
CRITERIA: dict[int, str] = {}


@dataclass
class OverfitRun:
    samples: list
    bundle: ModelBundle
    stage1_seconds: float
    stage2_seconds: float
    transcripts: list


@pytest.fixture(scope="session")
def overfit_samples():
    return generate_dataset(16, 123, d_audio=profile("tiny").d_audio)


@pytest.fixture(scope="session")
def overfit_run(overfit_samples):
    bundle = ModelBundle(profile("tiny"), seed=0)
    t0 = time.perf_counter()
    train_stage1(overfit_samples, bundle, OVERFIT_CFG)
    t1 = time.perf_counter()
    transcripts = bundle.transcribe(overfit_samples)
    t2 = time.perf_counter()
    train_stage2(overfit_samples, bundle, OVERFIT_CFG)
    t3 = time.perf_counter()
    return OverfitRun(overfit_samples, bundle, t2 - t0, t3 - t2, transcripts)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
