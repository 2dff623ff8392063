import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from catclust.dataset import load_csv, load_schema, preprocess

ROOT = Path(__file__).resolve().parent.parent
TOY = ROOT / "data" / "toy"
CONFIGS = ROOT / "configs"

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def toy(name, **pre):
    ds = load_csv(TOY / f"{name}.csv", load_schema(TOY / f"{name}.schema.json"))
    return preprocess(ds, **pre) if pre else ds


@pytest.fixture(scope="session")
def iris_raw():
    return toy("iris")


@pytest.fixture(scope="session")
def iris():
    return preprocess(toy("iris"), impute_zero=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
