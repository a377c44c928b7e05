from __future__ import annotations

import numpy as np
import pytest

from fractalgen.arch import ConvUnitSpec, ModelSpec
from fractalgen.data import synthetic_dataset

import helpers


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec() -> ModelSpec:
    unit = ConvUnitSpec(3, "batch_norm", "relu", 0.2, ("norm", "activation", "dropout"))
    return ModelSpec(2, 2, unit, base_channels=4, num_classes=3, input_shape=(3, 8, 8))


@pytest.fixture
def tiny_data():
    train = synthetic_dataset("separable_blobs", 48, 3, 1, (3, 8, 8), 0.05, "train")
    val = synthetic_dataset("separable_blobs", 24, 3, 2, (3, 8, 8), 0.05, "val")
    return train, val
