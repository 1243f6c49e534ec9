from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from memorymamba.config import RunConfig
from memorymamba.data import SynthSpec, synth_generate

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def tiny_config(**sections) -> RunConfig:
    """A model small enough to train for a few steps in well under a second."""
    base = RunConfig().replace(
        model={
            "image_size": 16,
            "stage_depths": [1, 1],
            "stage_dims": [6, 8],
            "state_dim": 2,
            "mem_coarse_size": 3,
            "mem_fine_size": 4,
            "head_hidden": 8,
            "num_classes": 4,
        },
        block={"dt_min": 0.01, "dt_max": 0.1},
        optim={"base_lr": 1e-2, "epochs": 2, "batch_size": 8},
    )
    return base.replace(**sections) if sections else base


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 classes x 5 images of 16 px: 16 train / 4 test."""
    root = tmp_path_factory.mktemp("tiny") / "synth"
    return synth_generate(SynthSpec(num_classes=4, images_per_class=5, image_size=16, seed=3), root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """The acceptance dataset: 4 classes x 32 images of 64 px, seed 1."""
    root = tmp_path_factory.mktemp("accept") / "synth"
    return synth_generate(SynthSpec(num_classes=4, images_per_class=32, image_size=64, seed=1), root)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} ({detail})"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
