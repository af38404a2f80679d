"""Shared fixtures and hypothesis profiles."""

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))

ROOT = Path(__file__).resolve().parent.parent
PROGRAMS = ROOT / "programs"

A4_TEXT = "input A: n x n; B := A * A; C := B * B; output C;"
A8_TEXT = "input A: n x n; B := A * A; C := B * B; D := C * C; output D;"
OLS_TEXT = (PROGRAMS / "ols.ivla").read_text(encoding="utf-8")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def programs_dir() -> Path:
    return PROGRAMS


def rank_one(rng: np.random.Generator, target: str, rows: int, cols: int, scale: float = 0.1):
    from delta_engine import RankKUpdate

    return RankKUpdate(target, scale * rng.standard_normal((rows, 1)), scale * rng.standard_normal((cols, 1)))


def rel_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(actual - expected)) / max(1.0, float(np.linalg.norm(expected)))
