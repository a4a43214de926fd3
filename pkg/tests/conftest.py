from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cvlearn.domain.requirements import FLAT, AtomicPredicate, Requirement, Rule

ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = ROOT / "configs"

# 数値計算が重いテストがあるので deadline は切る
settings.register_profile(
    "cvlearn",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("cvlearn")


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def forbid_rule(feature: int, op: str, value: float, labels) -> Rule:
    return Rule(conditions=(AtomicPredicate(feature, op, value),), forbid=frozenset(labels))


def flat_requirement(K: int, *rules: Rule) -> Requirement:
    return Requirement(FLAT, K, tuple(rules))
