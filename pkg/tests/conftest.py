"""Shared pytest fixtures."""

import pytest

from src.core import rope_sim
from src.models.enums import LogLevel
from src.utils.logging import set_log_level
from tests.fixtures import RecordingScorer, synthetic_models, tiny_config


@pytest.fixture(autouse=True)
def quiet_logging():
    set_log_level(LogLevel.WARNING)
    yield


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def models():
    return synthetic_models()


@pytest.fixture
def scorer():
    return RecordingScorer()


@pytest.fixture
def world(cfg):
    return rope_sim.initial_world(cfg, "H1", "M1", 0.0)
