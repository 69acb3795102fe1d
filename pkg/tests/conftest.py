from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from orchestra.config import Config
from orchestra.pool import registry_from_dict
from orchestra.workers import scripted_backends_from_pool

FIXTURES = Path(__file__).parent / "fixtures"


def data_path(name: str) -> Path:
    return Path(str(resources.files("orchestra") / "data" / name))


@pytest.fixture(scope="session")
def sample_pool() -> dict:
    return json.loads(data_path("pool.sample.json").read_text("utf-8"))


@pytest.fixture(scope="session")
def sample_registry(sample_pool):
    return registry_from_dict(sample_pool)


@pytest.fixture()
def sample_backends(sample_pool):
    return scripted_backends_from_pool(sample_pool)


@pytest.fixture()
def config() -> Config:
    return Config()
