from pathlib import Path

import pytest

from expbase.canonicalize import load_dataset
from expbase.pipeline import build_base

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def diversification():
    return load_dataset(FIXTURES / "diversification.jsonl")


@pytest.fixture(scope="session")
def ten_topics():
    return load_dataset(FIXTURES / "ten_topics.jsonl")


@pytest.fixture(scope="session")
def stream_new():
    return load_dataset(FIXTURES / "stream_new.jsonl")


@pytest.fixture(scope="session")
def ten_base(ten_topics):
    return build_base(ten_topics, created_at="")
