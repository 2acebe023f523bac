from pathlib import Path

import pytest

from radreason.core import load_corpus
from radreason.llm import CompletionClient, MockBackend
from radreason.observations import LexicalMatcher, SynonymTable

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(DATA_DIR / "fixture_corpus.jsonl")


@pytest.fixture(scope="session")
def matcher():
    return LexicalMatcher()


@pytest.fixture(scope="session")
def plain_matcher():
    """Lexical matcher with the synonym table disabled."""
    return LexicalMatcher(SynonymTable.empty())


@pytest.fixture()
def mock_client():
    return CompletionClient(MockBackend.from_file(DATA_DIR / "mining_fixture.jsonl"))
