from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpora import build_fig_corpus, build_reduction_corpus  # noqa: E402

from viewfinder.index import IndexConfig, build_index  # noqa: E402


@pytest.fixture(scope="session")
def fig_corpus(tmp_path_factory) -> Path:
    return build_fig_corpus(tmp_path_factory.mktemp("fig-corpus"))


@pytest.fixture(scope="session")
def fig_index(fig_corpus):
    return build_index(fig_corpus, IndexConfig())


@pytest.fixture(scope="session")
def reduction_corpus(tmp_path_factory) -> Path:
    return build_reduction_corpus(tmp_path_factory.mktemp("reduction-corpus"))


@pytest.fixture(scope="session")
def reduction_index(reduction_corpus):
    return build_index(reduction_corpus, IndexConfig())
