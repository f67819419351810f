"""Backend test fixtures: the primary's fixture corpus, a base model, a server.

The corpus and vocabulary come from the primary package's committed fixture
directory; everything the backend consumes goes through the documented file
formats (vocab.txt, *.ids).
"""

from __future__ import annotations

from pathlib import Path

import pytest

from latticegen.corpus import ingest
from latticegen.protocol import VocabInfo

from lgbackend.model import init_model
from lgbackend.service import serve_backend

FIXTURE_DIR = Path(__file__).resolve().parent.parent.parent / "fixtures"


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ingested")
    ingest(FIXTURE_DIR, out_dir=out)
    return out


@pytest.fixture(scope="session")
def vocab_info(data_dir):
    from latticegen.vocab import Vocabulary

    return VocabInfo.of(Vocabulary.load(data_dir / "vocab.txt"))


@pytest.fixture(scope="session")
def base_model_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "base"
    init_model(data_dir / "vocab.txt", out, seed=1)
    return out


@pytest.fixture(scope="session")
def server(base_model_dir):
    srv = serve_backend(base_model_dir, port=0)
    srv.serve_in_background()
    yield srv
    srv.shutdown()
