"""Shared fixtures: the committed corpus, trained models, embeddings.

Everything heavy is session-scoped and built once from fixtures/; tests
that need bespoke corpora or models build their own tiny ones inline.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from latticegen.corpus import bodies, ingest
from latticegen.embeddings import PpmiEmbeddings
from latticegen.lm import train
from latticegen.protocol import VocabInfo

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def corpus_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("ingested")
    return ingest(FIXTURE_DIR, out_dir=out), out


@pytest.fixture(scope="session")
def vocab(corpus_data):
    return corpus_data[0].vocab


@pytest.fixture(scope="session")
def vocab_info(vocab):
    return VocabInfo.of(vocab)


@pytest.fixture(scope="session")
def train_bodies(corpus_data):
    return bodies(corpus_data[0].splits["train"])


@pytest.fixture(scope="session")
def heldout_bodies(corpus_data):
    return bodies(corpus_data[0].splits["heldout"])


@pytest.fixture(scope="session")
def test_rows(corpus_data):
    return corpus_data[0].splits["test"]


@pytest.fixture(scope="session")
def bigram_model(train_bodies, vocab):
    return train(train_bodies, order=2, vocab_size=len(vocab), bos_id=vocab.bos_id)


@pytest.fixture(scope="session")
def trigram_model(train_bodies, vocab):
    return train(train_bodies, order=3, vocab_size=len(vocab), bos_id=vocab.bos_id)


@pytest.fixture(scope="session")
def evaluator_model(heldout_bodies, vocab):
    return train(heldout_bodies, order=3, vocab_size=len(vocab), bos_id=vocab.bos_id)


@pytest.fixture(scope="session")
def embeddings(train_bodies, vocab):
    return PpmiEmbeddings.build(train_bodies, len(vocab))
