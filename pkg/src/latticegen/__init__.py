"""Privacy-aware text generation over a noised token lattice.

The client hides its true token sequence inside a width-N lattice of decoys;
the server runs language-model inference over every G-gram tail of the
lattice without learning which path is real.  This package ships the
client/server protocol, the built-in n-gram backend, the noise schemes, the
beam-search attack family used to audit them, and an experiment harness.
"""

from .attacks import AttackHypothesis, beam_search_attack, exact_attack, rbs_attack
from .embeddings import PpmiEmbeddings
from .lattice import ClientSecret, Lattice, enumerate_tails, linearize, permute_column
from .lm import (
    LmBackend,
    NGramModel,
    SamplerConfig,
    TailDistribution,
    perplexity,
    plain_generate,
    sample,
    train,
)
from .metrics import max_true_ratio, pmi, semantic_overlap_proxy, true_ratio
from .noise import MixingConfig, MixingNoise, ParallelNoise, SynonymNoise, make_scheme
from .protocol import (
    ClientSession,
    LatticeServer,
    ProtocolError,
    SchemeSpec,
    ServerSession,
    SessionConfig,
    VocabInfo,
    run_in_process,
    run_session,
)
from .rng import Rng, derive_seed
from .transcript import TranscriptConfig, TranscriptRecord
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "AttackHypothesis",
    "ClientSecret",
    "ClientSession",
    "Lattice",
    "LatticeServer",
    "LmBackend",
    "MixingConfig",
    "MixingNoise",
    "NGramModel",
    "ParallelNoise",
    "PpmiEmbeddings",
    "ProtocolError",
    "Rng",
    "SamplerConfig",
    "SchemeSpec",
    "ServerSession",
    "SessionConfig",
    "SynonymNoise",
    "TailDistribution",
    "TranscriptConfig",
    "TranscriptRecord",
    "VocabInfo",
    "Vocabulary",
    "beam_search_attack",
    "derive_seed",
    "enumerate_tails",
    "exact_attack",
    "linearize",
    "make_scheme",
    "max_true_ratio",
    "perplexity",
    "permute_column",
    "plain_generate",
    "pmi",
    "rbs_attack",
    "run_in_process",
    "run_session",
    "sample",
    "semantic_overlap_proxy",
    "train",
    "true_ratio",
]
