"""Neural causal-LM backend for the lattice generation protocol.

Hosts a small transformer behind an HTTP next-token-distribution endpoint
and ships the linearized-lattice finetuning that teaches a base model to
predict through a noised lattice.
"""

from .finetune import build_examples, llg_finetune, loss_decreased
from .model import ModelBundle, init_model
from .schema import load_schema, validate_response
from .service import BackendServer, serve_backend

# The protocol adapter lives in lgbackend.client; importing it pulls in the
# primary package, so it is not re-exported here.

__version__ = "0.1.0"

__all__ = [
    "BackendServer",
    "ModelBundle",
    "build_examples",
    "init_model",
    "llg_finetune",
    "load_schema",
    "loss_decreased",
    "serve_backend",
    "validate_response",
]
