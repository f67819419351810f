"""Tiny causal LM artifacts: init, load, and next-token scoring.

A model directory holds ``config.json``, ``weights.pt``, and a copy of the
vocabulary file (one token per line, line number = id).  The transformer's
embedding table has one extra row beyond the vocabulary: the ``<predict>``
marker used by the linearized-lattice input format.  That id never appears
in scores or on any wire.

Two scoring modes share one endpoint.  A base model conditions on the tail
alone ([bos] + tail).  A lattice-finetuned model consumes the full
linearized lattice, the marker, and the tail, so earlier columns can
influence the distribution.
"""

from __future__ import annotations

import hashlib
import json
import math
import shutil
from pathlib import Path

import torch
from transformers import GPT2Config, GPT2LMHeadModel

CONFIG_NAME = "config.json"
WEIGHTS_NAME = "weights.pt"
VOCAB_NAME = "vocab.txt"

MODEL_FORMAT = "lgbackend-model"
MODEL_VERSION = 1


class ModelError(RuntimeError):
    pass


class RequestError(ValueError):
    """Client-side fault: reported as HTTP 400, never a crash."""


def read_vocab(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def vocab_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def init_model(
    vocab_path: str | Path,
    out_dir: str | Path,
    n_embd: int = 64,
    n_layer: int = 2,
    n_head: int = 2,
    n_positions: int = 512,
    seed: int = 0,
) -> Path:
    """Create a randomly initialized base model over a vocabulary file."""
    vocab = read_vocab(vocab_path)
    if len(vocab) < 4:
        raise ModelError("vocabulary too small for a usable model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "vocab_size": len(vocab),
        "predict_token_id": len(vocab),
        "bos_id": 0,
        "n_embd": n_embd,
        "n_layer": n_layer,
        "n_head": n_head,
        "n_positions": n_positions,
        "vocab_hash": vocab_hash(vocab_path),
        "llg": False,
        "n": None,
        "g": None,
        "seed": seed,
    }
    torch.manual_seed(seed)
    net = GPT2LMHeadModel(_gpt2_config(config))
    torch.save(net.state_dict(), out / WEIGHTS_NAME)
    (out / CONFIG_NAME).write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    shutil.copyfile(vocab_path, out / VOCAB_NAME)
    return out


def _gpt2_config(config: dict) -> GPT2Config:
    return GPT2Config(
        vocab_size=config["vocab_size"] + 1,  # one extra row for <predict>
        n_positions=config["n_positions"],
        n_embd=config["n_embd"],
        n_layer=config["n_layer"],
        n_head=config["n_head"],
        bos_token_id=config["bos_id"],
        eos_token_id=config["bos_id"],
    )


class ModelBundle:
    """A loaded model plus its scoring configuration."""

    def __init__(self, config: dict, net: GPT2LMHeadModel, device: str = "cpu"):
        self.config = config
        self.device = device
        self.net = net.to(device)
        self.net.eval()

    @property
    def vocab_size(self) -> int:
        return self.config["vocab_size"]

    @property
    def is_llg(self) -> bool:
        return bool(self.config["llg"])

    @classmethod
    def load(cls, model_dir: str | Path, device: str = "cpu") -> "ModelBundle":
        model_dir = Path(model_dir)
        try:
            config = json.loads((model_dir / CONFIG_NAME).read_text())
        except OSError as exc:
            raise ModelError(f"cannot read model config: {exc}") from None
        if config.get("format") != MODEL_FORMAT:
            raise ModelError(f"{model_dir} is not a backend model directory")
        if config.get("version") != MODEL_VERSION:
            raise ModelError(f"unsupported model version {config.get('version')}")
        net = GPT2LMHeadModel(_gpt2_config(config))
        try:
            state = torch.load(model_dir / WEIGHTS_NAME, map_location=device)
        except OSError as exc:
            raise ModelError(f"cannot read model weights: {exc}") from None
        net.load_state_dict(state)
        return cls(config, net, device)

    def validate_request(self, context: list[int], tail: list[int], k: int) -> None:
        v = self.vocab_size
        if k < 1:
            raise RequestError("k must be >= 1")
        if not tail:
            raise RequestError("tail must be non-empty")
        for t in tail:
            if not 0 <= t < v:
                raise RequestError(f"tail token {t} outside vocabulary")
        for c in context:
            if not 0 <= c < v:
                raise RequestError(f"context token {c} outside vocabulary")
        if self.is_llg:
            g = self.config["g"]
            n = self.config["n"]
            if len(tail) != g:
                raise RequestError(f"model expects a {g}-token tail, got {len(tail)}")
            if not context or (len(context) - 1) % n != 0:
                raise RequestError("context is not a linearized width-%d lattice" % n)
            bos = self.config["bos_id"]
            t_len = (len(context) - 1) // n
            for i, tok in enumerate(tail):
                col_idx = t_len - g + i  # 0-based column position
                if col_idx < 0:
                    if tok != bos:
                        raise RequestError("padded tail slots must hold bos")
                    continue
                column = context[1 + col_idx * n : 1 + (col_idx + 1) * n]
                if tok not in column:
                    raise RequestError(
                        f"tail token {tok} not among the options of column {col_idx + 1}"
                    )
        else:
            if len(tail) >= self.config["n_positions"] - 1:
                raise RequestError("tail longer than the model's context window")

    @torch.no_grad()
    def next_entries(
        self, context: list[int], tail: list[int], k: int
    ) -> tuple[list[tuple[int, str]], float]:
        """Top-k (token, logprob-string) pairs plus the normalization check.

        The returned log-probabilities are decimal strings with 9
        significant digits; ``log_norm`` is logsumexp over the full
        untruncated distribution and should sit at 0 up to float error.
        """
        self.validate_request(context, tail, k)
        if self.is_llg:
            ids = list(context) + [self.config["predict_token_id"]] + list(tail)
        else:
            ids = [self.config["bos_id"]] + list(tail)
        if len(ids) > self.config["n_positions"]:
            raise RequestError("request exceeds the model's context window")
        x = torch.tensor([ids], dtype=torch.long, device=self.device)
        logits = self.net(x).logits[0, -1, : self.vocab_size].double()
        logprobs = torch.log_softmax(logits, dim=-1)
        log_norm = float(torch.logsumexp(logprobs, dim=-1))
        lp = logprobs.cpu().numpy()
        # deterministic order: descending logprob, ties by ascending id
        import numpy as np

        order = np.lexsort((np.arange(len(lp)), -lp))[:k]
        entries = []
        for idx in order:
            val = min(float(lp[idx]), 0.0)
            if not math.isfinite(val):
                continue
            entries.append((int(idx), f"{val:.9g}"))
        return entries, log_norm

    def save(self, out_dir: str | Path, vocab_src: str | Path | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), out / WEIGHTS_NAME)
        (out / CONFIG_NAME).write_text(
            json.dumps(self.config, sort_keys=True, indent=2) + "\n"
        )
        if vocab_src is not None:
            shutil.copyfile(vocab_src, out / VOCAB_NAME)
        return out
