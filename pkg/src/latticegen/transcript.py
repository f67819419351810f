"""The server-observable record of a finished session.

A transcript holds exactly what a curious server legitimately accumulates:
the shared lattice and every next-token distribution it computed, step by
step.  It carries no client secret, and the attack algorithms accept nothing
else.  ``full_vector`` marks transcripts whose distributions were stored
untruncated (server-side analysis mode); wire payloads are always top-K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .lattice import Lattice, lattice_from_columns
from .lm import Tail, TailDistribution, dists_by_tail, quantize_logprob

_LGT_VERSION = 1


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class TranscriptConfig:
    n: int
    g: int
    k: int
    bos_id: int
    vocab_hash: str = ""
    full_vector: bool = False


@dataclass(frozen=True)
class TranscriptRecord:
    config: TranscriptConfig
    lattice: Lattice
    saved_dists: tuple[tuple[TailDistribution, ...], ...]

    def __post_init__(self):
        if len(self.saved_dists) != len(self.lattice):
            raise TranscriptError("one distribution batch required per lattice column")
        expected = self.config.n ** self.config.g
        for t, batch in enumerate(self.saved_dists, start=1):
            if len(batch) != expected:
                raise TranscriptError(
                    f"step {t} has {len(batch)} distributions, expected {expected}"
                )

    def __len__(self) -> int:
        return len(self.lattice)

    def dists_at(self, t: int) -> Mapping[Tail, TailDistribution]:
        """Distributions computed for sampling step t (1-based), by tail."""
        if not 1 <= t <= len(self.saved_dists):
            raise TranscriptError(f"no distributions for step {t}")
        return dists_by_tail(self.saved_dists[t - 1])

    def to_json(self) -> dict:
        return {
            "format": "lgt",
            "version": _LGT_VERSION,
            "config": {
                "n": self.config.n,
                "g": self.config.g,
                "k": self.config.k,
                "bos_id": self.config.bos_id,
                "vocab_hash": self.config.vocab_hash,
                "full_vector": self.config.full_vector,
            },
            "lattice": [list(col) for col in self.lattice.columns],
            "dists": [
                [
                    {
                        "tail": list(d.tail),
                        "entries": [[tok, f"{lp:.9g}"] for tok, lp in d.entries],
                    }
                    for d in batch
                ]
                for batch in self.saved_dists
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json(cls, obj: dict) -> "TranscriptRecord":
        if obj.get("format") != "lgt":
            raise TranscriptError("not a transcript document")
        if obj.get("version") != _LGT_VERSION:
            raise TranscriptError(f"unsupported transcript version {obj.get('version')}")
        cfg = obj["config"]
        config = TranscriptConfig(
            n=int(cfg["n"]),
            g=int(cfg["g"]),
            k=int(cfg["k"]),
            bos_id=int(cfg["bos_id"]),
            vocab_hash=str(cfg.get("vocab_hash", "")),
            full_vector=bool(cfg.get("full_vector", False)),
        )
        lattice = lattice_from_columns(config.n, obj["lattice"])
        dists = tuple(
            tuple(
                TailDistribution(
                    tail=tuple(int(i) for i in item["tail"]),
                    entries=tuple(
                        (int(tok), quantize_logprob(float(lp)))
                        for tok, lp in item["entries"]
                    ),
                )
                for item in batch
            )
            for batch in obj["dists"]
        )
        return cls(config, lattice, dists)

    @classmethod
    def load(cls, path: str | Path) -> "TranscriptRecord":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
