"""Vocabulary file handling.

The on-disk format is one token string per line; the line number (0-based)
is the token id.  By convention ids 0 and 1 are the ``<bos>`` and ``<unk>``
specials; an optional ``<eot>`` end-of-text marker may follow.  The hash of
the canonical byte serialization identifies a vocabulary across the wire.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

BOS = "<bos>"
UNK = "<unk>"
EOT = "<eot>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate token strings")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return self._lookup()[BOS]

    @property
    def unk_id(self) -> int:
        return self._lookup()[UNK]

    @property
    def eot_id(self) -> int | None:
        return self._lookup().get(EOT)

    def id_of(self, token: str) -> int:
        return self._lookup().get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, text: str) -> list[int]:
        """Whitespace tokenization; unknown words map to <unk>."""
        lookup = self._lookup()
        return [lookup.get(tok, lookup[UNK]) for tok in text.split()]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def _lookup(self) -> dict[str, int]:
        # Cached on the instance; frozen dataclass, so stash via object.__setattr__.
        cache = getattr(self, "_lookup_cache", None)
        if cache is None:
            cache = {tok: i for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache

    def to_bytes(self) -> bytes:
        return ("\n".join(self.tokens) + "\n").encode("utf-8")

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))

    @classmethod
    def from_words(cls, words: list[str], *, include_eot: bool = False) -> "Vocabulary":
        specials = [BOS, UNK] + ([EOT] if include_eot else [])
        seen = set(specials)
        ordered = specials + [w for w in words if not (w in seen or seen.add(w))]
        return cls(tuple(ordered))
