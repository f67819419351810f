"""The width-N token lattice and its core operations.

A lattice is a sequence of columns, each holding exactly N distinct token
ids; column 0 is an implicit row of begin-of-sequence tokens and is never
stored.  Tokens within a column must be pairwise distinct: hypothesis removal
in the repeated beam-search attack is only well defined without duplicates.

The column permutation is driven by the portable generator in
:mod:`latticegen.rng`, seeded with ``prime * t`` (masked to 64 bits), so a
client and any re-implementation agree on the exact shuffle.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Iterator, Sequence

from .rng import Rng, _MASK64

TokenId = int

_LAT_MAGIC = b"LATC"
_LAT_VERSION = 1


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    """Append-only grid of token options, N per time-step.

    ``columns[t - 1]`` holds the options for time-step t (1-based); the
    begin-of-sequence column is implicit.
    """

    width: int
    columns: tuple[tuple[TokenId, ...], ...] = ()

    def __post_init__(self):
        if self.width < 1:
            raise LatticeError("lattice width must be >= 1")
        for i, col in enumerate(self.columns):
            _check_column(col, self.width, i + 1)

    def __len__(self) -> int:
        return len(self.columns)

    def column(self, t: int) -> tuple[TokenId, ...]:
        """Column for time-step t (1-based)."""
        if not 1 <= t <= len(self.columns):
            raise LatticeError(f"no column for t={t}")
        return self.columns[t - 1]

    def append(self, column: Sequence[TokenId]) -> "Lattice":
        """Return a new lattice with one more column; self is unchanged."""
        col = tuple(int(w) for w in column)
        _check_column(col, self.width, len(self.columns) + 1)
        return Lattice(self.width, self.columns + (col,))

    def paths(self) -> Iterator[tuple[TokenId, ...]]:
        """All N^T token paths, in enumerate order. Only for tiny lattices."""
        return product(*self.columns)


def _check_column(col: Sequence[TokenId], width: int, t: int) -> None:
    if len(col) != width:
        raise LatticeError(f"column {t} has {len(col)} entries, expected {width}")
    for w in col:
        if w < 0:
            raise LatticeError(f"negative token id in column {t}")
    if len(set(col)) != len(col):
        raise LatticeError(f"duplicate token ids in column {t}")


def linearize(lattice: Lattice, bos: TokenId) -> list[TokenId]:
    """Flatten the lattice: [bos] then each column's entries in stored order.

    Length is always 1 + N*T.
    """
    out = [bos]
    for col in lattice.columns:
        out.extend(col)
    return out


def permute_column(
    tokens: Sequence[TokenId], prime: int, t: int
) -> tuple[list[TokenId], list[int]]:
    """Deterministically shuffle one column with seed ``prime * t``.

    Returns ``(permuted, index_map)`` where ``index_map[i]`` is the position
    of input token i in the permuted list.  Duplicate tokens are rejected.
    """
    if t < 1:
        raise LatticeError("permutation requires t >= 1")
    toks = list(tokens)
    if len(set(toks)) != len(toks):
        raise LatticeError("cannot permute a column with duplicate tokens")
    order = list(range(len(toks)))
    rng = Rng((prime * t) & _MASK64)
    rng.shuffle(order)
    # order[j] = original index placed at slot j; invert it.
    index_map = [0] * len(toks)
    permuted = [0] * len(toks)
    for j, orig in enumerate(order):
        permuted[j] = toks[orig]
        index_map[orig] = j
    return permuted, index_map


def tail_columns(lattice: Lattice, g: int, bos: TokenId) -> list[tuple[TokenId, ...]]:
    """The last ``g`` columns, left-padded with implicit all-bos columns."""
    if g < 1:
        raise LatticeError("tail length must be >= 1")
    cols: list[tuple[TokenId, ...]] = list(lattice.columns[-g:]) if len(lattice) else []
    pad = g - len(cols)
    return [(bos,) * lattice.width] * pad + cols


def enumerate_tails(lattice: Lattice, g: int, bos: TokenId) -> list[tuple[TokenId, ...]]:
    """Every choice of one token per column from the last ``g`` columns.

    Always exactly N^G tails, lexicographic over column positions with the
    earliest column most significant and tokens in stored order.  A lattice
    shorter than ``g`` is padded with the implicit all-bos column, so during
    the first g-1 steps some tails repeat; once ``len(lattice) >= g`` all
    N^G tails are distinct.
    """
    cols = tail_columns(lattice, g, bos)
    return [tuple(tail) for tail in product(*cols)]


@dataclass
class ClientSecret:
    """Client-private material: the seed prime and per-step true positions.

    Never serialized onto the wire; lives only inside the client session.
    """

    prime: int
    true_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.prime < 2 or not is_prime(self.prime):
            raise LatticeError("secret seed must be a prime >= 2")


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for all 64-bit integers."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def encode_lattice(
    lattice: Lattice, *, g: int | None = None, vocab_hash: str | None = None
) -> bytes:
    """Serialize to the versioned `.lat` binary format.

    Layout: magic ``LATC``, u8 version, u32 header length, JSON header
    (n, g, t, vocab_hash), then T*N token ids as little-endian u32.
    """
    header = {
        "n": lattice.width,
        "g": g,
        "t": len(lattice),
        "vocab_hash": vocab_hash,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_LAT_MAGIC)
    buf.write(struct.pack("<B", _LAT_VERSION))
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for col in lattice.columns:
        for w in col:
            buf.write(struct.pack("<I", w))
    return buf.getvalue()


def decode_lattice(data: bytes) -> tuple[Lattice, dict]:
    """Inverse of :func:`encode_lattice`. Returns (lattice, header)."""
    if data[:4] != _LAT_MAGIC:
        raise LatticeError("not a lattice file (bad magic)")
    version = data[4]
    if version != _LAT_VERSION:
        raise LatticeError(f"unsupported lattice format version {version}")
    (head_len,) = struct.unpack_from("<I", data, 5)
    head_end = 9 + head_len
    header = json.loads(data[9:head_end].decode("utf-8"))
    n, t = header["n"], header["t"]
    body = data[head_end:]
    if len(body) != 4 * n * t:
        raise LatticeError("lattice body length mismatch")
    ids = struct.unpack(f"<{n * t}I", body) if n * t else ()
    cols = tuple(tuple(ids[i * n : (i + 1) * n]) for i in range(t))
    return Lattice(n, cols), header


def lattice_from_columns(width: int, columns: Iterable[Sequence[TokenId]]) -> Lattice:
    return Lattice(width, tuple(tuple(int(w) for w in col) for col in columns))
