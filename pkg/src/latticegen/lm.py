"""Language model backend: interface, built-in n-gram model, and sampler.

The built-in backend is an interpolated add-k n-gram model of order G+1.
It conditions on exactly the last G tokens of a candidate path and ignores
the rest of the lattice, which makes it the worst-case model the protocol
degrades to when no earlier history is usable.

Log-probabilities handed out by ``next_dist`` are quantized to 9 significant
decimal digits at the source.  Stored distributions, wire payloads, and the
plain no-lattice generation reference therefore all see bit-identical values
on every platform.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .rng import Rng

TokenId = int
Tail = tuple[TokenId, ...]

WIRE_TOP_K = 50

_NGM_MAGIC = b"NGLM"
_NGM_VERSION = 1


class ModelError(ValueError):
    pass


def quantize_logprob(lp: float) -> float:
    """Canonical 9-significant-digit rounding, clamped to <= 0."""
    return min(float(f"{lp:.9g}"), 0.0)


@dataclass(frozen=True)
class TailDistribution:
    """Sparse next-token distribution conditioned on one G-gram tail.

    Entries are (token id, log-probability), sorted by descending
    log-probability with ties broken by ascending id.
    """

    tail: Tail
    entries: tuple[tuple[TokenId, float], ...]

    def __post_init__(self):
        ids = [t for t, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate token ids in distribution")
        prev = None
        for tok, lp in self.entries:
            if not math.isfinite(lp) or lp > 0.0:
                raise ModelError("log-probabilities must be finite and <= 0")
            if prev is not None and (lp, -tok) > prev:
                raise ModelError("entries must be sorted by descending log-probability")
            prev = (lp, -tok)

    def truncate(self, k: int) -> "TailDistribution":
        if len(self.entries) <= k:
            return self
        return TailDistribution(self.tail, self.entries[:k])

    def logprob(self, token: TokenId) -> float | None:
        for tok, lp in self.entries:
            if tok == token:
                return lp
        return None

    def argmax(self) -> TokenId:
        return self.entries[0][0]


@dataclass(frozen=True)
class SamplerConfig:
    """Top-k sampling knobs for the true sequence."""

    k: int = 50
    temperature: float = 0.7
    repetition_penalty: float = 1.05

    def __post_init__(self):
        if self.k < 1:
            raise ModelError("top-k cutoff must be >= 1")
        if self.temperature <= 0:
            raise ModelError("temperature must be positive")
        if self.repetition_penalty < 1:
            raise ModelError("repetition penalty must be >= 1")


@runtime_checkable
class LmBackend(Protocol):
    """What the protocol server needs from a model.

    ``next_dist`` must be a pure function of its arguments; ``context`` is
    the full linearized lattice so lattice-aware backends can use it, while
    tail-only backends ignore it.
    """

    @property
    def vocab_size(self) -> int: ...

    def next_dist(
        self, context: Sequence[TokenId], tail: Tail, k: int | None = WIRE_TOP_K
    ) -> TailDistribution: ...


class NGramModel:
    """Interpolated add-k n-gram model over a fixed-size vocabulary.

    Probability of a token given a context is a convex combination over all
    orders j = 1..order of add-k estimates conditioned on the last j-1
    context tokens.  Every conditional, seen or unseen, sums to one.
    """

    def __init__(
        self,
        order: int,
        vocab_size: int,
        bos_id: int = 0,
        add_k: float = 0.1,
        lambdas: Sequence[float] | None = None,
    ):
        if order < 1:
            raise ModelError("order must be >= 1")
        if vocab_size < 2:
            raise ModelError("vocabulary too small")
        if add_k < 0:
            raise ModelError("add-k constant must be non-negative")
        if lambdas is None:
            lambdas = [1.0 / order] * order
        lambdas = [float(x) for x in lambdas]
        if len(lambdas) != order:
            raise ModelError("need one interpolation weight per order")
        if any(x < 0 for x in lambdas) or abs(sum(lambdas) - 1.0) > 1e-9:
            raise ModelError("interpolation weights must be non-negative and sum to 1")
        self.order = order
        self._vocab_size = vocab_size
        self.bos_id = bos_id
        self.add_k = add_k
        self.lambdas = lambdas
        # Per order j (1-based): context tuple -> {token: count}.
        self._counts: list[dict[Tail, dict[TokenId, int]]] = [{} for _ in range(order)]
        self._frozen: list[dict[Tail, tuple[np.ndarray, np.ndarray, int]]] | None = None

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def fit(self, corpus: Sequence[Sequence[TokenId]]) -> "NGramModel":
        """Accumulate n-gram counts for every order from token sequences."""
        if not corpus:
            raise ModelError("empty corpus")
        for seq in corpus:
            padded = [self.bos_id] * (self.order - 1) + list(seq)
            for i, target in enumerate(seq):
                if not 0 <= target < self._vocab_size:
                    raise ModelError(f"token id {target} outside vocabulary")
                pos = i + self.order - 1
                for j in range(1, self.order + 1):
                    ctx = tuple(padded[pos - (j - 1) : pos])
                    table = self._counts[j - 1].setdefault(ctx, {})
                    table[target] = table.get(target, 0) + 1
        self._frozen = None
        return self

    def _tables(self):
        if self._frozen is None:
            frozen = []
            for table in self._counts:
                packed = {}
                for ctx, cnts in table.items():
                    ids = np.fromiter(sorted(cnts), dtype=np.int64)
                    vals = np.array([cnts[i] for i in ids], dtype=np.float64)
                    packed[ctx] = (ids, vals, int(vals.sum()))
                frozen.append(packed)
            self._frozen = frozen
        return self._frozen

    def full_dist(self, tail: Tail) -> np.ndarray:
        """Untruncated, unquantized probability vector over the vocabulary."""
        if len(tail) != self.order - 1:
            raise ModelError(
                f"tail length {len(tail)} does not match model order {self.order}"
            )
        v = self._vocab_size
        vec = np.zeros(v, dtype=np.float64)
        tables = self._tables()
        for j in range(1, self.order + 1):
            lam = self.lambdas[j - 1]
            if lam == 0.0:
                continue
            ctx = tuple(tail[len(tail) - (j - 1) :]) if j > 1 else ()
            ids, vals, total = tables[j - 1].get(ctx, (None, None, 0))
            denom = total + self.add_k * v
            if denom <= 0.0:
                vec += lam / v  # nothing seen and no smoothing: fall back to uniform
                continue
            vec += lam * self.add_k / denom
            if ids is not None:
                np.add.at(vec, ids, lam * vals / denom)
        return vec

    def next_dist(
        self, context: Sequence[TokenId], tail: Tail, k: int | None = WIRE_TOP_K
    ) -> TailDistribution:
        """Top-k slice of the conditional distribution for one tail.

        ``context`` (the linearized lattice) is deliberately ignored: this
        backend conditions on the tail alone.
        """
        del context
        vec = self.full_dist(tail)
        order = np.lexsort((np.arange(len(vec)), -vec))
        if k is not None:
            order = order[:k]
        entries = []
        for idx in order:
            p = vec[idx]
            if p <= 0.0:
                continue
            entries.append((int(idx), quantize_logprob(math.log(p))))
        return TailDistribution(tuple(tail), tuple(entries))

    def logprob(self, token: TokenId, tail: Tail) -> float:
        p = self.full_dist(tail)[token]
        if p <= 0.0:
            return -math.inf
        return math.log(p)

    def sequence_logprob(
        self, text: Sequence[TokenId], history: Sequence[TokenId] = ()
    ) -> float:
        """Sum of conditional log-probabilities of ``text`` given ``history``."""
        stream = [self.bos_id] * (self.order - 1) + list(history) + list(text)
        total = 0.0
        start = len(stream) - len(text)
        for pos in range(start, len(stream)):
            tail = tuple(stream[pos - (self.order - 1) : pos])
            total += self.logprob(stream[pos], tail)
        return total

    def save(self, path: str | Path) -> None:
        """Versioned binary: JSON header, then sorted count records per order."""
        buf = io.BytesIO()
        buf.write(_NGM_MAGIC)
        buf.write(struct.pack("<B", _NGM_VERSION))
        header = {
            "order": self.order,
            "vocab_size": self._vocab_size,
            "bos_id": self.bos_id,
            "add_k": self.add_k,
            "lambdas": self.lambdas,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        buf.write(struct.pack("<I", len(head)))
        buf.write(head)
        for j in range(self.order):
            table = self._counts[j]
            buf.write(struct.pack("<I", len(table)))
            for ctx in sorted(table):
                buf.write(struct.pack(f"<{j}I", *ctx))
                items = sorted(table[ctx].items())
                buf.write(struct.pack("<I", len(items)))
                for tok, cnt in items:
                    buf.write(struct.pack("<IQ", tok, cnt))
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "NGramModel":
        data = Path(path).read_bytes()
        if data[:4] != _NGM_MAGIC:
            raise ModelError("not a model file (bad magic)")
        if data[4] != _NGM_VERSION:
            raise ModelError(f"unsupported model format version {data[4]}")
        (head_len,) = struct.unpack_from("<I", data, 5)
        off = 9 + head_len
        header = json.loads(data[9 : off].decode())
        model = cls(
            order=header["order"],
            vocab_size=header["vocab_size"],
            bos_id=header["bos_id"],
            add_k=header["add_k"],
            lambdas=header["lambdas"],
        )
        for j in range(model.order):
            (n_ctx,) = struct.unpack_from("<I", data, off)
            off += 4
            for _ in range(n_ctx):
                ctx = struct.unpack_from(f"<{j}I", data, off)
                off += 4 * j
                (n_items,) = struct.unpack_from("<I", data, off)
                off += 4
                table = {}
                for _ in range(n_items):
                    tok, cnt = struct.unpack_from("<IQ", data, off)
                    off += 12
                    table[tok] = cnt
                model._counts[j][tuple(ctx)] = table
        return model


def train(
    corpus: Sequence[Sequence[TokenId]],
    order: int,
    vocab_size: int,
    bos_id: int = 0,
    add_k: float = 0.1,
    lambdas: Sequence[float] | None = None,
) -> NGramModel:
    """Build and fit an n-gram model in one call."""
    return NGramModel(order, vocab_size, bos_id, add_k, lambdas).fit(corpus)


def sample(
    dist: TailDistribution,
    cfg: SamplerConfig,
    history: Sequence[TokenId],
    rng: Rng,
) -> TokenId:
    """Draw one token: repetition penalty, temperature, top-k, renormalize.

    The penalty divides the positive-domain score of any token already in
    ``history`` (a constant log-space shift), matching the scheme popularized
    by conditional-generation LMs.
    """
    if not dist.entries:
        raise ModelError("cannot sample from an empty distribution")
    seen = set(history)
    pen = math.log(cfg.repetition_penalty)
    scored = [
        (lp - pen if tok in seen else lp, tok) for tok, lp in dist.entries
    ]
    scored.sort(key=lambda st: (-st[0], st[1]))
    top = scored[: cfg.k]
    scaled = [s / cfg.temperature for s, _ in top]
    peak = max(scaled)
    weights = [math.exp(s - peak) for s in scaled]
    idx = rng.sample_index(weights)
    return top[idx][1]


def plain_generate(
    model: NGramModel,
    prompt: Sequence[TokenId],
    t_max: int,
    cfg: SamplerConfig,
    rng: Rng,
    wire_k: int | None = WIRE_TOP_K,
    eot_id: TokenId | None = None,
) -> list[TokenId]:
    """Ordinary no-lattice generation from the same backend and sampler.

    Distributions pass through the same top-k truncation and quantization the
    wire applies, so a lattice session with an identical true-token stream
    produces exactly this sequence.  After ``eot_id`` is sampled the output
    is padded with it, with no further draws.
    """
    g = model.order - 1
    seq: list[TokenId] = []
    prompt = list(prompt)
    for t in range(1, t_max + 1):
        if t <= len(prompt):
            seq.append(prompt[t - 1])
            continue
        if eot_id is not None and seq and seq[-1] == eot_id:
            seq.append(eot_id)
            continue
        padded = [model.bos_id] * g + seq
        tail = tuple(padded[len(padded) - g :]) if g else ()
        dist = model.next_dist((), tail, k=wire_k)
        seq.append(sample(dist, cfg, seq, rng))
    return seq


def perplexity(model: NGramModel, text: Sequence[TokenId]) -> float:
    """exp of the mean negative log-probability of ``text`` under the model."""
    if not len(text):
        raise ModelError("perplexity of empty text is undefined")
    return math.exp(-model.sequence_logprob(text) / len(text))


def dists_by_tail(items: Sequence[TailDistribution]) -> Mapping[Tail, TailDistribution]:
    """Index a step's distributions by tail; duplicate tails collapse."""
    out: dict[Tail, TailDistribution] = {}
    for d in items:
        out.setdefault(d.tail, d)
    return out
