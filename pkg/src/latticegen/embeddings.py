"""Distributional token embeddings from windowed co-occurrence counts.

Rows are positive pointwise-mutual-information vectors, L2-normalized at
build time, so cosine similarity is a plain sparse dot product.  These stand
in for learned embeddings when ranking "closest" tokens for the synonym
noise scheme and when scoring semantic overlap; reports must label any score
derived from them as a proxy.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .rng import Rng

TokenId = int

DEFAULT_WINDOW = 5


class EmbeddingError(ValueError):
    pass


class PpmiEmbeddings:
    def __init__(self, matrix: sparse.csr_matrix, window: int):
        self.matrix = matrix
        self.window = window
        self._neighbor_cache: dict[TokenId, tuple[TokenId, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def build(
        cls,
        corpus: Sequence[Sequence[TokenId]],
        vocab_size: int,
        window: int = DEFAULT_WINDOW,
    ) -> "PpmiEmbeddings":
        """Count symmetric within-line co-occurrences, then PPMI-transform."""
        if window < 1:
            raise EmbeddingError("window must be >= 1")
        counts: dict[tuple[int, int], float] = {}
        for seq in corpus:
            n = len(seq)
            for i, w in enumerate(seq):
                for j in range(max(0, i - window), min(n, i + window + 1)):
                    if i == j:
                        continue
                    key = (w, seq[j])
                    counts[key] = counts.get(key, 0.0) + 1.0
        if not counts:
            raise EmbeddingError("no co-occurrences found")
        rows = np.fromiter((k[0] for k in counts), dtype=np.int64, count=len(counts))
        cols = np.fromiter((k[1] for k in counts), dtype=np.int64, count=len(counts))
        vals = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
        mat = sparse.coo_matrix((vals, (rows, cols)), shape=(vocab_size, vocab_size)).tocsr()

        total = mat.sum()
        row_tot = np.asarray(mat.sum(axis=1)).ravel()
        col_tot = np.asarray(mat.sum(axis=0)).ravel()
        coo = mat.tocoo()
        with np.errstate(divide="ignore"):
            pmi = np.log(coo.data * total / (row_tot[coo.row] * col_tot[coo.col]))
        pmi[~np.isfinite(pmi)] = 0.0
        pmi[pmi < 0] = 0.0
        ppmi = sparse.coo_matrix((pmi, (coo.row, coo.col)), shape=mat.shape).tocsr()
        ppmi.eliminate_zeros()

        norms = np.sqrt(np.asarray(ppmi.multiply(ppmi).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        normalized = sparse.diags(scale) @ ppmi
        return cls(normalized.tocsr(), window)

    def has_vector(self, token: TokenId) -> bool:
        row = self.matrix.getrow(token)
        return row.nnz > 0

    def cosine(self, a: TokenId, b: TokenId) -> float:
        return float(self.matrix.getrow(a).dot(self.matrix.getrow(b).T).toarray()[0, 0])

    def similarities(self, token: TokenId) -> np.ndarray:
        """Cosine of ``token`` against every vocabulary row (dense vector)."""
        return self.matrix.dot(self.matrix.getrow(token).T).toarray().ravel()

    def nearest_tokens(
        self,
        token: TokenId,
        skip: int,
        take: int,
        rng: Rng | None = None,
    ) -> list[TokenId]:
        """Rank all other tokens by cosine, drop the first ``skip``, return ``take``.

        A token whose embedding row is all zeros has no meaningful neighbors;
        with an ``rng`` we fall back to uniformly random distinct tokens,
        otherwise the condition is an error.
        """
        if not 0 <= token < self.vocab_size:
            raise EmbeddingError(f"token id {token} outside vocabulary")
        if skip + take > self.vocab_size - 1:
            raise EmbeddingError("skip + take exceeds vocabulary size")
        if not self.has_vector(token):
            if rng is None:
                raise EmbeddingError(f"token {token} has a zero embedding row")
            picked: list[TokenId] = []
            while len(picked) < take:
                cand = rng.randbelow(self.vocab_size)
                if cand != token and cand not in picked:
                    picked.append(cand)
            return picked
        cached = self._neighbor_cache.get(token)
        if cached is None:
            sims = self.similarities(token)
            sims[token] = -math.inf
            order = np.lexsort((np.arange(len(sims)), -sims))
            cached = tuple(int(i) for i in order[: self.vocab_size - 1])
            self._neighbor_cache[token] = cached
        return list(cached[skip : skip + take])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        coo = self.matrix.tocoo()
        np.savez_compressed(
            path,
            row=coo.row.astype(np.int64),
            col=coo.col.astype(np.int64),
            data=coo.data,
            meta=np.frombuffer(
                json.dumps({"shape": list(coo.shape), "window": self.window}).encode(),
                dtype=np.uint8,
            ),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PpmiEmbeddings":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            mat = sparse.coo_matrix(
                (z["data"], (z["row"], z["col"])), shape=tuple(meta["shape"])
            ).tocsr()
            return cls(mat, meta["window"])
