"""Attack-success and generation-quality metrics.

``true_ratio`` counts exact position-wise matches; over the hypotheses of a
repeated beam search the per-hypothesis mean is exactly 1/N (each true token
lives in exactly one hypothesis), so ``max_true_ratio`` is bounded below by
1/N for any noise scheme.

``semantic_overlap_proxy`` is a deliberately simple embedding-overlap score.
It is not a learned-encoder metric and every report labels it as a proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .embeddings import PpmiEmbeddings
from .lm import NGramModel, TokenId


class MetricError(ValueError):
    pass


def true_ratio(hyp: Sequence[TokenId], truth: Sequence[TokenId]) -> float:
    """Fraction of positions where the hypothesis matches the true sequence."""
    if len(hyp) != len(truth):
        raise MetricError("sequences must have equal length")
    if not truth:
        raise MetricError("empty sequences have no ratio")
    return sum(1 for a, b in zip(hyp, truth) if a == b) / len(truth)


def true_ratio_exact(hyp: Sequence[TokenId], truth: Sequence[TokenId]) -> Fraction:
    """Exact rational variant, for identity checks with zero tolerance."""
    if len(hyp) != len(truth):
        raise MetricError("sequences must have equal length")
    return Fraction(sum(1 for a, b in zip(hyp, truth) if a == b), len(truth))


def max_true_ratio(
    hyps: Sequence[Sequence[TokenId]], truth: Sequence[TokenId]
) -> float:
    if not hyps:
        raise MetricError("need at least one hypothesis")
    return max(true_ratio(h, truth) for h in hyps)


def pmi(
    x: Sequence[TokenId], y: Sequence[TokenId], eval_model: NGramModel
) -> float:
    """Length-normalized pointwise mutual information of generation and prompt.

    (log P(x|y) - log P(x)) / len(x), both terms under the evaluator model.
    """
    if not x:
        raise MetricError("empty generation")
    with_prompt = eval_model.sequence_logprob(x, history=y)
    alone = eval_model.sequence_logprob(x)
    return (with_prompt - alone) / len(x)


def semantic_overlap_proxy(
    hyp: Sequence[TokenId], truth: Sequence[TokenId], emb: PpmiEmbeddings
) -> float:
    """Greedy embedding overlap: mean over truth tokens of the best cosine
    against any hypothesis token, clipped to [0, 1].  A proxy, not a learned
    similarity metric."""
    if not hyp or not truth:
        raise MetricError("empty sequences")
    total = 0.0
    sim_cache: dict[TokenId, float] = {}
    for t_tok in truth:
        best = sim_cache.get(t_tok)
        if best is None:
            sims = emb.similarities(t_tok)
            best = max(float(sims[h_tok]) for h_tok in set(hyp))
            sim_cache[t_tok] = best
        total += best
    return min(1.0, max(0.0, total / len(truth)))


@dataclass
class AttackReport:
    """Evaluated attack outcome for one session."""

    true_ratios: list[float]
    max_true_ratio: float
    proxy_scores: list[float] = field(default_factory=list)
    max_proxy_score: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.true_ratios + [self.max_true_ratio]:
            if not 0.0 <= r <= 1.0:
                raise MetricError("ratios must lie in [0, 1]")

    def to_json(self) -> dict:
        out = {
            "true_ratios": [f"{r:.9g}" for r in self.true_ratios],
            "max_true_ratio": f"{self.max_true_ratio:.9g}",
            "metadata": self.metadata,
        }
        if self.proxy_scores:
            # Named for what it is; this is not a learned-embedding score.
            out["semantic_overlap_proxy"] = [f"{s:.9g}" for s in self.proxy_scores]
            out["max_semantic_overlap_proxy"] = f"{self.max_proxy_score:.9g}"
        return out


def evaluate_hypotheses(
    paths: Sequence[Sequence[TokenId]],
    truth: Sequence[TokenId],
    emb: PpmiEmbeddings | None = None,
    metadata: dict | None = None,
    skip_prefix: int = 0,
) -> AttackReport:
    """Build an :class:`AttackReport` for a set of recovered paths.

    ``skip_prefix`` restricts scoring to the generation suffix (drops the
    first ``skip_prefix`` positions, i.e. the prompt phase) when the caller
    wants generation-only ratios; the default scores the full sequence.
    """
    truth_part = list(truth[skip_prefix:])
    if not truth_part:
        raise MetricError("nothing left to score after skipping the prefix")
    ratios = [true_ratio(list(p)[skip_prefix:], truth_part) for p in paths]
    report = AttackReport(
        true_ratios=ratios,
        max_true_ratio=max(ratios),
        metadata=metadata or {},
    )
    if emb is not None:
        scores = [
            semantic_overlap_proxy(list(p)[skip_prefix:], truth_part, emb)
            for p in paths
        ]
        report.proxy_scores = scores
        report.max_proxy_score = max(scores)
    return report
