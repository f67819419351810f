"""Client-side noise token generation: synonym, parallel, and mixing schemes.

Each scheme produces the N-1 decoy tokens that hide the true token in a
lattice column.  Outputs are guaranteed pairwise distinct and distinct from
the true token: a collision is re-sampled up to a fixed attempt budget and
then falls back to a uniformly random unused vocabulary token, keeping
columns duplicate-free for the attack algorithms downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

from .embeddings import PpmiEmbeddings
from .lm import SamplerConfig, Tail, TailDistribution, TokenId, sample
from .rng import Rng

SYNONYM_SKIP = 10
SYNONYM_TAKE = 5
NOISE_TOP_K = 5

_RESAMPLE_ATTEMPTS = 16


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class MixingConfig:
    """Mixing scheme knobs.

    ``prompt_mix_ratio`` of None means prompt steps use ``mix_ratio``;
    experiment defaults set the prompt phase higher than generation.
    """

    mix_ratio: float = 0.1
    prompt_mix_ratio: float | None = None
    noise_k: int = NOISE_TOP_K

    def __post_init__(self):
        for r in (self.mix_ratio, self.prompt_mix_ratio):
            if r is not None and not 0.0 <= r <= 1.0:
                raise NoiseError("mix ratio must lie in [0, 1]")
        if self.noise_k < 1:
            raise NoiseError("noise top-k must be >= 1")

    def ratio_for(self, is_prompt: bool) -> float:
        if is_prompt and self.prompt_mix_ratio is not None:
            return self.prompt_mix_ratio
        return self.mix_ratio


@dataclass
class NoiseContext:
    """Everything a scheme may consult for one time-step."""

    true_token: TokenId
    true_tail: Tail
    noise_tails: tuple[Tail, ...]
    dists: Mapping[Tail, TailDistribution]
    rng: Rng
    vocab_size: int
    is_prompt: bool = False
    emb: PpmiEmbeddings | None = None


class NoiseScheme(Protocol):
    name: str

    def make_noise(self, ctx: NoiseContext) -> list[TokenId]: ...


def _take_distinct(draw, used: set[TokenId], rng: Rng, vocab_size: int) -> TokenId:
    """Run ``draw()`` until it returns an unused token, then fall back."""
    for _ in range(_RESAMPLE_ATTEMPTS):
        tok = draw()
        if tok not in used:
            return tok
    while True:
        tok = rng.randbelow(vocab_size)
        if tok not in used:
            return tok


def _noise_sampler_cfg(noise_k: int) -> SamplerConfig:
    # Noise draws use a deliberately aggressive cutoff with no reshaping.
    return SamplerConfig(k=noise_k, temperature=1.0, repetition_penalty=1.0)


class SynonymNoise:
    """Decoys are embedding neighbors of the true token.

    Candidates are the ``take`` tokens after skipping the ``skip`` closest,
    whose surface forms tend to be near-duplicates of the true token.
    """

    name = "synonym"

    def __init__(self, emb: PpmiEmbeddings, skip: int = SYNONYM_SKIP, take: int = SYNONYM_TAKE):
        self.emb = emb
        self.skip = skip
        self.take = take

    def make_noise(self, ctx: NoiseContext) -> list[TokenId]:
        emb = ctx.emb or self.emb
        candidates = emb.nearest_tokens(ctx.true_token, self.skip, self.take, rng=ctx.rng)
        used = {ctx.true_token}
        out = []
        for _ in range(len(ctx.noise_tails)):
            tok = _take_distinct(
                lambda: candidates[ctx.rng.randbelow(len(candidates))],
                used,
                ctx.rng,
                ctx.vocab_size,
            )
            used.add(tok)
            out.append(tok)
        return out


class ParallelNoise:
    """Each noise sequence extends itself from its own tail's distribution.

    Never consults the true tail's distribution, so the noise sequences stay
    independent of the true sequence.
    """

    name = "parallel"

    def __init__(self, noise_k: int = NOISE_TOP_K):
        self.noise_k = noise_k
        self._cfg = _noise_sampler_cfg(noise_k)

    def make_noise(self, ctx: NoiseContext) -> list[TokenId]:
        used = {ctx.true_token}
        out = []
        for tail in ctx.noise_tails:
            dist = ctx.dists[tail]
            tok = _take_distinct(
                lambda: sample(dist, self._cfg, (), ctx.rng),
                used,
                ctx.rng,
                ctx.vocab_size,
            )
            used.add(tok)
            out.append(tok)
        return out


class MixingNoise:
    """Parallel noise that branches from the true sequence's distribution.

    Independently per noise sequence and per step, with probability
    ``mix_ratio`` the decoy is drawn from the true tail's distribution
    (re-drawn if it lands on the true token itself); otherwise it extends
    its own sequence exactly like the parallel scheme.  With a ratio of 0
    the draw sequence is identical to :class:`ParallelNoise`.
    """

    name = "mixing"

    def __init__(self, config: MixingConfig | None = None):
        self.config = config or MixingConfig()
        self._cfg = _noise_sampler_cfg(self.config.noise_k)
        self.branch_events = 0
        self.branch_opportunities = 0

    def make_noise(self, ctx: NoiseContext) -> list[TokenId]:
        ratio = self.config.ratio_for(ctx.is_prompt)
        used = {ctx.true_token}
        out = []
        for tail in ctx.noise_tails:
            self.branch_opportunities += 1
            branch = ratio > 0.0 and ctx.rng.random() < ratio
            if branch:
                self.branch_events += 1
                dist = ctx.dists[ctx.true_tail]
            else:
                dist = ctx.dists[tail]
            tok = _take_distinct(
                lambda: sample(dist, self._cfg, (), ctx.rng),
                used,
                ctx.rng,
                ctx.vocab_size,
            )
            used.add(tok)
            out.append(tok)
        return out


def make_scheme(
    name: str,
    *,
    emb: PpmiEmbeddings | None = None,
    mixing: MixingConfig | None = None,
    noise_k: int = NOISE_TOP_K,
    synonym_skip: int = SYNONYM_SKIP,
    synonym_take: int = SYNONYM_TAKE,
) -> NoiseScheme:
    if name == "synonym":
        if emb is None:
            raise NoiseError("synonym scheme requires embeddings")
        return SynonymNoise(emb, skip=synonym_skip, take=synonym_take)
    if name == "parallel":
        return ParallelNoise(noise_k=noise_k)
    if name == "mixing":
        return MixingNoise(mixing or MixingConfig(noise_k=noise_k))
    raise NoiseError(f"unknown noise scheme {name!r}")
