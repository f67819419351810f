"""Lattice decoding attacks: beam search, repeated beam search, exact oracles.

All attacks consume a :class:`TranscriptRecord` and nothing else; they model
a curious server trying to pull the most plausible path out of the lattice
it helped build.  Beam search recombines hypotheses that share a G-gram
tail, which is lossless because the saved distributions condition on the
tail alone; with a beam at least as wide as the tail state space the search
is exact.

Tokens that fell outside a stored top-K distribution are scored with a
floor: the smallest retained log-probability in that distribution minus
ln(10).  Transcripts recorded in full-vector mode rarely need the floor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

from .lm import Tail, TokenId
from .transcript import TranscriptRecord

DEFAULT_BEAM_WIDTH = 16
_FLOOR_DROP = math.log(10.0)
_DP_STATE_GUARD = 1024
_ENUM_PATH_GUARD = 1 << 20


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackHypothesis:
    """One recovered path and its summed log-probability."""

    path: tuple[TokenId, ...]
    score: float


# A step lookup maps tail -> (token -> logprob, floor logprob).
StepLookup = Mapping[Tail, tuple[dict[TokenId, float], float]]


def _prepare(tr: TranscriptRecord) -> list[StepLookup]:
    steps = []
    for t in range(1, len(tr) + 1):
        lookup: dict[Tail, tuple[dict[TokenId, float], float]] = {}
        for tail, dist in tr.dists_at(t).items():
            if not dist.entries:
                raise AttackError(f"empty distribution at step {t}")
            table = {tok: lp for tok, lp in dist.entries}
            lookup[tail] = (table, dist.entries[-1][1] - _FLOOR_DROP)
        steps.append(lookup)
    return steps


def _tail_entry(step: StepLookup, tail: Tail, t: int) -> tuple[dict[TokenId, float], float]:
    entry = step.get(tail)
    if entry is None:
        raise AttackError(f"transcript is missing the distribution for tail {tail} at step {t}")
    return entry


def _padded_tail(path: Sequence[TokenId], t: int, g: int, bos: TokenId) -> Tail:
    """The conditioning tail a hypothesis carries into step t (1-based)."""
    padded = [bos] * g + list(path[: t - 1])
    return tuple(padded[len(padded) - g :])


def score_path(tr: TranscriptRecord, path: Sequence[TokenId]) -> float:
    """Re-derive a path's score from the saved distributions."""
    if len(path) != len(tr):
        raise AttackError("path length must equal transcript length")
    return _score_with(_prepare(tr), path, tr.config.g, tr.config.bos_id)


def _score_with(
    steps: Sequence[StepLookup], path: Sequence[TokenId], g: int, bos: TokenId
) -> float:
    total = 0.0
    for t in range(1, len(path) + 1):
        table, floor = _tail_entry(steps[t - 1], _padded_tail(path, t, g, bos), t)
        total += table.get(path[t - 1], floor)
    return total


def _better(a: tuple[float, tuple], b: tuple[float, tuple]) -> bool:
    """Higher score wins; equal scores prefer the lexicographically smaller path."""
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] < b[1]


def _beam(
    columns: Sequence[Sequence[TokenId]],
    steps: Sequence[StepLookup],
    g: int,
    bos: TokenId,
    beam_width: int,
) -> AttackHypothesis:
    if beam_width < 1:
        raise AttackError("beam width must be >= 1")
    beam: dict[Tail, tuple[float, tuple[TokenId, ...]]] = {(bos,) * g: (0.0, ())}
    for t, (column, step) in enumerate(zip(columns, steps), start=1):
        candidates: dict[Tail, tuple[float, tuple[TokenId, ...]]] = {}
        for tail, (score, path) in beam.items():
            table, floor = _tail_entry(step, tail, t)
            for w in column:
                cand = (score + table.get(w, floor), path + (w,))
                key = (tail + (w,))[-g:]
                best = candidates.get(key)
                if best is None or _better(cand, best):
                    candidates[key] = cand
        ranked = sorted(candidates.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
        beam = dict(ranked[:beam_width])
    score, path = _argbest(beam.values())
    return AttackHypothesis(path, score)


def _argbest(items) -> tuple[float, tuple[TokenId, ...]]:
    best = None
    for cand in items:
        if best is None or _better(cand, best):
            best = cand
    if best is None:
        raise AttackError("empty lattice")
    return best


def beam_search_attack(
    tr: TranscriptRecord, beam_width: int = DEFAULT_BEAM_WIDTH
) -> AttackHypothesis:
    """Most plausible single path, found by tail-recombining beam search."""
    return _beam(
        tr.lattice.columns, _prepare(tr), tr.config.g, tr.config.bos_id, beam_width
    )


def rbs_attack(
    tr: TranscriptRecord, beam_width: int = DEFAULT_BEAM_WIDTH
) -> tuple[AttackHypothesis, ...]:
    """Repeated beam search: peel off N-1 hypotheses, keep the remainder.

    After each round the recovered tokens are removed from every column, so
    the N hypotheses partition the lattice position by position.
    """
    n, g, bos = tr.config.n, tr.config.g, tr.config.bos_id
    steps = _prepare(tr)
    columns: list[list[TokenId]] = [list(col) for col in tr.lattice.columns]
    for col in columns:
        if len(set(col)) != len(col):
            raise AttackError("duplicate tokens in a column break hypothesis removal")
    hyps: list[AttackHypothesis] = []
    for _ in range(n - 1):
        hyp = _beam(columns, steps, g, bos, beam_width)
        hyps.append(hyp)
        for col, w in zip(columns, hyp.path):
            col.remove(w)
    last_path = tuple(col[0] for col in columns)
    hyps.append(AttackHypothesis(last_path, _score_with(steps, last_path, g, bos)))
    return tuple(hyps)


def exact_attack(tr: TranscriptRecord, method: str = "dp") -> AttackHypothesis:
    """Provably maximal-score path; the oracle the heuristics are tested against."""
    if method == "dp":
        return _viterbi(tr)
    if method == "exhaustive":
        return _enumerate_all(tr)
    raise AttackError(f"unknown exact method {method!r}")


def _viterbi(tr: TranscriptRecord) -> AttackHypothesis:
    n, g, bos = tr.config.n, tr.config.g, tr.config.bos_id
    if n**g > _DP_STATE_GUARD:
        raise AttackError(f"state space {n}^{g} exceeds the DP guard")
    steps = _prepare(tr)
    # Forward pass over tail states, exhaustive within each step.
    states: dict[Tail, tuple[float, tuple[TokenId, ...]]] = {(bos,) * g: (0.0, ())}
    for t in range(1, len(tr) + 1):
        nxt: dict[Tail, tuple[float, tuple[TokenId, ...]]] = {}
        for tail, (score, path) in states.items():
            table, floor = _tail_entry(steps[t - 1], tail, t)
            for w in tr.lattice.column(t):
                cand = (score + table.get(w, floor), path + (w,))
                key = (tail + (w,))[-g:]
                best = nxt.get(key)
                if best is None or _better(cand, best):
                    nxt[key] = cand
        states = nxt
    score, path = _argbest(states.values())
    return AttackHypothesis(path, score)


def _enumerate_all(tr: TranscriptRecord) -> AttackHypothesis:
    n = tr.config.n
    if n ** len(tr) > _ENUM_PATH_GUARD:
        raise AttackError("too many paths for exhaustive enumeration")
    steps = _prepare(tr)
    g, bos = tr.config.g, tr.config.bos_id
    best = None
    for path in product(*tr.lattice.columns):
        cand = (_score_with(steps, path, g, bos), path)
        if best is None or _better(cand, best):
            best = cand
    if best is None:
        raise AttackError("empty lattice")
    return AttackHypothesis(best[1], best[0])


def hypotheses_to_json(
    hyps: Sequence[AttackHypothesis], truth: Sequence[TokenId] | None = None
) -> dict:
    """Report payload: paths, scores, and per-step match flags when truth is known."""
    out: dict = {
        "hypotheses": [
            {"path": list(h.path), "score": f"{h.score:.9g}"} for h in hyps
        ]
    }
    if truth is not None:
        out["matches"] = [
            [1 if w == t else 0 for w, t in zip(h.path, truth)] for h in hyps
        ]
    return out


def save_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
