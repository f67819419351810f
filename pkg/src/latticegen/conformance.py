"""Backend-agnostic protocol conformance checks.

Any object satisfying the :class:`~latticegen.lm.LmBackend` contract should
drive the protocol without changing its observable behavior.  These checks
are what the built-in backend's protocol tests assert, packaged so an
external backend (for example a neural model behind a wire adapter) can run
the identical suite.
"""

from __future__ import annotations

import json

from .lm import LmBackend
from .protocol import (
    SchemeSpec,
    ServerSession,
    SessionConfig,
    VocabInfo,
    run_in_process,
)
from .wire import Error, Hello, Tokens


class ConformanceFailure(AssertionError):
    pass


def _check(cond: bool, label: str) -> None:
    if not cond:
        raise ConformanceFailure(label)


def run_backend_conformance(
    backend: LmBackend,
    vocab: VocabInfo,
    seeds: tuple[int, ...] = (11, 23, 47),
    t_max: int = 8,
    widths: tuple[int, ...] = (2, 3),
    tails: tuple[int, ...] = (1, 2),
    k: int = 50,
) -> int:
    """Run the protocol invariant suite against ``backend``.

    Returns the number of sessions executed; raises ConformanceFailure on
    the first violated invariant.
    """
    sessions = 0
    for seed in seeds:
        for n in widths:
            for g in tails:
                config = SessionConfig(
                    n=n, g=g, t_max=t_max, k=k,
                    scheme=SchemeSpec(name="mixing", mix_ratio=0.2),
                )
                label = f"n={n} g={g} seed={seed}"
                first, outcome, transport = run_in_process(
                    config, backend, vocab, client_seed=seed
                )
                sessions += 1

                _check(first.lattice == outcome.lattice, f"{label}: lattice mismatch")
                secret = outcome.secret
                for t in range(1, t_max + 1):
                    column = outcome.lattice.column(t)
                    _check(
                        column[secret.true_indices[t - 1]] == outcome.true_seq[t - 1],
                        f"{label}: true token not at the secret index at t={t}",
                    )
                for batch in first.saved_dists:
                    _check(len(batch) == n**g, f"{label}: wrong distribution fan-out")
                    for dist in batch:
                        _check(len(dist.entries) <= k, f"{label}: top-k bound broken")
                        lps = [lp for _, lp in dist.entries]
                        _check(lps == sorted(lps, reverse=True),
                               f"{label}: entries not sorted")

                second, _, _ = run_in_process(config, backend, vocab, client_seed=seed)
                _check(
                    json.dumps(first.to_json(), sort_keys=True)
                    == json.dumps(second.to_json(), sort_keys=True),
                    f"{label}: identical runs differ (non-deterministic backend?)",
                )

    # Out-of-order and malformed starts must abort, whatever the backend.
    server = ServerSession(backend, vocab)
    hello = Hello(n=2, g=1, k=k, t_max=4, vocab_hash=vocab.content_hash)
    _check(isinstance(server.handle(hello), Hello), "hello not accepted")
    resp = server.handle(Tokens(3, (1, 2)))
    _check(isinstance(resp, Error) and resp.code == "out_of_order",
           "out-of-order message did not abort")
    resp = server.handle(Tokens(0, (vocab.bos_id,) * 2))
    _check(isinstance(resp, Error) and resp.code == "aborted",
           "session kept going after abort")
    return sessions
