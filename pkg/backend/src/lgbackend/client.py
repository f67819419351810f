"""Adapter: the HTTP service as a backend for the lattice protocol.

Implements the primary package's backend contract over POST /next_dist, so
a protocol server can run against this service without knowing it is
remote.  This module is the only place the backend package imports the
primary one.
"""

from __future__ import annotations

import json

import requests

from latticegen.lm import TailDistribution, quantize_logprob


class BackendClientError(RuntimeError):
    pass


class HttpLmBackend:
    """LmBackend over the wire; pure per-request, no session state."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()
        health = self._session.get(f"{self.base_url}/health", timeout=timeout)
        if health.status_code != 200:
            raise BackendClientError(f"backend unhealthy: {health.status_code}")
        info = health.json()
        self._vocab_size = int(info["vocab_size"])
        self.vocab_hash = info.get("vocab_hash", "")
        self.is_llg = bool(info.get("llg"))

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def next_dist(self, context, tail, k=50) -> TailDistribution:
        body = json.dumps(
            {
                "linearized_context": [int(x) for x in context],
                "tail": [int(x) for x in tail],
                "k": int(k) if k is not None else self._vocab_size,
            }
        )
        resp = self._session.post(
            f"{self.base_url}/next_dist", data=body.encode(), timeout=self.timeout
        )
        if resp.status_code != 200:
            raise BackendClientError(f"backend error {resp.status_code}: {resp.text.strip()}")
        line = resp.text.strip().splitlines()[0]
        payload = json.loads(line)
        entries = tuple(
            (int(tok), quantize_logprob(float(lp))) for tok, lp in payload["entries"]
        )
        return TailDistribution(tuple(int(x) for x in tail), entries)

    def close(self) -> None:
        self._session.close()
