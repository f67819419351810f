"""Newline-delimited JSON wire codec for the client/server conversation.

One message per line over any reliable byte stream.  Log-probabilities are
carried as decimal strings with 9 significant digits; the model layer
quantizes to the same grid, so encode/decode round-trips are exact and
recorded conversations are byte-stable across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .lm import TailDistribution, quantize_logprob

TokenId = int


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class Hello:
    n: int
    g: int
    k: int
    t_max: int
    vocab_hash: str


@dataclass(frozen=True)
class Tokens:
    t: int
    ids: tuple[TokenId, ...]


@dataclass(frozen=True)
class Dists:
    t: int
    items: tuple[TailDistribution, ...]


@dataclass(frozen=True)
class Done:
    t: int


@dataclass(frozen=True)
class Error:
    code: str
    detail: str = ""


WireMessage = Hello | Tokens | Dists | Done | Error


def _fmt_lp(lp: float) -> str:
    return f"{lp:.9g}"


def encode_message(msg: WireMessage) -> bytes:
    if isinstance(msg, Hello):
        obj = {
            "type": "hello",
            "n": msg.n,
            "g": msg.g,
            "k": msg.k,
            "t_max": msg.t_max,
            "vocab_hash": msg.vocab_hash,
        }
    elif isinstance(msg, Tokens):
        obj = {"type": "tokens", "t": msg.t, "ids": list(msg.ids)}
    elif isinstance(msg, Dists):
        obj = {
            "type": "dists",
            "t": msg.t,
            "items": [
                {
                    "tail": list(d.tail),
                    "entries": [[tok, _fmt_lp(lp)] for tok, lp in d.entries],
                }
                for d in msg.items
            ],
        }
    elif isinstance(msg, Done):
        obj = {"type": "done", "t": msg.t}
    elif isinstance(msg, Error):
        obj = {"type": "error", "code": msg.code, "detail": msg.detail}
    else:
        raise WireError(f"cannot encode {type(msg).__name__}")
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> WireMessage:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    line = line.strip()
    if not line:
        raise WireError("empty wire line")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"malformed wire JSON: {exc}") from None
    if not isinstance(obj, dict) or "type" not in obj:
        raise WireError("wire message must be an object with a type")
    kind = obj["type"]
    try:
        if kind == "hello":
            return Hello(
                n=int(obj["n"]),
                g=int(obj["g"]),
                k=int(obj["k"]),
                t_max=int(obj["t_max"]),
                vocab_hash=str(obj["vocab_hash"]),
            )
        if kind == "tokens":
            return Tokens(t=int(obj["t"]), ids=tuple(int(i) for i in obj["ids"]))
        if kind == "dists":
            items = tuple(
                TailDistribution(
                    tail=tuple(int(i) for i in item["tail"]),
                    entries=tuple(
                        (int(tok), quantize_logprob(float(lp)))
                        for tok, lp in item["entries"]
                    ),
                )
                for item in obj["items"]
            )
            return Dists(t=int(obj["t"]), items=items)
        if kind == "done":
            return Done(t=int(obj["t"]))
        if kind == "error":
            return Error(code=str(obj["code"]), detail=str(obj.get("detail", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed {kind} message: {exc}") from None
    raise WireError(f"unknown message type {kind!r}")


def encode_stream(messages: Sequence[WireMessage]) -> bytes:
    return b"".join(encode_message(m) for m in messages)


def decode_stream(data: bytes) -> list[WireMessage]:
    return [decode_message(line) for line in data.splitlines() if line.strip()]
