"""Response schema: committed JSON Schema plus the contextual top-k bound."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema


def load_schema() -> dict:
    ref = resources.files("lgbackend").joinpath("schema/next_dist_response.schema.json")
    return json.loads(ref.read_text(encoding="utf-8"))


_VALIDATOR = None


def validate_response(obj: dict, k: int | None = None) -> None:
    """Raise on any deviation from the committed schema.

    ``k`` additionally enforces the per-request entry budget and ordering,
    which a static schema cannot express.
    """
    global _VALIDATOR
    if _VALIDATOR is None:
        _VALIDATOR = jsonschema.Draft202012Validator(load_schema())
    _VALIDATOR.validate(obj)
    entries = obj["entries"]
    if k is not None and len(entries) > k:
        raise jsonschema.ValidationError(f"{len(entries)} entries exceed k={k}")
    lps = [float(lp) for _, lp in entries]
    if any(lp > 0 for lp in lps):
        raise jsonschema.ValidationError("positive log-probability")
    if lps != sorted(lps, reverse=True):
        raise jsonschema.ValidationError("entries not sorted by descending logprob")
    ids = [tok for tok, _ in entries]
    if len(set(ids)) != len(ids):
        raise jsonschema.ValidationError("duplicate token ids")
