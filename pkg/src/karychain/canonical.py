"""Canonical JSON encoding shared by manifests, ledger blocks, and receipts.

Canonical form: keys sorted ascending, no insignificant whitespace, ASCII
output, integers only (floats are never produced and never accepted). Strict
loading re-serializes and compares, so any value-preserving re-encoding of a
stored document (case-flipped hex, reordered keys, inserted whitespace) is
rejected rather than silently normalized.
"""

from __future__ import annotations

import json
from typing import Any


class CanonicalJsonError(ValueError):
    """Document is not in canonical form or violates its schema."""


def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("ascii")


def canonical_loads_strict(text: str) -> Any:
    """Parse JSON and require the input to be byte-identical to canonical form."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CanonicalJsonError(f"invalid JSON: {exc}") from exc
    if canonical_dumps(obj) != text:
        raise CanonicalJsonError("document is not in canonical JSON form")
    return obj


def require_int(obj: Any, key: str, lo: int, hi: int) -> int:
    """Fetch an integer field, rejecting bools, floats, and out-of-range values."""
    value = obj.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise CanonicalJsonError(f"field {key!r} must be an integer")
    if not lo <= value <= hi:
        raise CanonicalJsonError(f"field {key!r} out of range [{lo}, {hi}]: {value}")
    return value


def require_hex(obj: Any, key: str, nbytes: int) -> bytes:
    """Fetch a fixed-width lowercase-hex field as bytes."""
    value = obj.get(key)
    if not isinstance(value, str):
        raise CanonicalJsonError(f"field {key!r} must be a hex string")
    return parse_hex(value, nbytes, key)


def parse_hex(value: str, nbytes: int, what: str) -> bytes:
    if len(value) != 2 * nbytes or value != value.lower():
        raise CanonicalJsonError(f"{what} must be {2 * nbytes} lowercase hex chars")
    try:
        return bytes.fromhex(value)
    except ValueError as exc:
        raise CanonicalJsonError(f"{what} is not valid hex") from exc


def require_str(obj: Any, key: str, allowed: tuple[str, ...] | None = None) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise CanonicalJsonError(f"field {key!r} must be a string")
    if allowed is not None and value not in allowed:
        raise CanonicalJsonError(f"field {key!r} must be one of {allowed}, got {value!r}")
    return value
