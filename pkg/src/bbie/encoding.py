"""Canonical encoding and hashing for consensus-relevant data.

Values are restricted to null, booleans, integers, UTF-8 strings, byte
strings, lists/tuples and string-keyed maps. Encoding is compact JSON with
sorted keys; byte strings become lowercase hex. Floats are rejected so the
same logical value always produces the same bytes on every platform.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

from .errors import DecodeError, UnencodableValue

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def _normalize(value: Any, path: str) -> Any:
    # bool before int: bool is an int subclass
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value).hex()
    if isinstance(value, (list, tuple)):
        return [_normalize(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise UnencodableValue(f"non-string map key {k!r} at {path or '<root>'}")
            out[k] = _normalize(v, f"{path}.{k}")
        return out
    if isinstance(value, float):
        raise UnencodableValue(f"float {value!r} at {path or '<root>'}; use scaled integers")
    raise UnencodableValue(f"unsupported type {type(value).__name__} at {path or '<root>'}")


def canonical_encode(value: Any) -> bytes:
    """Encode ``value`` to its canonical byte form."""
    return json.dumps(
        _normalize(value, ""),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def canonical_decode(data: bytes | str) -> Any:
    """Parse canonical bytes back into plain JSON values (bytes stay hex strings)."""
    try:
        return json.loads(data, parse_float=_reject_float)
    except (ValueError, UnencodableValue) as exc:
        raise DecodeError(str(exc)) from exc


def _reject_float(text: str) -> Any:
    raise UnencodableValue(f"float literal {text} in canonical data")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest_of(value: Any) -> bytes:
    """SHA-256 over the canonical encoding of ``value``."""
    return sha256(canonical_encode(value))


def hex_to_bytes(text: str, size: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(text)
    except (TypeError, ValueError) as exc:
        raise DecodeError(f"not a hex string: {text!r}") from exc
    if size is not None and len(raw) != size:
        raise DecodeError(f"expected {size} bytes, got {len(raw)}")
    return raw


def is_hex(text: Any, size: int) -> bool:
    if not isinstance(text, str) or len(text) != 2 * size:
        return False
    try:
        bytes.fromhex(text)
    except ValueError:
        return False
    return text == text.lower()
