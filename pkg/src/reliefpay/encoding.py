"""Canonical byte encoding shared by every signed or hashed structure.

One rule, applied system-wide: structures serialize to JSON with
lexicographically sorted keys and no insignificant whitespace; big integers
travel as lowercase hex strings; byte fields as base64url without padding.
Digests are SHA-256 over exactly those bytes, so identical logical
structures hash identically on every platform.

Floats are rejected outright: every quantity in the protocol is integral
(currency minor units, heights, timestamps in UTC seconds).
"""

from __future__ import annotations

import base64
import hashlib
import json

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


class EncodingError(ValueError):
    """A value cannot be represented in the canonical encoding."""


def _check(value):
    if value is None or isinstance(value, (str, bool)):
        return
    if isinstance(value, float):
        raise EncodingError("floats are not canonical; use integer minor units")
    if isinstance(value, int):
        return
    if isinstance(value, (list, tuple)):
        for item in value:
            _check(item)
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"non-string key {key!r}")
            _check(item)
        return
    raise EncodingError(f"cannot canonicalize {type(value).__name__}")


def canonical_json(value) -> bytes:
    """Serialize to the canonical JSON byte string."""
    _check(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest(value) -> bytes:
    """SHA-256 over the canonical encoding of `value` (32 bytes)."""
    return sha256(canonical_json(value))


def b64u(data: bytes) -> str:
    """base64url without padding."""
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def unb64u(text: str, length: int | None = None) -> bytes:
    """Inverse of b64u; rejects padded or non-canonical input."""
    if not isinstance(text, str) or "=" in text:
        raise EncodingError("not unpadded base64url")
    pad = "=" * (-len(text) % 4)
    try:
        data = base64.urlsafe_b64decode(text + pad)
    except (ValueError, TypeError) as exc:
        raise EncodingError(f"bad base64url: {exc}") from exc
    if b64u(data) != text:
        raise EncodingError("non-canonical base64url")
    if length is not None and len(data) != length:
        raise EncodingError(f"expected {length} bytes, got {len(data)}")
    return data


def int_to_hex(value: int) -> str:
    """Lowercase hex, no leading zeros, '0' for zero. Non-negative only."""
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise EncodingError(f"not a non-negative integer: {value!r}")
    return format(value, "x")


_HEX_DIGITS = set("0123456789abcdef")


def hex_to_int(text: str) -> int:
    if not isinstance(text, str) or not text:
        raise EncodingError("empty hex string")
    if not set(text) <= _HEX_DIGITS:
        raise EncodingError(f"bad hex: {text!r}")
    if text != "0" and text.startswith("0"):
        raise EncodingError(f"non-canonical hex: {text!r}")
    return int(text, 16)
