"""Ed25519 identities for every signing role in the network.

Tokens, vendors, relays, and the issuer all authenticate with Ed25519.
A public key doubles as the party's identifier on the wire (base64url,
no padding). Role tags keep a key generated for one purpose from being
accepted in another.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .encoding import b64u, unb64u

ROLE_TOKEN = "claimant-token"
ROLE_VENDOR = "vendor"
ROLE_ISSUER = "issuer"
ROLE_RELAY = "relay"

ROLES = (ROLE_TOKEN, ROLE_VENDOR, ROLE_ISSUER, ROLE_RELAY)

KEY_SIZE = 32
SIGNATURE_SIZE = 64


class IdentityError(Exception):
    pass


@dataclass(frozen=True)
class PublicIdentity:
    """Verification half of an identity. `key` is the raw 32-byte Ed25519
    public key; `role` is one of the ROLE_* tags."""

    key: bytes
    role: str

    def __post_init__(self) -> None:
        if len(self.key) != KEY_SIZE:
            raise IdentityError("public key must be 32 bytes")
        if self.role not in ROLES:
            raise IdentityError(f"unknown role {self.role!r}")

    @property
    def identifier(self) -> str:
        """Wire identifier: the base64url key bytes."""
        return b64u(self.key)

    def verify(self, signature: bytes, message: bytes) -> bool:
        if len(signature) != SIGNATURE_SIZE:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(self.key).verify(signature, message)
        except InvalidSignature:
            return False
        except ValueError:
            return False
        return True

    def to_wire(self) -> dict:
        return {"key": b64u(self.key), "role": self.role}

    @classmethod
    def from_wire(cls, wire: dict) -> "PublicIdentity":
        return cls(key=unb64u(wire["key"], KEY_SIZE), role=str(wire["role"]))

    @classmethod
    def from_identifier(cls, identifier: str, role: str) -> "PublicIdentity":
        return cls(key=unb64u(identifier, KEY_SIZE), role=role)


class Identity:
    """Full signing identity. Construct with `generate` (OS entropy) or
    `generate_seeded` (deterministic, for tests and simulations)."""

    def __init__(self, private_key: Ed25519PrivateKey, role: str):
        if role not in ROLES:
            raise IdentityError(f"unknown role {role!r}")
        self._private = private_key
        self.role = role
        raw = private_key.public_key().public_bytes_raw()
        self.public = PublicIdentity(key=raw, role=role)

    @classmethod
    def generate(cls, role: str) -> "Identity":
        return cls(Ed25519PrivateKey.generate(), role)

    @classmethod
    def generate_seeded(cls, role: str, rng: Random) -> "Identity":
        seed = rng.getrandbits(256).to_bytes(32, "big")
        return cls(Ed25519PrivateKey.from_private_bytes(seed), role)

    @classmethod
    def from_seed(cls, seed: bytes, role: str) -> "Identity":
        if len(seed) != KEY_SIZE:
            raise IdentityError("seed must be 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed), role)

    @property
    def identifier(self) -> str:
        return self.public.identifier

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def seed_bytes(self) -> bytes:
        """Raw 32-byte private seed, for encrypted storage only."""
        return self._private.private_bytes_raw()

    def to_wire_secret(self) -> dict:
        return {"role": self.role, "seed": b64u(self.seed_bytes())}

    @classmethod
    def from_wire_secret(cls, wire: dict) -> "Identity":
        return cls.from_seed(unb64u(wire["seed"], KEY_SIZE), str(wire["role"]))
