"""Chaum-style RSA blind signatures over a full-domain hash.

Accreditation flow: the wallet hashes its binding message into [0, n),
blinds it with a fresh random factor, the issuer signs the blinded value
without seeing the message, and the wallet strips the factor to obtain an
ordinary RSA-FDH signature.

One RSA keypair exists per currency denomination. Which key verifies an
accreditation is the only thing that authenticates the denomination; the
signed message itself never mentions it, so a signature under one key can
never be replayed as a claim to a different value.

Two parameter profiles: a toy profile (~64-bit modulus) that keeps tests
and desk-scale oracles fast, and a production profile (2048-bit modulus).
The algebra is identical at both sizes.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass
from random import Random

from .encoding import canonical_json, hex_to_int, int_to_hex

TOY_MODULUS_BITS = 64
PRODUCTION_MODULUS_BITS = 2048

DEFAULT_PUBLIC_EXPONENT = 65537

# Default denomination schedule, in currency minor units. Issuers override
# via policy configuration.
DEFAULT_DENOMINATIONS = (100, 500, 1000, 2000, 5000, 10000)


class BlindSignatureError(Exception):
    pass


# ---------------------------------------------------------------------------
# Key material
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenominationPublicKey:
    """Verification side of a denomination key."""

    denomination: int
    n: int
    e: int

    def to_wire(self) -> dict:
        return {
            "denomination": self.denomination,
            "n": int_to_hex(self.n),
            "e": int_to_hex(self.e),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "DenominationPublicKey":
        return cls(
            denomination=int(wire["denomination"]),
            n=hex_to_int(wire["n"]),
            e=hex_to_int(wire["e"]),
        )


@dataclass(frozen=True)
class DenominationKeyPair:
    """Full RSA keypair for one denomination. The private exponent stays
    with the issuer; everything else is published."""

    denomination: int
    n: int
    e: int
    d: int

    @property
    def public(self) -> DenominationPublicKey:
        return DenominationPublicKey(self.denomination, self.n, self.e)

    def to_wire(self) -> dict:
        wire = self.public.to_wire()
        wire["d"] = int_to_hex(self.d)
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "DenominationKeyPair":
        return cls(
            denomination=int(wire["denomination"]),
            n=hex_to_int(wire["n"]),
            e=hex_to_int(wire["e"]),
            d=hex_to_int(wire["d"]),
        )


@dataclass(frozen=True)
class BlindingFactor:
    """Secret randomness of one blinding. Never transmitted; destroyed once
    the accreditation has been verified."""

    r: int
    token_local_id: str = ""


@dataclass(frozen=True)
class BlindedMessage:
    value: int
    denomination: int

    def to_wire(self) -> dict:
        return {"blinded": int_to_hex(self.value), "denomination": self.denomination}

    @classmethod
    def from_wire(cls, wire: dict) -> "BlindedMessage":
        return cls(value=hex_to_int(wire["blinded"]), denomination=int(wire["denomination"]))


@dataclass(frozen=True)
class Accreditation:
    """The issuer's unblinded signature making a token spendable."""

    signature: int
    denomination: int

    def to_wire(self) -> dict:
        return {"denomination": self.denomination, "signature": int_to_hex(self.signature)}

    @classmethod
    def from_wire(cls, wire: dict) -> "Accreditation":
        return cls(
            signature=hex_to_int(wire["signature"]),
            denomination=int(wire["denomination"]),
        )


# ---------------------------------------------------------------------------
# Full-domain hash
# ---------------------------------------------------------------------------


def _expansion_block(message: bytes, counter: int) -> bytes:
    return hashlib.sha256(message + counter.to_bytes(4, "big")).digest()


def fdh_hash(message: bytes, n: int) -> int:
    """Hash `message` uniformly into [0, n).

    Counter-mode SHA-256 expansion: candidate bytes are consecutive 32-byte
    blocks SHA-256(message || counter_be32), truncated to the byte length
    of n and right-shifted to its exact bit length; candidates >= n are
    rejected and the expansion continues. Deterministic and bias-free.
    """
    if n < 2:
        raise BlindSignatureError("modulus too small")
    length = (n.bit_length() + 7) // 8
    blocks_per_candidate = (length + 31) // 32
    shift = 8 * length - n.bit_length()
    counter = 0
    while True:
        chunk = b"".join(
            _expansion_block(message, counter + i) for i in range(blocks_per_candidate)
        )
        counter += blocks_per_candidate
        candidate = int.from_bytes(chunk[:length], "big") >> shift
        if candidate < n:
            return candidate


# ---------------------------------------------------------------------------
# Blind signature algebra
# ---------------------------------------------------------------------------


def blind_value(hashed: int, r: int, key: DenominationPublicKey) -> int:
    """The bare blinding step: hashed * r^e mod n."""
    return (hashed * pow(r, key.e, key.n)) % key.n


def blind(
    message: bytes,
    key: DenominationPublicKey,
    rng: Random | None = None,
    token_local_id: str = "",
) -> tuple[BlindedMessage, BlindingFactor]:
    """Blind `message` for signing. Fresh random factor per call."""
    randbelow = rng.randrange if rng is not None else secrets.randbelow

    def draw() -> int:
        if rng is not None:
            return rng.randrange(2, key.n)
        return 2 + secrets.randbelow(key.n - 2)

    r = draw()
    while math.gcd(r, key.n) != 1:
        r = draw()
    hashed = fdh_hash(message, key.n)
    value = blind_value(hashed, r, key)
    return (
        BlindedMessage(value=value, denomination=key.denomination),
        BlindingFactor(r=r, token_local_id=token_local_id),
    )


def sign_blinded(blinded: BlindedMessage | int, key: DenominationKeyPair) -> int:
    """Issuer-side signing of a blinded value: value^d mod n."""
    value = blinded.value if isinstance(blinded, BlindedMessage) else blinded
    if not 0 <= value < key.n:
        raise BlindSignatureError("blinded value out of range")
    return pow(value, key.d, key.n)


def unblind(
    blind_sig: int, factor: BlindingFactor, key: DenominationPublicKey
) -> Accreditation:
    """Strip the blinding factor: s = blind_sig * r^-1 mod n."""
    try:
        r_inv = pow(factor.r, -1, key.n)
    except ValueError as exc:
        raise BlindSignatureError("blinding factor not invertible") from exc
    signature = (blind_sig * r_inv) % key.n
    return Accreditation(signature=signature, denomination=key.denomination)


def verify_accreditation(
    message: bytes, accreditation: Accreditation, key: DenominationPublicKey
) -> bool:
    """True iff signature^e == fdh_hash(message) mod n. Never raises on
    malformed values; they simply fail to verify."""
    if accreditation.denomination != key.denomination:
        return False
    s = accreditation.signature % key.n
    return pow(s, key.e, key.n) == fdh_hash(message, key.n)


# ---------------------------------------------------------------------------
# Key generation
# ---------------------------------------------------------------------------

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71]


def _is_probable_prime(n: int, rng: Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


def generate_keypair(
    denomination: int,
    modulus_bits: int = TOY_MODULUS_BITS,
    rng: Random | None = None,
    e: int = DEFAULT_PUBLIC_EXPONENT,
) -> DenominationKeyPair:
    """Generate one denomination keypair.

    A seeded `rng` gives reproducible keys for tests and simulations; the
    default draws from the OS entropy pool.
    """
    if denomination <= 0:
        raise BlindSignatureError("denomination must be positive")
    rng = rng if rng is not None else Random(secrets.randbits(256))
    half = modulus_bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(modulus_bits - half, rng)
        if p == q:
            continue
        lam = math.lcm(p - 1, q - 1)
        if math.gcd(e, lam) != 1:
            continue
        n = p * q
        if n.bit_length() != modulus_bits:
            continue
        d = pow(e, -1, lam)
        return DenominationKeyPair(denomination=denomination, n=n, e=e, d=d)


class DenominationKeyset:
    """Exactly one keypair per denomination."""

    def __init__(self, keys: dict[int, DenominationKeyPair]):
        for denomination, key in keys.items():
            if key.denomination != denomination:
                raise BlindSignatureError("keyset denomination mismatch")
        self._keys = dict(sorted(keys.items()))

    @classmethod
    def generate(
        cls,
        denominations=DEFAULT_DENOMINATIONS,
        modulus_bits: int = TOY_MODULUS_BITS,
        rng: Random | None = None,
    ) -> "DenominationKeyset":
        return cls({d: generate_keypair(d, modulus_bits, rng) for d in denominations})

    @property
    def denominations(self) -> tuple[int, ...]:
        return tuple(self._keys)

    def private(self, denomination: int) -> DenominationKeyPair:
        try:
            return self._keys[denomination]
        except KeyError:
            raise BlindSignatureError(f"no key for denomination {denomination}") from None

    def public(self, denomination: int) -> DenominationPublicKey:
        return self.private(denomination).public

    def public_map(self) -> dict[int, DenominationPublicKey]:
        return {d: k.public for d, k in self._keys.items()}

    def to_wire(self) -> list[dict]:
        return [key.to_wire() for key in self._keys.values()]

    @classmethod
    def from_wire(cls, wire: list[dict]) -> "DenominationKeyset":
        keys = [DenominationKeyPair.from_wire(item) for item in wire]
        return cls({key.denomination: key for key in keys})

    def export_bytes(self) -> bytes:
        return canonical_json(self.to_wire())


def public_key_map(wire: list[dict]) -> dict[int, DenominationPublicKey]:
    """Parse the published key list into a lookup by denomination."""
    keys = [DenominationPublicKey.from_wire(item) for item in wire]
    return {key.denomination: key for key in keys}
