"""Quorum-signed checkpoints binding batch roots into a linked history.

A checkpoint commits one batch's Merkle root at one height. Ledger
members sign the core fields (height, root, prev_checkpoint, leader);
at least q distinct member signatures make it final. The checkpoint's
digest covers only the core, so two copies carrying different signature
subsets still name the same checkpoint for prev-linkage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoding import DIGEST_SIZE, ZERO_DIGEST, b64u, canonical_json, digest, unb64u
from .identity import KEY_SIZE, ROLE_RELAY, PublicIdentity

CHECKPOINT_TYPE = "checkpoint"


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class LedgerConfig:
    """Membership of the relay collective.

    `members` is the ordered list of member relay public keys (raw bytes);
    `quorum` must satisfy n/2 < q <= n. `collective_id` is the public key
    tokens bind to as their relay: the single member's key when n=1, a
    dedicated collective key otherwise. `epoch_length` is how many heights
    each leader serves before rotation.
    """

    members: tuple[bytes, ...]
    quorum: int
    collective_id: bytes
    epoch_length: int = 4

    def __post_init__(self) -> None:
        n = len(self.members)
        if n < 1:
            raise CheckpointError("at least one member required")
        if len(set(self.members)) != n:
            raise CheckpointError("duplicate member keys")
        if not (n // 2 < self.quorum <= n):
            raise CheckpointError(f"quorum {self.quorum} invalid for {n} members")
        if 2 * self.quorum <= n:
            raise CheckpointError("quorum must satisfy 2q > n")
        for key in self.members:
            if len(key) != KEY_SIZE:
                raise CheckpointError("member key must be 32 bytes")
        if len(self.collective_id) != KEY_SIZE:
            raise CheckpointError("collective id must be 32 bytes")
        if self.epoch_length < 1:
            raise CheckpointError("epoch_length must be positive")

    @property
    def n(self) -> int:
        return len(self.members)

    def leader_at(self, height: int, round_: int = 0) -> bytes:
        """Deterministic proposer rotation. Round 0 is the epoch leader;
        each timeout round hands the height to the next member so a crashed
        leader cannot stall the ledger."""
        return self.members[((height // self.epoch_length) + round_) % self.n]

    def member_index(self, key: bytes) -> int:
        try:
            return self.members.index(key)
        except ValueError:
            raise CheckpointError("not a member") from None

    def to_wire(self) -> dict:
        return {
            "collective_id": b64u(self.collective_id),
            "epoch_length": self.epoch_length,
            "members": [b64u(m) for m in self.members],
            "quorum": self.quorum,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "LedgerConfig":
        return cls(
            members=tuple(unb64u(m, KEY_SIZE) for m in wire["members"]),
            quorum=int(wire["quorum"]),
            collective_id=unb64u(wire["collective_id"], KEY_SIZE),
            epoch_length=int(wire.get("epoch_length", 4)),
        )

    def export_bytes(self) -> bytes:
        return canonical_json(self.to_wire())


def checkpoint_core(height: int, root: bytes, prev_checkpoint: bytes, leader: bytes) -> dict:
    return {
        "height": height,
        "leader": b64u(leader),
        "prev_checkpoint": b64u(prev_checkpoint),
        "root": b64u(root),
        "type": CHECKPOINT_TYPE,
    }


def checkpoint_signing_bytes(
    height: int, root: bytes, prev_checkpoint: bytes, leader: bytes
) -> bytes:
    return canonical_json(checkpoint_core(height, root, prev_checkpoint, leader))


@dataclass(frozen=True)
class Checkpoint:
    height: int
    root: bytes
    prev_checkpoint: bytes
    leader: bytes
    signatures: tuple[tuple[bytes, bytes], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.height < 0:
            raise CheckpointError("height must be non-negative")
        if len(self.root) != DIGEST_SIZE or len(self.prev_checkpoint) != DIGEST_SIZE:
            raise CheckpointError("root and prev_checkpoint must be 32 bytes")
        ordered = tuple(sorted(self.signatures, key=lambda pair: pair[0]))
        object.__setattr__(self, "signatures", ordered)

    def signing_bytes(self) -> bytes:
        return checkpoint_signing_bytes(self.height, self.root, self.prev_checkpoint, self.leader)

    def digest(self) -> bytes:
        """Identity of this checkpoint: digest of the core fields only.
        Signature subsets vary by observer and must not change identity."""
        return digest(checkpoint_core(self.height, self.root, self.prev_checkpoint, self.leader))

    def with_signatures(self, signatures) -> "Checkpoint":
        return Checkpoint(
            height=self.height,
            root=self.root,
            prev_checkpoint=self.prev_checkpoint,
            leader=self.leader,
            signatures=tuple(signatures),
        )

    def valid_signers(self, config: LedgerConfig) -> set[bytes]:
        """Distinct members whose signature over the core verifies."""
        message = self.signing_bytes()
        members = set(config.members)
        good: set[bytes] = set()
        for member_key, signature in self.signatures:
            if member_key not in members or member_key in good:
                continue
            ident = PublicIdentity(key=member_key, role=ROLE_RELAY)
            if ident.verify(signature, message):
                good.add(member_key)
        return good

    def has_quorum(self, config: LedgerConfig) -> bool:
        return len(self.valid_signers(config)) >= config.quorum

    def to_wire(self) -> dict:
        wire = checkpoint_core(self.height, self.root, self.prev_checkpoint, self.leader)
        wire["signatures"] = [
            {"member": b64u(member), "signature": b64u(sig)}
            for member, sig in self.signatures
        ]
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "Checkpoint":
        if wire.get("type") != CHECKPOINT_TYPE:
            raise CheckpointError("not a checkpoint")
        return cls(
            height=int(wire["height"]),
            root=unb64u(wire["root"], DIGEST_SIZE),
            prev_checkpoint=unb64u(wire["prev_checkpoint"], DIGEST_SIZE),
            leader=unb64u(wire["leader"], KEY_SIZE),
            signatures=tuple(
                (unb64u(item["member"], KEY_SIZE), unb64u(item["signature"], 64))
                for item in wire["signatures"]
            ),
        )


def verify_checkpoint(
    cp: Checkpoint, config: LedgerConfig, prev: Checkpoint | None = None
) -> bool:
    """Issuer-side acceptance test: quorum of valid distinct member
    signatures plus correct linkage to the previously accepted checkpoint
    (or the genesis convention: height 0, prev = 32 zero bytes)."""
    if not cp.has_quorum(config):
        return False
    if prev is None:
        return cp.height == 0 and cp.prev_checkpoint == ZERO_DIGEST
    return cp.height == prev.height + 1 and cp.prev_checkpoint == prev.digest()


@dataclass(frozen=True)
class EquivocationAlarm:
    height: int
    roots: tuple[bytes, bytes]
    double_signers: tuple[bytes, ...]

    def to_wire(self) -> dict:
        return {
            "double_signers": [b64u(k) for k in self.double_signers],
            "height": self.height,
            "roots": [b64u(r) for r in self.roots],
        }


def detect_equivocation(
    observed: list[Checkpoint], config: LedgerConfig
) -> EquivocationAlarm | None:
    """Scan observed checkpoints for two quorum-valid commitments to
    different roots at the same height. Quorum intersection guarantees at
    least 2q - n members signed both; the alarm names them."""
    by_height: dict[int, dict[bytes, Checkpoint]] = {}
    for cp in observed:
        if not cp.has_quorum(config):
            continue
        variants = by_height.setdefault(cp.height, {})
        existing = variants.get(cp.root)
        if existing is None:
            variants[cp.root] = cp
        for other_root, other in variants.items():
            if other_root != cp.root:
                overlap = sorted(
                    cp.valid_signers(config) & other.valid_signers(config)
                )
                return EquivocationAlarm(
                    height=cp.height,
                    roots=tuple(sorted((cp.root, other_root))),
                    double_signers=tuple(overlap),
                )
    return None
