"""Merkle batch trees over canonical record digests.

Leaves and interior nodes hash under distinct prefixes (0x00 for leaves,
0x01 for interior nodes) so no leaf value can masquerade as a subtree.
A level with an odd node count promotes the last node unchanged rather
than duplicating it, so no leaf is ever counted twice.

An audit path lists sibling hashes from the leaf up, each tagged with the
side ('l' or 'r') the sibling sits on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .encoding import DIGEST_SIZE, b64u, unb64u

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


class MerkleError(Exception):
    pass


def leaf_hash(leaf_data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + leaf_data).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


@dataclass(frozen=True)
class PathStep:
    """One rung of an audit path: the sibling hash and which side it is on
    ('l' means the sibling is the left input of the parent)."""

    sibling: bytes
    side: str

    def __post_init__(self) -> None:
        if self.side not in ("l", "r"):
            raise MerkleError(f"bad path side {self.side!r}")
        if len(self.sibling) != DIGEST_SIZE:
            raise MerkleError("sibling hash must be 32 bytes")

    def to_wire(self) -> dict:
        return {"sibling": b64u(self.sibling), "side": self.side}

    @classmethod
    def from_wire(cls, wire: dict) -> "PathStep":
        return cls(sibling=unb64u(wire["sibling"], DIGEST_SIZE), side=str(wire["side"]))


class MerkleTree:
    """Tree over an ordered batch of leaf byte strings (record digests)."""

    def __init__(self, leaves: list[bytes]):
        if not leaves:
            raise MerkleError("empty batch has no tree")
        self._leaves = list(leaves)
        levels = [[leaf_hash(leaf) for leaf in leaves]]
        while len(levels[-1]) > 1:
            prev = levels[-1]
            level = []
            for i in range(0, len(prev) - 1, 2):
                level.append(node_hash(prev[i], prev[i + 1]))
            if len(prev) % 2 == 1:
                level.append(prev[-1])
            levels.append(level)
        self._levels = levels

    @property
    def root(self) -> bytes:
        return self._levels[-1][0]

    @property
    def size(self) -> int:
        return len(self._leaves)

    def path(self, index: int) -> tuple[PathStep, ...]:
        """Audit path for the leaf at `index`, ordered leaf to root."""
        if not 0 <= index < len(self._leaves):
            raise MerkleError(f"leaf index {index} out of range")
        steps = []
        pos = index
        for level in self._levels[:-1]:
            if pos % 2 == 0:
                if pos + 1 < len(level):
                    steps.append(PathStep(sibling=level[pos + 1], side="r"))
                # Promoted odd node: no sibling at this level.
            else:
                steps.append(PathStep(sibling=level[pos - 1], side="l"))
            pos //= 2
        return tuple(steps)


def verify_path(leaf_data: bytes, index: int, path: tuple[PathStep, ...], root: bytes) -> bool:
    """Recompute the root from one leaf and its audit path.

    The fold is driven by the side tags; the claimed index must stay
    parity-consistent with them. A promoted odd node changes neither
    value nor hashing order, so levels without a step are exactly the
    halvings taken while waiting for the next left sibling, and a path
    that ends anywhere but position zero claims a slot the tree above
    never merged.
    """
    if index < 0:
        return False
    current = leaf_hash(leaf_data)
    pos = index
    for step in path:
        if step.side == "l":
            while pos % 2 == 0:
                if pos == 0:
                    return False  # leftmost node never has a left sibling
                pos //= 2  # promoted unchanged through this level
            current = node_hash(step.sibling, current)
        else:
            if pos % 2 == 1:
                return False  # an odd position's sibling sits on the left
            current = node_hash(current, step.sibling)
        pos //= 2
    return pos == 0 and current == root


def path_to_wire(path: tuple[PathStep, ...]) -> list[dict]:
    return [step.to_wire() for step in path]


def path_from_wire(wire: list[dict]) -> tuple[PathStep, ...]:
    return tuple(PathStep.from_wire(item) for item in wire)
