"""Batch tree and inclusion paths.

The oracle is a from-scratch recursive construction (promote the odd
node up unchanged, prefix 0x00 for leaves and 0x01 for pairs) plus
hand-computed digests for the smallest shapes.
"""

import hashlib
from random import Random

import pytest

from reliefpay.merkle import (
    LEAF_PREFIX,
    NODE_PREFIX,
    MerkleError,
    MerkleTree,
    PathStep,
    leaf_hash,
    node_hash,
    path_from_wire,
    path_to_wire,
    verify_path,
)


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def oracle_root(leaves: list[bytes]) -> bytes:
    """Recursive reference: hash leaves, then fold levels, promoting a
    trailing odd node unchanged."""

    def fold(nodes: list[bytes]) -> bytes:
        if len(nodes) == 1:
            return nodes[0]
        nxt = []
        for i in range(0, len(nodes) - 1, 2):
            nxt.append(hashlib.sha256(b"\x01" + nodes[i] + nodes[i + 1]).digest())
        if len(nodes) % 2:
            nxt.append(nodes[-1])
        return fold(nxt)

    return fold([hashlib.sha256(b"\x00" + leaf).digest() for leaf in leaves])


def oracle_path(leaves: list[bytes], index: int) -> list[tuple[bytes, str]]:
    """Sibling list for one leaf, recursively, as (digest, side) pairs
    where side says which side the sibling sits on."""
    steps = []
    nodes = [hashlib.sha256(b"\x00" + leaf).digest() for leaf in leaves]
    while len(nodes) > 1:
        nxt = []
        for i in range(0, len(nodes) - 1, 2):
            nxt.append(hashlib.sha256(b"\x01" + nodes[i] + nodes[i + 1]).digest())
        if len(nodes) % 2:
            nxt.append(nodes[-1])
        if index % 2 == 0 and index + 1 < len(nodes):
            steps.append((nodes[index + 1], "r"))
        elif index % 2 == 1:
            steps.append((nodes[index - 1], "l"))
        # promoted odd node: no step this level
        index //= 2
        nodes = nxt
    return steps


# ---------------------------------------------------------------------------
# Hand-computed smallest shapes
# ---------------------------------------------------------------------------


def test_single_leaf_root_is_prefixed_leaf_hash():
    data = b"only"
    expected = hashlib.sha256(b"\x00" + data).digest()
    tree = MerkleTree([data])
    assert tree.root == expected
    assert tree.path(0) == ()
    assert verify_path(data, 0, (), expected)


def test_two_leaf_root_by_hand():
    a, b = b"alpha", b"beta"
    ha = hashlib.sha256(b"\x00" + a).digest()
    hb = hashlib.sha256(b"\x00" + b).digest()
    expected = hashlib.sha256(b"\x01" + ha + hb).digest()
    tree = MerkleTree([a, b])
    assert tree.root == expected
    assert tree.path(0) == (PathStep(sibling=hb, side="r"),)
    assert tree.path(1) == (PathStep(sibling=ha, side="l"),)


def test_three_leaf_promotes_the_odd_node():
    a, b, c = b"a", b"b", b"c"
    ha, hb, hc = (hashlib.sha256(b"\x00" + x).digest() for x in (a, b, c))
    hab = hashlib.sha256(b"\x01" + ha + hb).digest()
    expected = hashlib.sha256(b"\x01" + hab + hc).digest()
    tree = MerkleTree([a, b, c])
    assert tree.root == expected
    # c's path skips the level where it rode up unchanged
    assert tree.path(2) == (PathStep(sibling=hab, side="l"),)
    assert len(tree.path(0)) == 2


def test_five_leaf_shape_against_oracle():
    leaves = [bytes([i]) * 8 for i in range(5)]
    tree = MerkleTree(leaves)
    assert tree.root == oracle_root(leaves)
    # index 4 is promoted twice, so its path has exactly one step
    assert [len(tree.path(i)) for i in range(5)] == [3, 3, 3, 3, 1]


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


def test_roots_and_paths_match_oracle_for_all_small_sizes():
    rng = Random(5)
    for size in range(1, 33):
        leaves = [rng.randbytes(rng.randrange(1, 40)) for _ in range(size)]
        tree = MerkleTree(leaves)
        assert tree.root == oracle_root(leaves), size
        assert tree.size == size
        for index in range(size):
            expected = oracle_path(leaves, index)
            got = [(s.sibling, s.side) for s in tree.path(index)]
            assert got == expected, (size, index)
            assert verify_path(leaves[index], index, tree.path(index), tree.root)


def test_wrong_leaf_index_or_root_fails():
    rng = Random(6)
    leaves = [rng.randbytes(16) for _ in range(7)]
    tree = MerkleTree(leaves)
    path = tree.path(3)
    assert verify_path(leaves[3], 3, path, tree.root)
    assert not verify_path(leaves[2], 3, path, tree.root)
    assert not verify_path(leaves[3], 2, path, tree.root)
    assert not verify_path(leaves[3], 3, path, oracle_root(leaves[:6]))


def test_single_bit_corruption_always_detected():
    rng = Random(7)
    leaves = [rng.randbytes(24) for _ in range(8)]
    tree = MerkleTree(leaves)
    index = 5
    path = tree.path(index)
    for step_i, step in enumerate(path):
        for bit in range(len(step.sibling) * 8):
            corrupted = bytearray(step.sibling)
            corrupted[bit // 8] ^= 1 << (bit % 8)
            bad = list(path)
            bad[step_i] = PathStep(sibling=bytes(corrupted), side=step.side)
            assert not verify_path(leaves[index], index, tuple(bad), tree.root)
        flipped = PathStep(sibling=step.sibling, side="l" if step.side == "r" else "r")
        bad = list(path)
        bad[step_i] = flipped
        assert not verify_path(leaves[index], index, tuple(bad), tree.root)


def test_prefixes_separate_leaf_and_node_domains():
    # A node digest reused as a leaf must not verify: the 0x00/0x01 split
    # is what blocks second-preimage splicing.
    assert LEAF_PREFIX != NODE_PREFIX
    a, b = b"x", b"y"
    inner = node_hash(leaf_hash(a), leaf_hash(b))
    tree = MerkleTree([a, b])
    assert tree.root == inner
    assert not verify_path(leaf_hash(a) + leaf_hash(b), 0, (), tree.root)


def test_empty_tree_and_bad_indices_rejected():
    with pytest.raises(MerkleError):
        MerkleTree([])
    tree = MerkleTree([b"z"])
    with pytest.raises(MerkleError):
        tree.path(1)
    with pytest.raises(MerkleError):
        tree.path(-1)


def test_path_wire_roundtrip():
    rng = Random(8)
    leaves = [rng.randbytes(16) for _ in range(6)]
    tree = MerkleTree(leaves)
    for index in range(6):
        path = tree.path(index)
        wire = path_to_wire(path)
        assert path_from_wire(wire) == path
        assert all(set(step) == {"side", "sibling"} for step in wire)
