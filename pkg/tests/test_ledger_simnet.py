"""Replicated ledger under a deterministic simulated network.

The cluster shape used throughout is four members with quorum three, so
one crash leaves progress possible and two crashes must stall the ledger
without ever splitting it.
"""

from pathlib import Path
from random import Random

import pytest

from reliefpay.blindsig import blind, sign_blinded, unblind
from reliefpay.checkpoints import Checkpoint, LedgerConfig, checkpoint_signing_bytes
from reliefpay.encoding import ZERO_DIGEST, b64u, digest
from reliefpay.history import SubmittedTransfer
from reliefpay.identity import ROLE_ISSUER, ROLE_RELAY, ROLE_TOKEN, ROLE_VENDOR, Identity
from reliefpay.ledger import Member
from reliefpay.simnet import CrashPlan, SimNet
from reliefpay.tokens import build_transfer, sign_certificate, verify_pop, Token
from reliefpay.tokens import accreditation_message
from tests.conftest import BASE_TIME, DAY

TESTDATA = Path(__file__).parent / "testdata"
GOLDEN_TRACE = TESTDATA / "simnet_trace_seed1.txt"


class Cluster:
    """Four-member ledger plus everything needed to mint spendable tokens."""

    def __init__(self, toy_keyset, seed, n=4, quorum=3, **member_kwargs):
        self.rng = Random(seed ^ 0x5EED)
        self.keyset = toy_keyset
        self.issuer = Identity.generate_seeded(ROLE_ISSUER, self.rng)
        self.identities = [
            Identity.generate_seeded(ROLE_RELAY, self.rng) for _ in range(n)
        ]
        collective = Identity.generate_seeded(ROLE_RELAY, self.rng)
        self.config = LedgerConfig(
            members=tuple(i.public.key for i in self.identities),
            quorum=quorum,
            collective_id=collective.public.key,
        )
        denom_keys = toy_keyset.public_map()
        self.members = [
            Member(ident, self.config, self.issuer.public.key, denom_keys, **member_kwargs)
            for ident in self.identities
        ]

    def make_spend(self, denomination=1000):
        ident = Identity.generate_seeded(ROLE_TOKEN, self.rng)
        key = self.keyset.private(denomination)
        message = accreditation_message(ident.public.key, self.config.collective_id)
        blinded, factor = blind(message, key.public, self.rng)
        acc = unblind(sign_blinded(blinded.value, key), factor, key.public)
        token = Token(
            token_pub=ident.public.key,
            relay_id=self.config.collective_id,
            denomination=denomination,
            accreditation=acc,
        )
        vendor = Identity.generate_seeded(ROLE_VENDOR, self.rng)
        cert = sign_certificate(
            self.issuer, vendor.public.key, "V", "reg", "general",
            True, BASE_TIME - DAY, BASE_TIME + 30 * DAY,
        )
        record = build_transfer(token, cert, ident, BASE_TIME, self.issuer.public.key)
        return SubmittedTransfer(token=token, record=record, certs=(cert,))


def run_scenario(toy_keyset, seed, crashes=None, drop_rate=0.0, spends=6,
                 until_ms=30_000, submit_spread=200, avoid=()):
    """Submissions go to random members, except those in `avoid`: a client
    whose relay is down walks away and tries another one."""
    cluster = Cluster(toy_keyset, seed)
    net = SimNet(cluster.members, seed=seed, drop_rate=drop_rate, crashes=crashes)
    schedule_rng = Random(seed * 1000 + 7)
    targets = [i for i in range(len(cluster.members)) if i not in avoid]
    subs = []
    for i in range(spends):
        sub = cluster.make_spend()
        subs.append(sub)
        target = schedule_rng.choice(targets)
        at = schedule_rng.randrange(submit_spread)
        net.submit(target, sub, at)
    net.run(until_ms)
    return cluster, net, subs


def assert_converged(cluster, members=None):
    """Every live member agrees on every finalized height and root."""
    members = members if members is not None else cluster.members
    heights = {m.height for m in members}
    assert len(heights) == 1, f"diverged heights {heights}"
    digests = {m.last_digest for m in members}
    assert len(digests) == 1, "diverged tips"
    reference = members[0]
    for other in members[1:]:
        assert len(other.finalized_entries) == len(reference.finalized_entries)
        for (cp_a, subs_a), (cp_b, subs_b) in zip(
            reference.finalized_entries, other.finalized_entries
        ):
            assert cp_a.digest() == cp_b.digest()
            assert cp_a.root == cp_b.root
            assert [s.record.digest() for s in subs_a] == [
                s.record.digest() for s in subs_b
            ]


def assert_no_conflicting_roots(*member_sets):
    """Across every member ever observed, one root per height."""
    roots = {}
    for members in member_sets:
        for m in members:
            for cp, _ in m.finalized_entries:
                seen = roots.setdefault(cp.height, cp.root)
                assert seen == cp.root, f"height {cp.height} split"


# ---------------------------------------------------------------------------
# Healthy cluster
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(1, 11))
def test_healthy_cluster_finalizes_everything(toy_keyset, seed):
    cluster, net, subs = run_scenario(toy_keyset, seed)
    assert_converged(cluster)
    member = cluster.members[0]
    assert member.height >= 1
    for sub in subs:
        status = member.record_status(sub.record.digest())
        assert status["status"] == "finalized", status
    assert_no_conflicting_roots(cluster.members)
    for m in cluster.members:
        assert m.equivocation_alarm() is None


def test_every_member_serves_verifiable_proofs(toy_keyset):
    cluster, net, subs = run_scenario(toy_keyset, seed=3)
    for sub in subs:
        for member in cluster.members:
            pop = member.proof_for(sub.record.digest())
            assert pop is not None
            assert pop.record == sub.record
            assert verify_pop(pop, cluster.config)


def test_checkpoints_form_a_hash_linked_chain(toy_keyset):
    cluster, net, subs = run_scenario(toy_keyset, seed=4, spends=10)
    member = cluster.members[0]
    prev = None
    for height, (cp, batch) in enumerate(member.finalized_entries):
        assert cp.height == height
        assert len(batch) >= 1
        if prev is None:
            assert cp.prev_checkpoint == ZERO_DIGEST
        else:
            assert cp.prev_checkpoint == prev.digest()
        assert cp.has_quorum(cluster.config)
        prev = cp
    assert member.latest_checkpoint().digest() == prev.digest()


def test_duplicate_submission_to_two_members_finalizes_once(toy_keyset):
    cluster = Cluster(toy_keyset, seed=5)
    net = SimNet(cluster.members, seed=5)
    sub = cluster.make_spend()
    net.submit(0, sub, 0)
    net.submit(2, sub, 10)
    net.run(20_000)
    assert_converged(cluster)
    total = sum(
        sum(1 for s in batch if s.record.digest() == sub.record.digest())
        for _, batch in cluster.members[0].finalized_entries
    )
    assert total == 1


def test_double_spend_race_resolves_to_one_winner(toy_keyset):
    for seed in range(1, 8):
        cluster = Cluster(toy_keyset, seed=seed)
        ident = Identity.generate_seeded(ROLE_TOKEN, cluster.rng)
        key = cluster.keyset.private(1000)
        message = accreditation_message(ident.public.key, cluster.config.collective_id)
        blinded, factor = blind(message, key.public, cluster.rng)
        acc = unblind(sign_blinded(blinded.value, key), factor, key.public)
        token = Token(
            token_pub=ident.public.key,
            relay_id=cluster.config.collective_id,
            denomination=1000,
            accreditation=acc,
        )
        competing = []
        for name in ("A", "B"):
            vendor = Identity.generate_seeded(ROLE_VENDOR, cluster.rng)
            cert = sign_certificate(
                cluster.issuer, vendor.public.key, name, "reg", "general",
                True, BASE_TIME - DAY, BASE_TIME + 30 * DAY,
            )
            record = build_transfer(token, cert, ident, BASE_TIME, cluster.issuer.public.key)
            competing.append(SubmittedTransfer(token=token, record=record, certs=(cert,)))
        net = SimNet(cluster.members, seed=seed)
        order_rng = Random(seed)
        entry = [(0, seed % 4), (1, (seed + 2) % 4)]
        order_rng.shuffle(entry)
        for at, (which, target) in enumerate(entry):
            net.submit(target, competing[which], at)
        net.run(30_000)
        assert_converged(cluster)
        # Each client polls the relay it submitted to; exactly one spend
        # finalizes and the other is refused as a stale double-spend.
        statuses = {}
        for which, target in entry:
            statuses[which] = cluster.members[target].record_status(
                competing[which].record.digest()
            )
        kinds = sorted(s["status"] for s in statuses.values())
        assert kinds == ["finalized", "rejected"], (seed, statuses)
        loser = next(s for s in statuses.values() if s["status"] == "rejected")
        assert loser["code"] == "stale-prev"
        # The finalized chain has exactly one hop for this token.
        winner_member = cluster.members[0]
        assert winner_member.history.token_status(token.token_pub)["hops"] == 1


# ---------------------------------------------------------------------------
# Crashes
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(1, 21))
def test_one_crash_leaves_progress(toy_keyset, seed):
    victim = seed % 4
    cluster, net, subs = run_scenario(
        toy_keyset, seed, crashes=[CrashPlan(member_index=victim, at_ms=40)],
        spends=5, avoid=(victim,),
    )
    live = [m for i, m in enumerate(cluster.members) if i != victim]
    assert_converged(cluster, live)
    reference = live[0]
    for sub in subs:
        status = reference.record_status(sub.record.digest())
        assert status["status"] == "finalized", (seed, status)
    assert_no_conflicting_roots(cluster.members)
    for m in live:
        assert m.equivocation_alarm() is None


def test_two_crashes_stall_without_splitting(toy_keyset):
    for seed in range(1, 21):
        cluster = Cluster(toy_keyset, seed=seed)
        crashes = [
            CrashPlan(member_index=1, at_ms=30),
            CrashPlan(member_index=2, at_ms=30),
        ]
        net = SimNet(cluster.members, seed=seed, crashes=crashes)
        early = cluster.make_spend()
        late = cluster.make_spend()
        net.submit(0, early, 0)
        net.run(25)  # let the early spend enter mempools before the crash
        heights_before = [m.height for m in cluster.members]
        net.submit(0, late, 100)
        net.run(30_000)
        live = [cluster.members[0], cluster.members[3]]
        # No new checkpoint can form on two live members with quorum three.
        for m in live:
            assert m.height == max(heights_before), seed
        assert_no_conflicting_roots(cluster.members)


def test_crashed_member_catches_up_after_recovery(toy_keyset):
    cluster = Cluster(toy_keyset, seed=9)
    crashes = [CrashPlan(member_index=2, at_ms=40, recover_ms=12_000)]
    net = SimNet(cluster.members, seed=9, crashes=crashes)
    subs = [cluster.make_spend() for _ in range(4)]
    for i, sub in enumerate(subs):
        net.submit(i % 2, sub, 10 * i)
    net.run(40_000)
    assert_converged(cluster)  # including the recovered member
    recovered = cluster.members[2]
    for sub in subs:
        assert recovered.record_status(sub.record.digest())["status"] == "finalized"
        pop = recovered.proof_for(sub.record.digest())
        assert pop is not None and verify_pop(pop, cluster.config)


def test_leader_crash_hands_height_to_next_member(toy_keyset):
    cluster = Cluster(toy_keyset, seed=11)
    # member 0 leads heights 0..3 at round 0; crash it before anything lands
    net = SimNet(
        cluster.members, seed=11,
        crashes=[CrashPlan(member_index=0, at_ms=5)],
    )
    sub = cluster.make_spend()
    net.submit(1, sub, 10)
    net.run(30_000)
    live = cluster.members[1:]
    assert_converged(cluster, live)
    reference = live[0]
    assert reference.record_status(sub.record.digest())["status"] == "finalized"
    cp0 = reference.finalized_entries[0][0]
    assert cp0.leader != cluster.members[0].key


def test_lossy_network_still_converges(toy_keyset):
    cluster, net, subs = run_scenario(
        toy_keyset, seed=13, drop_rate=0.10, spends=5, until_ms=120_000
    )
    assert_converged(cluster)
    member = cluster.members[0]
    for sub in subs:
        assert member.record_status(sub.record.digest())["status"] == "finalized"
    assert_no_conflicting_roots(cluster.members)


# ---------------------------------------------------------------------------
# Bad proposals and equivocation
# ---------------------------------------------------------------------------


def test_poisoned_batch_is_rejected_and_good_records_survive(toy_keyset):
    cluster = Cluster(toy_keyset, seed=15)
    leader = cluster.members[0]

    good = cluster.make_spend()
    bad = cluster.make_spend()
    forged = SubmittedTransfer(
        token=bad.token,
        record=bad.record.__class__(
            token_id=bad.record.token_id,
            prev=bad.record.prev,
            recipient_id=bad.record.recipient_id,
            hop=bad.record.hop,
            timestamp=bad.record.timestamp,
            holder_sig=bytes(64),
        ),
        certs=bad.certs,
    )
    net = SimNet(cluster.members, seed=15)
    net.submit(0, good, 0)
    # Slip the forged record straight into the leader's mempool, bypassing
    # its own validation, to model a buggy or dishonest proposer.
    leader.mempool[forged.record.digest()] = forged
    net.run(30_000)

    followers = cluster.members[1:]
    assert_converged(cluster, followers)
    for m in followers:
        assert m.record_status(good.record.digest())["status"] == "finalized"
        assert m.record_status(forged.record.digest())["status"] == "unknown"
    # The proposer learned the rejection code from its followers.
    assert leader.rejected.get(forged.record.digest()) == "invalid-record"
    assert leader.record_status(forged.record.digest()) == {
        "status": "rejected",
        "code": "invalid-record",
    }
    assert leader.record_status(good.record.digest())["status"] == "finalized"
    assert_no_conflicting_roots(cluster.members)


def test_forged_conflicting_checkpoint_raises_alarm(toy_keyset):
    cluster, net, subs = run_scenario(toy_keyset, seed=17, spends=2)
    member = cluster.members[3]
    assert member.equivocation_alarm() is None
    finalized_cp = member.finalized_entries[0][0]
    fake_root = digest({"forged": True})
    message = checkpoint_signing_bytes(
        finalized_cp.height, fake_root, finalized_cp.prev_checkpoint, finalized_cp.leader
    )
    signers = cluster.identities[:3]
    forged = Checkpoint(
        height=finalized_cp.height,
        root=fake_root,
        prev_checkpoint=finalized_cp.prev_checkpoint,
        leader=finalized_cp.leader,
        signatures=tuple((s.public.key, s.sign(message)) for s in signers),
    )
    member.on_message({"kind": "checkpoint", "checkpoint": forged.to_wire(), "subs": []}, 0)
    alarm = member.equivocation_alarm()
    assert alarm is not None
    assert alarm.height == finalized_cp.height
    overlap = set(alarm.double_signers)
    honest_signers = member.finalized_entries[0][0].valid_signers(cluster.config)
    assert overlap == honest_signers & {s.public.key for s in signers}
    assert len(overlap) >= 2 * cluster.config.quorum - cluster.config.n


# ---------------------------------------------------------------------------
# Determinism
# ---------------------------------------------------------------------------


def golden_run(toy_keyset):
    cluster, net, subs = run_scenario(
        toy_keyset, seed=1,
        crashes=[CrashPlan(member_index=3, at_ms=60, recover_ms=8_000)],
        spends=4, until_ms=20_000,
    )
    return net.trace_bytes()


def test_trace_is_a_pure_function_of_seed(toy_keyset):
    first = golden_run(toy_keyset)
    second = golden_run(toy_keyset)
    assert first == second
    assert len(first) > 500


def test_trace_matches_frozen_golden_file(toy_keyset):
    trace = golden_run(toy_keyset)
    if not GOLDEN_TRACE.exists():
        GOLDEN_TRACE.write_bytes(trace)
    assert trace == GOLDEN_TRACE.read_bytes()


def test_different_seeds_differ(toy_keyset):
    _, net_a, _ = run_scenario(toy_keyset, seed=1, spends=3, until_ms=5_000)
    _, net_b, _ = run_scenario(toy_keyset, seed=2, spends=3, until_ms=5_000)
    assert net_a.trace_bytes() != net_b.trace_bytes()
