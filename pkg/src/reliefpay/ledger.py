"""Replicated relay ledger: leader-rotated batch agreement with
quorum-signed checkpoints.

Each member runs one state machine over an ordered inbox. Heights are
decided one at a time with a single-decree protocol: the epoch leader
proposes its batch directly at round 0; if a height stalls (crashed or
partitioned proposer), a timeout advances the round and the next member
in rotation takes over, first collecting promises from a quorum so any
value that might already have won stays the only candidate. A vote is a
signature over the checkpoint core, so the q votes that decide a height
are literally the checkpoint's signature set.

Members gossip every accepted submission to each other, validate every
proposed record independently, and recompute the batch root before
voting, so no single relay's version of history has to be trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .blindsig import DenominationPublicKey
from .checkpoints import (
    Checkpoint,
    EquivocationAlarm,
    LedgerConfig,
    checkpoint_core,
    checkpoint_signing_bytes,
    detect_equivocation,
)
from .encoding import DIGEST_SIZE, ZERO_DIGEST, b64u, canonical_json, digest, unb64u
from .history import DUPLICATE, HistoryState, SubmittedTransfer
from .identity import KEY_SIZE, ROLE_RELAY, Identity, PublicIdentity
from .merkle import MerkleTree
from .tokens import ProofOfProvenance

DEFAULT_BATCH_MS = 50
DEFAULT_ROUND_TIMEOUT_MS = 500
DEFAULT_MAX_BATCH = 256


class LedgerError(Exception):
    pass


@dataclass
class MemberOutput:
    """Side effects of one state-machine step: messages to send, timers to
    arm, and checkpoints finalized during the step."""

    sends: list[tuple[bytes, dict]] = field(default_factory=list)
    timers: list[tuple[int, dict]] = field(default_factory=list)
    finalized: list[Checkpoint] = field(default_factory=list)

    def merge(self, other: "MemberOutput") -> None:
        self.sends.extend(other.sends)
        self.timers.extend(other.timers)
        self.finalized.extend(other.finalized)


def _subs_digest(subs: list[SubmittedTransfer]) -> bytes:
    return digest([b64u(s.record.digest()) for s in subs])


def proposal_signing_bytes(
    height: int, round_: int, core: dict, subs: list[SubmittedTransfer]
) -> bytes:
    return canonical_json(
        {
            "core": core,
            "height": height,
            "round": round_,
            "subs": b64u(_subs_digest(subs)),
            "type": "propose",
        }
    )


class Member:
    """One ledger member: finalized history, mempool, and the per-height
    agreement state. Drive it by calling inject_submission / on_message /
    on_timer / on_recover and acting on the returned MemberOutput."""

    def __init__(
        self,
        identity: Identity,
        config: LedgerConfig,
        issuer_pub: bytes,
        denom_keys: dict[int, DenominationPublicKey],
        batch_ms: int = DEFAULT_BATCH_MS,
        round_timeout_ms: int = DEFAULT_ROUND_TIMEOUT_MS,
        max_batch: int = DEFAULT_MAX_BATCH,
    ):
        if identity.public.key not in config.members:
            raise LedgerError("identity is not a ledger member")
        self.identity = identity
        self.key = identity.public.key
        self.config = config
        self.batch_ms = batch_ms
        self.round_timeout_ms = round_timeout_ms
        self.max_batch = max_batch

        self.history = HistoryState(config.collective_id, issuer_pub, denom_keys)
        self.pending_view = self.history.fork()
        self.mempool: dict[bytes, SubmittedTransfer] = {}
        self.rejected: dict[bytes, str] = {}

        self.height = 0
        self.last_digest = ZERO_DIGEST
        self.finalized_entries: list[tuple[Checkpoint, list[SubmittedTransfer]]] = []
        self.finalized_index: dict[bytes, tuple[int, int]] = {}
        self.observed: list[Checkpoint] = []

        self._reset_height_state()
        self._armed_timers: set[tuple] = set()

    # -- height-local agreement state ---------------------------------------

    def _reset_height_state(self) -> None:
        self.round = 0
        self.promised = 0
        self.accepted_round = -1
        self.accepted_core: dict | None = None
        self.accepted_subs: list[SubmittedTransfer] | None = None
        self.my_proposal: tuple[int, dict, list[SubmittedTransfer]] | None = None
        self.votes: dict[bytes, bytes] = {}
        self.preparing: int | None = None
        self.promises: dict[bytes, tuple[int, dict | None, list | None]] = {}
        self.batch_scheduled = False

    @property
    def others(self) -> list[bytes]:
        return [m for m in self.config.members if m != self.key]

    def _broadcast(self, msg: dict) -> list[tuple[bytes, dict]]:
        return [(member, msg) for member in self.others]

    def is_leader(self, round_: int | None = None) -> bool:
        r = self.round if round_ is None else round_
        return self.config.leader_at(self.height, r) == self.key

    # -- submissions ---------------------------------------------------------

    def record_status(self, record_digest: bytes) -> dict:
        if record_digest in self.finalized_index:
            height, leaf = self.finalized_index[record_digest]
            return {"status": "finalized", "height": height, "leaf_index": leaf}
        if record_digest in self.mempool:
            return {"status": "pending"}
        if record_digest in self.rejected:
            return {"status": "rejected", "code": self.rejected[record_digest]}
        return {"status": "unknown"}

    def inject_submission(
        self, sub: SubmittedTransfer, now: int
    ) -> tuple[str | None, MemberOutput]:
        """Local acceptance path for a client-facing relay. Returns the
        rejection code (None = accepted as pending, 'duplicate' = already
        known) plus the side effects to run."""
        out = MemberOutput()
        rdigest = sub.record.digest()
        if rdigest in self.finalized_index or rdigest in self.mempool:
            return DUPLICATE, out
        code = self.pending_view.validate(sub)
        if code == DUPLICATE:
            return DUPLICATE, out
        if code is not None:
            return code, out
        self.pending_view.apply(sub)
        self.mempool[rdigest] = sub
        self.rejected.pop(rdigest, None)
        out.sends.extend(self._broadcast({"kind": "gossip", "sub": sub.to_wire()}))
        self._kick(out)
        return None, out

    def _admit_gossip(self, sub: SubmittedTransfer, out: MemberOutput) -> None:
        rdigest = sub.record.digest()
        if rdigest in self.finalized_index or rdigest in self.mempool:
            return
        if self.pending_view.validate(sub) is not None:
            return
        self.pending_view.apply(sub)
        self.mempool[rdigest] = sub
        self._kick(out)

    # -- timer management ----------------------------------------------------

    def _arm(self, out: MemberOutput, delay: int, token: dict) -> None:
        key = tuple(sorted(token.items()))
        if key in self._armed_timers:
            return
        self._armed_timers.add(key)
        out.timers.append((delay, token))

    def _kick(self, out: MemberOutput) -> None:
        """Make sure the current height is moving: the round-0 leader arms
        its batch timer, everyone arms the takeover timer."""
        if not self.mempool:
            return
        if self.round == 0 and self.is_leader(0) and self.my_proposal is None:
            if not self.batch_scheduled:
                self.batch_scheduled = True
                self._arm(out, self.batch_ms, {"kind": "batch", "height": self.height})
        self._arm(
            out,
            self.round_timeout_ms,
            {"kind": "round", "height": self.height, "round": self.round},
        )

    # -- proposing -----------------------------------------------------------

    def _fresh_value(self) -> tuple[dict, list[SubmittedTransfer]] | None:
        if not self.mempool:
            return None
        subs = list(self.mempool.values())[: self.max_batch]
        root = MerkleTree([s.record.digest() for s in subs]).root
        core = checkpoint_core(self.height, root, self.last_digest, self.key)
        return core, subs

    def _propose(
        self, round_: int, core: dict, subs: list[SubmittedTransfer], out: MemberOutput
    ) -> None:
        self.my_proposal = (round_, core, subs)
        self.votes = {}
        # A proposer is its own first acceptor.
        self.promised = max(self.promised, round_)
        self.accepted_round = round_
        self.accepted_core = core
        self.accepted_subs = subs
        own_sig = self.identity.sign(self._core_bytes(core))
        self.votes[self.key] = own_sig
        if len(self.votes) >= self.config.quorum:
            self._finalize_own(out)
            return
        msg = {
            "kind": "propose",
            "height": self.height,
            "round": round_,
            "core": core,
            "subs": [s.to_wire() for s in subs],
            "proposer": b64u(self.key),
            "sig": b64u(self.identity.sign(proposal_signing_bytes(self.height, round_, core, subs))),
        }
        out.sends.extend(self._broadcast(msg))
        self._arm(
            out,
            self.round_timeout_ms,
            {"kind": "round", "height": self.height, "round": self.round},
        )

    @staticmethod
    def _core_bytes(core: dict) -> bytes:
        return checkpoint_signing_bytes(
            int(core["height"]),
            unb64u(core["root"], DIGEST_SIZE),
            unb64u(core["prev_checkpoint"], DIGEST_SIZE),
            unb64u(core["leader"], KEY_SIZE),
        )

    def _start_prepare(self, round_: int, out: MemberOutput) -> None:
        self.preparing = round_
        self.promises = {
            self.key: (self.accepted_round, self.accepted_core, self.accepted_subs)
        }
        self.promised = max(self.promised, round_)
        if len(self.promises) >= self.config.quorum:
            self._finish_prepare(out)
            return
        out.sends.extend(
            self._broadcast(
                {
                    "kind": "prepare",
                    "height": self.height,
                    "round": round_,
                    "member": b64u(self.key),
                }
            )
        )

    def _finish_prepare(self, out: MemberOutput) -> None:
        round_ = self.preparing
        if round_ is None:
            return
        if self.my_proposal is not None and self.my_proposal[0] >= round_:
            return
        # Adopt the highest-round accepted value that still validates. A
        # reported value that fails validation was never voteable by any
        # honest follower (validation is deterministic over the shared
        # finalized prefix), so skipping it cannot drop a chosen value.
        candidates = sorted(
            (p for p in self.promises.values() if p[1] is not None),
            key=lambda p: p[0],
            reverse=True,
        )
        for _, core, subs in candidates:
            if self._batch_valid(core, subs):
                self._propose(round_, core, list(subs), out)
                return
        fresh = self._fresh_value()
        if fresh is not None:
            self._propose(round_, fresh[0], fresh[1], out)

    def _batch_valid(self, core: dict, subs: list[SubmittedTransfer]) -> bool:
        if not subs:
            return False
        if unb64u(core["prev_checkpoint"], DIGEST_SIZE) != self.last_digest:
            return False
        fork = self.history.fork()
        for sub in subs:
            code = fork.validate_and_apply(sub)
            if code is not None and code != DUPLICATE:
                return False
        return MerkleTree([s.record.digest() for s in subs]).root == unb64u(
            core["root"], DIGEST_SIZE
        )

    # -- finalization ---------------------------------------------------------

    def _finalize_own(self, out: MemberOutput) -> None:
        assert self.my_proposal is not None
        _, core, subs = self.my_proposal
        cp = Checkpoint(
            height=int(core["height"]),
            root=unb64u(core["root"], DIGEST_SIZE),
            prev_checkpoint=unb64u(core["prev_checkpoint"], DIGEST_SIZE),
            leader=unb64u(core["leader"], KEY_SIZE),
            signatures=tuple(self.votes.items()),
        )
        msg = {
            "kind": "checkpoint",
            "checkpoint": cp.to_wire(),
            "subs": [s.to_wire() for s in subs],
        }
        self._apply_checkpoint(cp, subs, out)
        out.sends.extend(self._broadcast(msg))

    def _apply_checkpoint(
        self, cp: Checkpoint, subs: list[SubmittedTransfer], out: MemberOutput
    ) -> None:
        if cp.height != self.height or cp.prev_checkpoint != self.last_digest:
            raise LedgerError("checkpoint does not extend local history")
        if MerkleTree([s.record.digest() for s in subs]).root != cp.root:
            raise LedgerError("checkpoint root does not match its records")
        for leaf, sub in enumerate(subs):
            code = self.history.validate_and_apply(sub)
            if code is not None and code != DUPLICATE:
                raise LedgerError(f"finalized record failed validation: {code}")
            self.finalized_index[sub.record.digest()] = (cp.height, leaf)
            self.rejected.pop(sub.record.digest(), None)
        self.finalized_entries.append((cp, list(subs)))
        self.observed.append(cp)
        self.last_digest = cp.digest()
        self.height += 1
        out.finalized.append(cp)

        # Re-derive the pending view: drop everything the checkpoint covered
        # and anything it made invalid (a conflicting spend that lost the
        # race comes back stale-prev here, exactly like a late client).
        survivors = {
            d: sub for d, sub in self.mempool.items() if d not in self.finalized_index
        }
        self.mempool = {}
        self.pending_view = self.history.fork()
        for rdigest, sub in survivors.items():
            code = self.pending_view.validate(sub)
            if code is None:
                self.pending_view.apply(sub)
                self.mempool[rdigest] = sub
            elif code != DUPLICATE:
                self.rejected[rdigest] = code
        self._reset_height_state()
        self._armed_timers = set()
        self._kick(out)

    # -- inbox ----------------------------------------------------------------

    def on_message(self, msg: dict, now: int) -> MemberOutput:
        out = MemberOutput()
        kind = msg.get("kind")
        if kind == "gossip":
            self._admit_gossip(SubmittedTransfer.from_wire(msg["sub"]), out)
        elif kind == "propose":
            self._on_propose(msg, out)
        elif kind == "vote":
            self._on_vote(msg, out)
        elif kind == "prepare":
            self._on_prepare(msg, out)
        elif kind == "promise":
            self._on_promise(msg, out)
        elif kind == "reject":
            self._on_reject(msg, out)
        elif kind == "checkpoint":
            self._on_checkpoint(msg, out)
        elif kind == "catchup-req":
            self._on_catchup_req(msg, out)
        elif kind == "catchup-resp":
            self._on_catchup_resp(msg, out)
        return out

    def _catchup_entries(self, from_height: int) -> list[dict]:
        return [
            {"checkpoint": cp.to_wire(), "subs": [s.to_wire() for s in subs]}
            for cp, subs in self.finalized_entries[from_height:]
        ]

    def _on_propose(self, msg: dict, out: MemberOutput) -> None:
        height, round_ = int(msg["height"]), int(msg["round"])
        proposer = unb64u(msg["proposer"], KEY_SIZE)
        if height > self.height:
            out.sends.append(
                (proposer, {"kind": "catchup-req", "from_height": self.height, "member": b64u(self.key)})
            )
            return
        if height < self.height:
            out.sends.append(
                (proposer, {"kind": "catchup-resp", "entries": self._catchup_entries(height)})
            )
            return
        if proposer != self.config.leader_at(height, round_):
            return
        core = msg["core"]
        subs = [SubmittedTransfer.from_wire(w) for w in msg["subs"]]
        ident = PublicIdentity(key=proposer, role=ROLE_RELAY)
        if not ident.verify(
            unb64u(msg["sig"], 64), proposal_signing_bytes(height, round_, core, subs)
        ):
            return
        if round_ < self.promised:
            return
        if not subs:
            return
        if unb64u(core["prev_checkpoint"], DIGEST_SIZE) != self.last_digest:
            return

        fork = self.history.fork()
        bad: list[dict] = []
        for sub in subs:
            code = fork.validate_and_apply(sub)
            if code is not None and code != DUPLICATE:
                bad.append({"digest": b64u(sub.record.digest()), "code": code})
        if not bad and MerkleTree([s.record.digest() for s in subs]).root != unb64u(
            core["root"], DIGEST_SIZE
        ):
            bad.append({"digest": b64u(_subs_digest(subs)), "code": "wrong-root"})
        if bad:
            out.sends.append(
                (
                    proposer,
                    {
                        "kind": "reject",
                        "height": height,
                        "round": round_,
                        "member": b64u(self.key),
                        "items": bad,
                    },
                )
            )
            return

        # Accept: this vote is the checkpoint signature.
        self.promised = round_
        self.accepted_round = round_
        self.accepted_core = core
        self.accepted_subs = subs
        out.sends.append(
            (
                proposer,
                {
                    "kind": "vote",
                    "height": height,
                    "round": round_,
                    "member": b64u(self.key),
                    "core_digest": b64u(digest(core)),
                    "sig": b64u(self.identity.sign(self._core_bytes(core))),
                },
            )
        )
        self._arm(
            out,
            self.round_timeout_ms,
            {"kind": "round", "height": self.height, "round": self.round},
        )

    def _on_vote(self, msg: dict, out: MemberOutput) -> None:
        if self.my_proposal is None:
            return
        round_, core, _subs = self.my_proposal
        if int(msg["height"]) != self.height or int(msg["round"]) != round_:
            return
        if unb64u(msg["core_digest"], DIGEST_SIZE) != digest(core):
            return
        member = unb64u(msg["member"], KEY_SIZE)
        if member not in self.config.members:
            return
        sig = unb64u(msg["sig"], 64)
        ident = PublicIdentity(key=member, role=ROLE_RELAY)
        if not ident.verify(sig, self._core_bytes(core)):
            return
        self.votes[member] = sig
        if len(self.votes) >= self.config.quorum:
            self._finalize_own(out)

    def _on_prepare(self, msg: dict, out: MemberOutput) -> None:
        height, round_ = int(msg["height"]), int(msg["round"])
        member = unb64u(msg["member"], KEY_SIZE)
        if height < self.height:
            out.sends.append(
                (member, {"kind": "catchup-resp", "entries": self._catchup_entries(height)})
            )
            return
        if height > self.height:
            out.sends.append(
                (member, {"kind": "catchup-req", "from_height": self.height, "member": b64u(self.key)})
            )
            return
        if member != self.config.leader_at(height, round_):
            return
        if round_ < self.promised:
            return
        self.promised = round_
        out.sends.append(
            (
                member,
                {
                    "kind": "promise",
                    "height": height,
                    "round": round_,
                    "member": b64u(self.key),
                    "accepted_round": self.accepted_round,
                    "core": self.accepted_core,
                    "subs": [s.to_wire() for s in self.accepted_subs]
                    if self.accepted_subs is not None
                    else None,
                },
            )
        )

    def _on_promise(self, msg: dict, out: MemberOutput) -> None:
        if self.preparing is None or self.my_proposal is not None:
            return
        if int(msg["height"]) != self.height or int(msg["round"]) != self.preparing:
            return
        member = unb64u(msg["member"], KEY_SIZE)
        if member not in self.config.members:
            return
        subs = msg.get("subs")
        self.promises[member] = (
            int(msg["accepted_round"]),
            msg.get("core"),
            [SubmittedTransfer.from_wire(w) for w in subs] if subs is not None else None,
        )
        if len(self.promises) >= self.config.quorum:
            self._finish_prepare(out)

    def _on_reject(self, msg: dict, out: MemberOutput) -> None:
        if self.my_proposal is None:
            return
        round_, _core, _subs = self.my_proposal
        if int(msg["height"]) != self.height or int(msg["round"]) != round_:
            return
        if unb64u(msg["member"], KEY_SIZE) not in self.config.members:
            return
        pruned = False
        for item in msg["items"]:
            rdigest = unb64u(item["digest"], DIGEST_SIZE)
            if rdigest in self.mempool:
                del self.mempool[rdigest]
                self.rejected[rdigest] = str(item["code"])
                pruned = True
        if pruned:
            self.pending_view = self.history.fork()
            for sub in self.mempool.values():
                self.pending_view.apply(sub)
        # This proposal is dead (deterministic validation means every
        # follower refuses it), so stop advertising it: a future prepare
        # must not re-adopt the bad batch through our accepted state. The
        # round timer then moves the height to a clean proposer.
        dead_round, dead_core, _ = self.my_proposal
        self.my_proposal = None
        self.votes = {}
        if self.accepted_round == dead_round and self.accepted_core == dead_core:
            self.accepted_round = -1
            self.accepted_core = None
            self.accepted_subs = None

    def _on_checkpoint(self, msg: dict, out: MemberOutput) -> None:
        cp = Checkpoint.from_wire(msg["checkpoint"])
        subs = [SubmittedTransfer.from_wire(w) for w in msg["subs"]]
        if cp.has_quorum(self.config):
            self.observed.append(cp)
        if cp.height != self.height:
            return
        if not cp.has_quorum(self.config) or cp.prev_checkpoint != self.last_digest:
            return
        if MerkleTree([s.record.digest() for s in subs]).root != cp.root:
            return
        self._apply_checkpoint(cp, subs, out)

    def _on_catchup_req(self, msg: dict, out: MemberOutput) -> None:
        member = unb64u(msg["member"], KEY_SIZE)
        entries = self._catchup_entries(int(msg["from_height"]))
        if entries:
            out.sends.append((member, {"kind": "catchup-resp", "entries": entries}))

    def _on_catchup_resp(self, msg: dict, out: MemberOutput) -> None:
        for entry in msg["entries"]:
            cp = Checkpoint.from_wire(entry["checkpoint"])
            if cp.height != self.height:
                continue
            subs = [SubmittedTransfer.from_wire(w) for w in entry["subs"]]
            if not cp.has_quorum(self.config) or cp.prev_checkpoint != self.last_digest:
                continue
            if MerkleTree([s.record.digest() for s in subs]).root != cp.root:
                continue
            self.observed.append(cp)
            self._apply_checkpoint(cp, subs, out)

    # -- timers ----------------------------------------------------------------

    def on_timer(self, token: dict, now: int) -> MemberOutput:
        out = MemberOutput()
        kind = token.get("kind")
        if kind == "batch":
            if (
                int(token["height"]) == self.height
                and self.round == 0
                and self.my_proposal is None
                and self.is_leader(0)
            ):
                self.batch_scheduled = False
                fresh = self._fresh_value()
                if fresh is not None:
                    self._propose(0, fresh[0], fresh[1], out)
        elif kind == "round":
            if int(token["height"]) != self.height or int(token["round"]) != self.round:
                return out
            if not self.mempool and self.accepted_core is None:
                return out
            self.round += 1
            # Drops may have starved some members; resend what we hold.
            for sub in self.mempool.values():
                out.sends.extend(self._broadcast({"kind": "gossip", "sub": sub.to_wire()}))
            if self.is_leader(self.round):
                self._start_prepare(self.round, out)
            self._arm(
                out,
                self.round_timeout_ms,
                {"kind": "round", "height": self.height, "round": self.round},
            )
        return out

    def on_recover(self, now: int) -> MemberOutput:
        """Crash recovery: ask peers where the ledger is and re-announce
        everything still pending locally."""
        out = MemberOutput()
        out.sends.extend(
            self._broadcast(
                {"kind": "catchup-req", "from_height": self.height, "member": b64u(self.key)}
            )
        )
        for sub in self.mempool.values():
            out.sends.extend(self._broadcast({"kind": "gossip", "sub": sub.to_wire()}))
        self._armed_timers = set()
        self._kick(out)
        return out

    # -- queries -----------------------------------------------------------------

    def latest_checkpoint(self) -> Checkpoint | None:
        if not self.finalized_entries:
            return None
        return self.finalized_entries[-1][0]

    def proof_for(self, record_digest: bytes) -> ProofOfProvenance | None:
        position = self.finalized_index.get(record_digest)
        if position is None:
            return None
        height, leaf = position
        cp, subs = self.finalized_entries[height]
        tree = MerkleTree([s.record.digest() for s in subs])
        return ProofOfProvenance(
            record=subs[leaf].record,
            leaf_index=leaf,
            path=tuple(tree.path(leaf)),
            checkpoint=cp,
        )

    def token_view(self, token_pub: bytes) -> dict:
        status = self.pending_view.token_status(token_pub)
        if status["state"] == "unseen":
            return status
        chain = self.pending_view.token_chain(token_pub)
        status["finalized"] = all(
            r.digest() in self.finalized_index for r in chain
        )
        status["records"] = [r.to_wire() for r in chain]
        return status

    def equivocation_alarm(self) -> EquivocationAlarm | None:
        return detect_equivocation(self.observed, self.config)
