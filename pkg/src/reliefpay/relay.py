"""Client-facing relay node.

Wraps one ledger member with a write-ahead log and receipt semantics:
a submission is validated, appended to the WAL, fsync'd, and only then
acknowledged, so an accepted record survives a process kill. Batch
sealing runs off the member's own timers, driven here by a logical
millisecond clock (tests and the CLI call seal(); the HTTP service pumps
tick() from a background task).

A standalone relay is simply the one-member, quorum-one configuration of
the same machinery; nothing in this file is specific to either mode.
"""

from __future__ import annotations

import heapq
from pathlib import Path
from typing import Callable

from .blindsig import DenominationPublicKey
from .checkpoints import Checkpoint, LedgerConfig
from .encoding import b64u
from .eventlog import EventLog
from .history import DUPLICATE, SubmittedTransfer
from .identity import Identity
from .ledger import Member, MemberOutput
from .tokens import ProofOfProvenance


class RelayNode:
    def __init__(
        self,
        identity: Identity,
        config: LedgerConfig,
        issuer_pub: bytes,
        denom_keys: dict[int, DenominationPublicKey],
        data_dir: str | Path | None = None,
        batch_ms: int = 50,
        round_timeout_ms: int = 500,
        outbox: Callable[[bytes, dict], None] | None = None,
    ):
        self.member = Member(
            identity,
            config,
            issuer_pub,
            denom_keys,
            batch_ms=batch_ms,
            round_timeout_ms=round_timeout_ms,
        )
        self.config = config
        self.outbox = outbox
        self.clock = 0
        self._timers: list[tuple[int, int, dict]] = []
        self._timer_seq = 0
        self.wal: EventLog | None = None
        if data_dir is not None:
            self.wal = EventLog(Path(data_dir) / "relay-wal.jsonl")
            self._replay()

    # -- persistence -----------------------------------------------------------

    def _replay(self) -> None:
        assert self.wal is not None
        for event in self.wal.replay():
            if event["kind"] == "submission":
                sub = SubmittedTransfer.from_wire(event["sub"])
                self.member.inject_submission(sub, self.clock)
            elif event["kind"] == "checkpoint":
                self.member.on_message(event, self.clock)
        # Replay outputs were dropped; re-arm whatever the mempool needs.
        self._timers = []
        self.member._armed_timers = set()
        out = MemberOutput()
        self.member._kick(out)
        self._absorb(out)

    def _absorb(self, out: MemberOutput) -> list[Checkpoint]:
        for cp in out.finalized:
            if self.wal is not None:
                _, subs = self.member.finalized_entries[cp.height]
                self.wal.append(
                    {
                        "kind": "checkpoint",
                        "checkpoint": cp.to_wire(),
                        "subs": [s.to_wire() for s in subs],
                    }
                )
        for delay, token in out.timers:
            heapq.heappush(self._timers, (self.clock + delay, self._timer_seq, token))
            self._timer_seq += 1
        if self.outbox is not None:
            for dest, msg in out.sends:
                self.outbox(dest, msg)
        return out.finalized

    # -- client operations -------------------------------------------------------

    def submit(self, sub: SubmittedTransfer) -> dict:
        """Validate, persist, acknowledge. The receipt never promises more
        than the WAL already holds."""
        rdigest = sub.record.digest()
        code, out = self.member.inject_submission(sub, self.clock)
        if code is None:
            if self.wal is not None:
                self.wal.append({"kind": "submission", "sub": sub.to_wire()})
            self._absorb(out)
            return {"digest": b64u(rdigest), "status": "pending", "code": None}
        if code == DUPLICATE:
            status = self.member.record_status(rdigest)
            status["digest"] = b64u(rdigest)
            status.setdefault("code", None)
            return status
        return {"digest": b64u(rdigest), "status": "rejected", "code": code}

    def tick(self, now_ms: int) -> list[Checkpoint]:
        """Advance the logical clock, firing every due timer."""
        finalized: list[Checkpoint] = []
        self.clock = max(self.clock, now_ms)
        while self._timers and self._timers[0][0] <= self.clock:
            _, _, token = heapq.heappop(self._timers)
            finalized.extend(self._absorb(self.member.on_timer(token, self.clock)))
        return finalized

    def seal(self) -> list[Checkpoint]:
        """Run timers until the pending batch (if any) is sealed."""
        finalized: list[Checkpoint] = []
        while self._timers and not finalized:
            due, _, token = heapq.heappop(self._timers)
            self.clock = max(self.clock, due)
            finalized.extend(self._absorb(self.member.on_timer(token, self.clock)))
        return finalized

    def handle_inbox(self, msg: dict) -> None:
        """Consensus message from a peer member (deployment transport)."""
        self._absorb(self.member.on_message(msg, self.clock))

    # -- queries -------------------------------------------------------------------

    def proof(self, record_digest: bytes) -> dict:
        pop = self.member.proof_for(record_digest)
        if pop is not None:
            return {"status": "finalized", "proof": pop.to_wire()}
        status = self.member.record_status(record_digest)
        if status["status"] == "pending":
            return {"status": "pending"}
        if status["status"] == "rejected":
            return {"status": "rejected", "code": status["code"]}
        return {"status": "not-found"}

    def proof_object(self, record_digest: bytes) -> ProofOfProvenance | None:
        return self.member.proof_for(record_digest)

    def token_view(self, token_pub: bytes) -> dict:
        return self.member.token_view(token_pub)

    def latest_checkpoint(self) -> Checkpoint | None:
        return self.member.latest_checkpoint()

    def close(self) -> None:
        if self.wal is not None:
            self.wal.close()


def standalone_config(identity: Identity) -> LedgerConfig:
    """The one-relay degenerate ledger: that relay's key is both the sole
    member and the collective identity tokens bind to."""
    return LedgerConfig(
        members=(identity.public.key,),
        quorum=1,
        collective_id=identity.public.key,
    )
