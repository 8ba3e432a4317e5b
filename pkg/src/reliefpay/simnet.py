"""Deterministic simulated network for the ledger.

Members run in one process under a virtual millisecond clock. Every
message pickup, latency draw, drop decision, and timer firing comes off
one seeded random stream and one ordered event queue, so a run is a pure
function of (seed, schedule): the same inputs give a byte-identical
trace. Crashes silence a member (messages and timers are lost; state
survives); recovery re-enters it through its catchup path.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from random import Random

from .encoding import b64u, canonical_json
from .history import SubmittedTransfer
from .ledger import Member, MemberOutput


@dataclass(frozen=True)
class CrashPlan:
    """Crash `member_index` at `at_ms`; recover at `recover_ms` if set."""

    member_index: int
    at_ms: int
    recover_ms: int | None = None


class SimNet:
    def __init__(
        self,
        members: list[Member],
        seed: int,
        latency_ms: tuple[int, int] = (5, 30),
        drop_rate: float = 0.0,
        crashes: list[CrashPlan] | None = None,
    ):
        self.members = {m.key: m for m in members}
        self.names = {m.key: f"m{i}" for i, m in enumerate(members)}
        self.rng = Random(seed)
        self.latency_ms = latency_ms
        self.drop_rate = drop_rate
        self.now = 0
        self._seq = 0
        self._queue: list[tuple[int, int, str, tuple]] = []
        self.crashed: set[bytes] = set()
        self.trace: list[dict] = []
        self.finalized: list[tuple[bytes, object]] = []
        for plan in crashes or []:
            key = members[plan.member_index].key
            self._push(plan.at_ms, "crash", (key,))
            if plan.recover_ms is not None:
                self._push(plan.recover_ms, "recover", (key,))

    # -- scheduling -----------------------------------------------------------

    def _push(self, at: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self._queue, (at, self._seq, kind, payload))
        self._seq += 1

    def _note(self, event: dict) -> None:
        self.trace.append({"at": self.now, **event})

    def submit(self, member_index_or_key, sub: SubmittedTransfer, at_ms: int) -> None:
        key = self._resolve(member_index_or_key)
        self._push(at_ms, "submit", (key, sub))

    def _resolve(self, member_index_or_key) -> bytes:
        if isinstance(member_index_or_key, int):
            return list(self.members.values())[member_index_or_key].key
        return member_index_or_key

    def _dispatch_output(self, source: bytes, out: MemberOutput) -> None:
        for dest, msg in out.sends:
            if self.rng.random() < self.drop_rate:
                self._note(
                    {
                        "ev": "drop",
                        "from": self.names[source],
                        "to": self.names[dest],
                        "kind": msg["kind"],
                    }
                )
                continue
            delay = self.rng.randint(*self.latency_ms)
            self._push(self.now + delay, "deliver", (source, dest, msg))
        for delay, token in out.timers:
            self._push(self.now + delay, "timer", (source, token))
        for cp in out.finalized:
            self.finalized.append((source, cp))
            self._note(
                {
                    "ev": "finalize",
                    "member": self.names[source],
                    "height": cp.height,
                    "root": b64u(cp.root),
                    "signers": len(cp.signatures),
                }
            )

    # -- event loop -------------------------------------------------------------

    def run(self, until_ms: int) -> None:
        while self._queue and self._queue[0][0] <= until_ms:
            at, _, kind, payload = heapq.heappop(self._queue)
            self.now = at
            if kind == "crash":
                (key,) = payload
                self.crashed.add(key)
                self._note({"ev": "crash", "member": self.names[key]})
            elif kind == "recover":
                (key,) = payload
                self.crashed.discard(key)
                self._note({"ev": "recover", "member": self.names[key]})
                self._dispatch_output(key, self.members[key].on_recover(self.now))
            elif kind == "submit":
                key, sub = payload
                if key in self.crashed:
                    self._note({"ev": "submit-lost", "member": self.names[key]})
                    continue
                code, out = self.members[key].inject_submission(sub, self.now)
                self._note(
                    {
                        "ev": "submit",
                        "member": self.names[key],
                        "record": b64u(sub.record.digest()),
                        "code": code,
                    }
                )
                self._dispatch_output(key, out)
            elif kind == "deliver":
                source, dest, msg = payload
                if dest in self.crashed:
                    self._note(
                        {
                            "ev": "lost",
                            "from": self.names[source],
                            "to": self.names[dest],
                            "kind": msg["kind"],
                        }
                    )
                    continue
                self._note(
                    {
                        "ev": "deliver",
                        "from": self.names[source],
                        "to": self.names[dest],
                        "kind": msg["kind"],
                    }
                )
                self._dispatch_output(dest, self.members[dest].on_message(msg, self.now))
            elif kind == "timer":
                key, token = payload
                if key in self.crashed:
                    continue
                self._dispatch_output(key, self.members[key].on_timer(token, self.now))

    def run_until_quiet(self, max_ms: int) -> None:
        self.run(max_ms)

    # -- inspection ---------------------------------------------------------------

    def trace_bytes(self) -> bytes:
        return b"".join(canonical_json(e) + b"\n" for e in self.trace)

    def member(self, index: int) -> Member:
        return list(self.members.values())[index]

    def live_members(self) -> list[Member]:
        return [m for key, m in self.members.items() if key not in self.crashed]
