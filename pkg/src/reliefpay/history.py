"""Accepted-transfer state: the per-token chain tips, the first-seen rule,
and full validation of incoming submissions.

Both the standalone relay and every ledger member keep a HistoryState.
A submission carries the token, the new record, and the certificates
needed to judge it, so any member can validate independently. Acceptance
advances that token's tip; a later record naming a superseded tip is a
double-spend attempt and is refused with `stale-prev`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .blindsig import DenominationPublicKey
from .encoding import b64u
from .identity import ROLE_TOKEN, ROLE_VENDOR, PublicIdentity
from .tokens import Token, TransferRecord, VendorCertificate, verify_certificate

SUBMIT_TYPE = "submit"

WRONG_RELAY = "wrong-relay"
STALE_PREV = "stale-prev"
INVALID_RECORD = "invalid-record"
DUPLICATE = "duplicate"


@dataclass(frozen=True)
class SubmittedTransfer:
    """One transfer submission: the record plus everything needed to
    validate it without any other channel. `certs` must cover the
    recipient; for hops past the first it should also cover the signer
    (stored certificates from earlier hops count too)."""

    token: Token
    record: TransferRecord
    certs: tuple[VendorCertificate, ...] = field(default_factory=tuple)

    def to_wire(self) -> dict:
        return {
            "certs": [c.to_wire() for c in self.certs],
            "record": self.record.to_wire(),
            "token": self.token.to_wire(),
            "type": SUBMIT_TYPE,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "SubmittedTransfer":
        return cls(
            token=Token.from_wire(wire["token"]),
            record=TransferRecord.from_wire(wire["record"]),
            certs=tuple(VendorCertificate.from_wire(c) for c in wire.get("certs", [])),
        )

    def digest(self) -> bytes:
        return self.record.digest()


@dataclass
class TokenChainState:
    token: Token
    record_digests: list[bytes]
    tip: bytes
    holder_key: bytes
    holder_is_vendor: bool


class HistoryState:
    """Validation state over accepted records. Holds only what the
    first-seen rule and signature checks need; batching and leaf indexing
    live with the caller."""

    def __init__(
        self,
        relay_id: bytes,
        issuer_pub: bytes,
        denom_keys: dict[int, DenominationPublicKey],
    ):
        self.relay_id = relay_id
        self.issuer_pub = issuer_pub
        self.denom_keys = dict(denom_keys)
        self.chains: dict[bytes, TokenChainState] = {}
        self.records: dict[bytes, TransferRecord] = {}
        self.vendor_certs: dict[bytes, list[VendorCertificate]] = {}

    def fork(self) -> "HistoryState":
        """Independent copy for validating a proposed batch without
        touching accepted state."""
        twin = HistoryState(self.relay_id, self.issuer_pub, self.denom_keys)
        twin.chains = {
            key: TokenChainState(
                token=st.token,
                record_digests=list(st.record_digests),
                tip=st.tip,
                holder_key=st.holder_key,
                holder_is_vendor=st.holder_is_vendor,
            )
            for key, st in self.chains.items()
        }
        twin.records = dict(self.records)
        twin.vendor_certs = {k: list(v) for k, v in self.vendor_certs.items()}
        return twin

    # -- certificate lookup -------------------------------------------------

    def _certs_for(
        self, vendor_id: bytes, submitted: tuple[VendorCertificate, ...], at: int
    ) -> list[VendorCertificate]:
        pool = list(submitted) + self.vendor_certs.get(vendor_id, [])
        return [
            c
            for c in pool
            if c.vendor_id == vendor_id and verify_certificate(c, self.issuer_pub, at)
        ]

    # -- validation ---------------------------------------------------------

    def validate(self, sub: SubmittedTransfer) -> str | None:
        """Error code for a rejected submission, None for acceptable."""
        token, record = sub.token, sub.record

        if token.relay_id != self.relay_id:
            return WRONG_RELAY
        if record.digest() in self.records:
            return DUPLICATE
        if record.token_id != token.token_pub:
            return INVALID_RECORD

        chain = self.chains.get(token.token_pub)
        if chain is not None:
            if chain.token.to_wire() != token.to_wire():
                return INVALID_RECORD
            expected_prev = chain.tip
            expected_hop = len(chain.record_digests)
            signer_key = chain.holder_key
            signer_is_vendor = chain.holder_is_vendor
            earlier = {chain.token.digest(), *chain.record_digests}
        else:
            denom_key = self.denom_keys.get(token.denomination)
            if denom_key is None or not token.verify(denom_key):
                return INVALID_RECORD
            expected_prev = token.digest()
            expected_hop = 0
            signer_key = token.token_pub
            signer_is_vendor = False
            earlier = {token.digest()}

        if record.prev != expected_prev:
            # A prev naming a superseded point in this chain is the
            # double-spend signature; anything else is malformed.
            return STALE_PREV if record.prev in earlier else INVALID_RECORD
        if record.hop != expected_hop:
            return INVALID_RECORD

        role = ROLE_VENDOR if signer_is_vendor else ROLE_TOKEN
        signer = PublicIdentity(key=signer_key, role=role)
        if not signer.verify(record.holder_sig, record.signed_bytes()):
            return INVALID_RECORD

        if not self._certs_for(record.recipient_id, sub.certs, record.timestamp):
            return INVALID_RECORD
        if signer_is_vendor:
            signer_certs = self._certs_for(signer_key, sub.certs, record.timestamp)
            if not any(c.onward_transfer_allowed for c in signer_certs):
                return INVALID_RECORD
        return None

    def apply(self, sub: SubmittedTransfer) -> None:
        """Record an accepted submission. Caller must have validated."""
        token, record = sub.token, sub.record
        rdigest = record.digest()
        chain = self.chains.get(token.token_pub)
        if chain is None:
            chain = TokenChainState(
                token=token,
                record_digests=[],
                tip=token.digest(),
                holder_key=token.token_pub,
                holder_is_vendor=False,
            )
            self.chains[token.token_pub] = chain
        chain.record_digests.append(rdigest)
        chain.tip = rdigest
        chain.holder_key = record.recipient_id
        chain.holder_is_vendor = True
        self.records[rdigest] = record
        for cert in sub.certs:
            known = self.vendor_certs.setdefault(cert.vendor_id, [])
            if cert.to_wire() not in [c.to_wire() for c in known]:
                known.append(cert)

    def validate_and_apply(self, sub: SubmittedTransfer) -> str | None:
        code = self.validate(sub)
        if code is None:
            self.apply(sub)
        return code

    # -- queries ------------------------------------------------------------

    def token_chain(self, token_pub: bytes) -> list[TransferRecord]:
        chain = self.chains.get(token_pub)
        if chain is None:
            return []
        return [self.records[d] for d in chain.record_digests]

    def token_status(self, token_pub: bytes) -> dict:
        chain = self.chains.get(token_pub)
        if chain is None:
            return {"state": "unseen"}
        return {
            "state": "seen",
            "tip": b64u(chain.tip),
            "hops": len(chain.record_digests),
        }
