"""Token and transfer data structures plus the pure validation logic
shared by wallet, merchant, relay, and issuer.

A token is an Ed25519 public key bound at accreditation time to one relay
and one denomination (the denomination lives in which RSA key verifies
the accreditation). Spending signs a transfer record over to a certified
vendor; records hash-link into a linear chain rooted at the token digest.
Every recipient beyond the claimant is identified by certificate; the
claimant never appears in any structure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .blindsig import Accreditation, DenominationPublicKey, verify_accreditation
from .checkpoints import Checkpoint, LedgerConfig
from .encoding import DIGEST_SIZE, b64u, canonical_json, digest, unb64u
from .identity import (
    KEY_SIZE,
    ROLE_ISSUER,
    ROLE_TOKEN,
    ROLE_VENDOR,
    SIGNATURE_SIZE,
    Identity,
    PublicIdentity,
)
from .merkle import PathStep, leaf_hash, path_from_wire, path_to_wire, verify_path

ACCREDIT_TYPE = "accredit"
TOKEN_TYPE = "token"
TRANSFER_TYPE = "transfer"
CERT_TYPE = "vendor-cert"
PROOF_TYPE = "proof"


class TokenError(Exception):
    pass


# ---------------------------------------------------------------------------
# Accreditation binding
# ---------------------------------------------------------------------------


def accreditation_message(token_pub: bytes, relay_id: bytes) -> bytes:
    """The byte string a denomination key blind-signs: it binds the token
    key to the relay that will sequence its transfers."""
    if len(token_pub) != KEY_SIZE or len(relay_id) != KEY_SIZE:
        raise TokenError("keys must be 32 bytes")
    return canonical_json(
        {"relay_id": b64u(relay_id), "token_pub": b64u(token_pub), "type": ACCREDIT_TYPE}
    )


# ---------------------------------------------------------------------------
# Core structures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    """Public face of a token. Carrying no holder identifier is the point:
    possession of the matching private key is the only claim to it."""

    token_pub: bytes
    relay_id: bytes
    denomination: int
    accreditation: Accreditation

    def __post_init__(self) -> None:
        if len(self.token_pub) != KEY_SIZE or len(self.relay_id) != KEY_SIZE:
            raise TokenError("keys must be 32 bytes")
        if self.denomination != self.accreditation.denomination:
            raise TokenError("accreditation denomination mismatch")

    @property
    def token_id(self) -> str:
        return b64u(self.token_pub)

    def verify(self, denom_key: DenominationPublicKey) -> bool:
        message = accreditation_message(self.token_pub, self.relay_id)
        return verify_accreditation(message, self.accreditation, denom_key)

    def to_wire(self) -> dict:
        return {
            "accreditation": self.accreditation.to_wire(),
            "denomination": self.denomination,
            "relay_id": b64u(self.relay_id),
            "token_pub": b64u(self.token_pub),
            "type": TOKEN_TYPE,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "Token":
        if wire.get("type") != TOKEN_TYPE:
            raise TokenError("not a token")
        return cls(
            token_pub=unb64u(wire["token_pub"], KEY_SIZE),
            relay_id=unb64u(wire["relay_id"], KEY_SIZE),
            denomination=int(wire["denomination"]),
            accreditation=Accreditation.from_wire(wire["accreditation"]),
        )

    def digest(self) -> bytes:
        return digest(self.to_wire())


@dataclass
class TokenSecret:
    """Consumer-side secret half of a token. The private key never enters
    any protocol message; the blinding record exists only between request
    and accreditation."""

    identity: Identity
    blinding_r: int = 0
    denomination: int = 0

    @property
    def token_pub(self) -> bytes:
        return self.identity.public.key


@dataclass(frozen=True)
class TransferRecord:
    """One hop of a token's spend chain. `prev` is digest(Token) at hop 0
    and digest of the prior record afterwards; the signature comes from
    whoever held the token before this hop."""

    token_id: bytes
    prev: bytes
    recipient_id: bytes
    hop: int
    timestamp: int
    holder_sig: bytes

    def __post_init__(self) -> None:
        if len(self.token_id) != KEY_SIZE or len(self.recipient_id) != KEY_SIZE:
            raise TokenError("keys must be 32 bytes")
        if len(self.prev) != DIGEST_SIZE:
            raise TokenError("prev must be a 32-byte digest")
        if self.hop < 0:
            raise TokenError("hop must be non-negative")
        if len(self.holder_sig) != SIGNATURE_SIZE:
            raise TokenError("holder_sig must be 64 bytes")

    @staticmethod
    def signing_bytes(
        token_id: bytes, prev: bytes, recipient_id: bytes, hop: int, timestamp: int
    ) -> bytes:
        return canonical_json(
            {
                "hop": hop,
                "prev": b64u(prev),
                "recipient_id": b64u(recipient_id),
                "timestamp": timestamp,
                "token_id": b64u(token_id),
                "type": TRANSFER_TYPE,
            }
        )

    def signed_bytes(self) -> bytes:
        return self.signing_bytes(
            self.token_id, self.prev, self.recipient_id, self.hop, self.timestamp
        )

    def to_wire(self) -> dict:
        return {
            "holder_sig": b64u(self.holder_sig),
            "hop": self.hop,
            "prev": b64u(self.prev),
            "recipient_id": b64u(self.recipient_id),
            "timestamp": self.timestamp,
            "token_id": b64u(self.token_id),
            "type": TRANSFER_TYPE,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "TransferRecord":
        if wire.get("type") != TRANSFER_TYPE:
            raise TokenError("not a transfer record")
        return cls(
            token_id=unb64u(wire["token_id"], KEY_SIZE),
            prev=unb64u(wire["prev"], DIGEST_SIZE),
            recipient_id=unb64u(wire["recipient_id"], KEY_SIZE),
            hop=int(wire["hop"]),
            timestamp=int(wire["timestamp"]),
            holder_sig=unb64u(wire["holder_sig"], SIGNATURE_SIZE),
        )

    def digest(self) -> bytes:
        return digest(self.to_wire())


@dataclass(frozen=True)
class VendorCertificate:
    """Issuer-signed registration of a vendor: who they are legally, their
    tax category key, whether they may pass tokens onward, and the window
    the certificate is good for."""

    vendor_id: bytes
    legal_name: str
    registration_ref: str
    tax_category: str
    onward_transfer_allowed: bool
    valid_from: int
    valid_to: int
    issuer_sig: bytes

    def __post_init__(self) -> None:
        if len(self.vendor_id) != KEY_SIZE:
            raise TokenError("vendor_id must be 32 bytes")
        if not self.valid_from < self.valid_to:
            raise TokenError("certificate window is empty")
        if len(self.issuer_sig) != SIGNATURE_SIZE:
            raise TokenError("issuer_sig must be 64 bytes")

    @staticmethod
    def signing_bytes(
        vendor_id: bytes,
        legal_name: str,
        registration_ref: str,
        tax_category: str,
        onward_transfer_allowed: bool,
        valid_from: int,
        valid_to: int,
    ) -> bytes:
        return canonical_json(
            {
                "legal_name": legal_name,
                "onward_transfer_allowed": onward_transfer_allowed,
                "registration_ref": registration_ref,
                "tax_category": tax_category,
                "type": CERT_TYPE,
                "valid_from": valid_from,
                "valid_to": valid_to,
                "vendor_id": b64u(vendor_id),
            }
        )

    def signed_bytes(self) -> bytes:
        return self.signing_bytes(
            self.vendor_id,
            self.legal_name,
            self.registration_ref,
            self.tax_category,
            self.onward_transfer_allowed,
            self.valid_from,
            self.valid_to,
        )

    def to_wire(self) -> dict:
        return {
            "issuer_sig": b64u(self.issuer_sig),
            "legal_name": self.legal_name,
            "onward_transfer_allowed": self.onward_transfer_allowed,
            "registration_ref": self.registration_ref,
            "tax_category": self.tax_category,
            "type": CERT_TYPE,
            "valid_from": self.valid_from,
            "valid_to": self.valid_to,
            "vendor_id": b64u(self.vendor_id),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "VendorCertificate":
        if wire.get("type") != CERT_TYPE:
            raise TokenError("not a vendor certificate")
        return cls(
            vendor_id=unb64u(wire["vendor_id"], KEY_SIZE),
            legal_name=str(wire["legal_name"]),
            registration_ref=str(wire["registration_ref"]),
            tax_category=str(wire["tax_category"]),
            onward_transfer_allowed=bool(wire["onward_transfer_allowed"]),
            valid_from=int(wire["valid_from"]),
            valid_to=int(wire["valid_to"]),
            issuer_sig=unb64u(wire["issuer_sig"], SIGNATURE_SIZE),
        )

    def digest(self) -> bytes:
        return digest(self.to_wire())


def sign_certificate(
    issuer: Identity,
    vendor_id: bytes,
    legal_name: str,
    registration_ref: str,
    tax_category: str,
    onward_transfer_allowed: bool,
    valid_from: int,
    valid_to: int,
) -> VendorCertificate:
    sig = issuer.sign(
        VendorCertificate.signing_bytes(
            vendor_id,
            legal_name,
            registration_ref,
            tax_category,
            onward_transfer_allowed,
            valid_from,
            valid_to,
        )
    )
    return VendorCertificate(
        vendor_id=vendor_id,
        legal_name=legal_name,
        registration_ref=registration_ref,
        tax_category=tax_category,
        onward_transfer_allowed=onward_transfer_allowed,
        valid_from=valid_from,
        valid_to=valid_to,
        issuer_sig=sig,
    )


def verify_certificate(cert: VendorCertificate, issuer_pub: bytes, now: int) -> bool:
    """Signature check plus validity window (inclusive bounds)."""
    if not cert.valid_from <= now <= cert.valid_to:
        return False
    ident = PublicIdentity(key=issuer_pub, role=ROLE_ISSUER)
    return ident.verify(cert.issuer_sig, cert.signed_bytes())


@dataclass(frozen=True)
class ProofOfProvenance:
    """Evidence that a transfer record sits in the checkpointed history:
    a Merkle audit path from digest(record) to a quorum-signed root."""

    record: TransferRecord
    leaf_index: int
    path: tuple[PathStep, ...]
    checkpoint: Checkpoint

    def to_wire(self) -> dict:
        return {
            "checkpoint": self.checkpoint.to_wire(),
            "leaf_index": self.leaf_index,
            "path": path_to_wire(list(self.path)),
            "record": self.record.to_wire(),
            "type": PROOF_TYPE,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "ProofOfProvenance":
        if wire.get("type") != PROOF_TYPE:
            raise TokenError("not a proof of provenance")
        return cls(
            record=TransferRecord.from_wire(wire["record"]),
            leaf_index=int(wire["leaf_index"]),
            path=tuple(path_from_wire(wire["path"])),
            checkpoint=Checkpoint.from_wire(wire["checkpoint"]),
        )


def verify_pop(pop: ProofOfProvenance, ledger_config: LedgerConfig) -> bool:
    """True iff the audit path recomputes the checkpoint root from the
    record digest and the checkpoint carries a signature quorum."""
    if pop.leaf_index < 0:
        return False
    if not verify_path(
        pop.record.digest(), pop.leaf_index, list(pop.path), pop.checkpoint.root
    ):
        return False
    return pop.checkpoint.has_quorum(ledger_config)


# ---------------------------------------------------------------------------
# Transfer construction and chain verification
# ---------------------------------------------------------------------------


def build_transfer(
    source: Token | TransferRecord,
    recipient_cert: VendorCertificate,
    signer: Identity,
    now: int,
    issuer_pub: bytes,
    signer_cert: VendorCertificate | None = None,
) -> TransferRecord:
    """Sign the token over to the certified vendor named by `recipient_cert`.

    Hop 0 (`source` is the Token) must be signed by the token key itself.
    Later hops must be signed by the previous record's recipient, whose own
    certificate (`signer_cert`) must permit onward transfer.
    """
    if not verify_certificate(recipient_cert, issuer_pub, now):
        raise TokenError("recipient certificate invalid or outside validity window")
    if isinstance(source, Token):
        if signer.public.key != source.token_pub:
            raise TokenError("hop 0 must be signed by the token key")
        token_id = source.token_pub
        prev = source.digest()
        hop = 0
    else:
        if signer.public.key != source.recipient_id:
            raise TokenError("signer is not the current holder")
        if signer_cert is None or signer_cert.vendor_id != source.recipient_id:
            raise TokenError("current holder's certificate required for onward transfer")
        if not verify_certificate(signer_cert, issuer_pub, now):
            raise TokenError("current holder's certificate invalid")
        if not signer_cert.onward_transfer_allowed:
            raise TokenError("onward transfer not permitted for this holder")
        token_id = source.token_id
        prev = source.digest()
        hop = source.hop + 1
    sig = signer.sign(
        TransferRecord.signing_bytes(token_id, prev, recipient_cert.vendor_id, hop, now)
    )
    return TransferRecord(
        token_id=token_id,
        prev=prev,
        recipient_id=recipient_cert.vendor_id,
        hop=hop,
        timestamp=now,
        holder_sig=sig,
    )


@dataclass(frozen=True)
class ChainSummary:
    valid: bool
    hops: int
    final_holder: bytes | None
    reason: str | None = None

    def to_wire(self) -> dict:
        return {
            "final_holder": b64u(self.final_holder) if self.final_holder else None,
            "hops": self.hops,
            "reason": self.reason,
            "valid": self.valid,
        }


def _bad(reason: str, hops: int = 0) -> ChainSummary:
    return ChainSummary(valid=False, hops=hops, final_holder=None, reason=reason)


def verify_transfer_chain(
    token: Token,
    chain: list[TransferRecord],
    issuer_pub: bytes,
    certs: list[VendorCertificate],
    denom_keys: dict[int, DenominationPublicKey],
) -> ChainSummary:
    """Full custody audit of one token. Checks, in order: accreditation
    under the denomination key, hop-0 linkage and token-key signature,
    per-hop linkage and prior-holder signatures, certificate coverage of
    every recipient at each record's timestamp, and onward-transfer
    permission for every non-final recipient.

    Never raises; invalid chains come back with the first failure's reason.
    """
    if not chain:
        return _bad("no-transfer")
    denom_key = denom_keys.get(token.denomination)
    if denom_key is None:
        return _bad("unknown-denomination")
    if not token.verify(denom_key):
        return _bad("bad-accreditation")

    by_vendor: dict[bytes, list[VendorCertificate]] = {}
    for cert in certs:
        by_vendor.setdefault(cert.vendor_id, []).append(cert)

    prev_digest = token.digest()
    signer_key = token.token_pub
    signer_role = ROLE_TOKEN
    for k, record in enumerate(chain):
        if record.token_id != token.token_pub:
            return _bad("wrong-token", hops=k)
        if record.hop != k:
            return _bad("bad-hop-number", hops=k)
        if record.prev != prev_digest:
            return _bad("broken-linkage", hops=k)
        signer = PublicIdentity(key=signer_key, role=signer_role)
        if not signer.verify(record.holder_sig, record.signed_bytes()):
            return _bad("bad-signature", hops=k)

        covering = [
            cert
            for cert in by_vendor.get(record.recipient_id, [])
            if verify_certificate(cert, issuer_pub, record.timestamp)
        ]
        if not covering:
            return _bad("no-certificate", hops=k)
        is_final = k == len(chain) - 1
        if not is_final and not any(c.onward_transfer_allowed for c in covering):
            return _bad("onward-not-allowed", hops=k)

        prev_digest = record.digest()
        signer_key = record.recipient_id
        signer_role = ROLE_VENDOR

    return ChainSummary(
        valid=True, hops=len(chain), final_holder=chain[-1].recipient_id, reason=None
    )


def record_leaf(record: TransferRecord) -> bytes:
    """Leaf node hash this record contributes to a batch tree."""
    return leaf_hash(record.digest())
