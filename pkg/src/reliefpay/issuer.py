"""Issuer service: claim budgets, blind accreditation issuance, vendor
registration, and compliance-gated redemption.

Every state change is an event; the live path validates a request, emits
one event, applies it, and persists it, so replaying the log rebuilds the
exact state (nullifier set included). Issuance events record only the
batch count and total; the issuer never stores blinded values and meets
token public keys for the first time at redemption.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .blindsig import BlindedMessage, DenominationKeyset, sign_blinded
from .checkpoints import LedgerConfig
from .encoding import b64u, canonical_json, digest, unb64u
from .eventlog import EventLog, SnapshotStore
from .identity import KEY_SIZE, ROLE_VENDOR, Identity, PublicIdentity
from .tokens import (
    ProofOfProvenance,
    Token,
    TransferRecord,
    VendorCertificate,
    sign_certificate,
    verify_pop,
    verify_transfer_chain,
)

SECONDS_PER_DAY = 86400

DOUBLE_REDEEM = "double-redeem"
INVALID_CHAIN = "invalid-chain"
MISSING_POP = "missing-pop"
UNREGISTERED_RECIPIENT = "unregistered-recipient"
REVOKED_CERTIFICATE = "revoked-certificate"
LIMIT_EXCEEDED = "limit-exceeded"
HOLDER_MISMATCH = "holder-mismatch"


class IssuerError(Exception):
    """Request rejected; `code` is the wire error code."""

    def __init__(self, code: str, message: str = "", details: dict | None = None):
        super().__init__(message or code)
        self.code = code
        self.details = details or {}


@dataclass
class ClaimRecord:
    claim_id: str
    approved_amount: int
    issued_amount: int = 0
    frozen: bool = False

    @property
    def status(self) -> str:
        if self.frozen:
            return "frozen"
        if self.issued_amount >= self.approved_amount:
            return "exhausted"
        return "approved"

    def to_wire(self) -> dict:
        return {
            "approved_amount": self.approved_amount,
            "claim_id": self.claim_id,
            "frozen": self.frozen,
            "issued_amount": self.issued_amount,
            "status": self.status,
        }


@dataclass(frozen=True)
class CompliancePolicy:
    """Redemption-time policy: exact rational tax rates per category, KYC
    gates, and the per-vendor daily redemption cap."""

    tax_rates: dict[str, Fraction]
    kyc_required: dict[str, bool]
    max_redemption_per_vendor_per_day: int
    onward_transfer_default: bool
    version: str

    def rate_for(self, category: str) -> Fraction:
        return self.tax_rates[category]

    def to_wire(self) -> dict:
        return {
            "kyc_required": dict(sorted(self.kyc_required.items())),
            "max_redemption_per_vendor_per_day": self.max_redemption_per_vendor_per_day,
            "onward_transfer_default": self.onward_transfer_default,
            "tax_rates": {
                k: f"{v.numerator}/{v.denominator}"
                for k, v in sorted(self.tax_rates.items())
            },
            "version": self.version,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "CompliancePolicy":
        return cls(
            tax_rates={k: Fraction(v) for k, v in wire["tax_rates"].items()},
            kyc_required={k: bool(v) for k, v in wire["kyc_required"].items()},
            max_redemption_per_vendor_per_day=int(wire["max_redemption_per_vendor_per_day"]),
            onward_transfer_default=bool(wire["onward_transfer_default"]),
            version=str(wire["version"]),
        )


def default_policy() -> CompliancePolicy:
    return CompliancePolicy(
        tax_rates={
            "essential-goods": Fraction(0),
            "general": Fraction(20, 100),
            "services": Fraction(1, 3),
        },
        kyc_required={"essential-goods": False, "general": True, "services": True},
        max_redemption_per_vendor_per_day=1_000_000,
        onward_transfer_default=False,
        version="policy-1",
    )


def withheld_amount(gross: int, rate: Fraction) -> int:
    """Tax withholding: floor of gross * rate in exact arithmetic."""
    return (gross * rate.numerator) // rate.denominator


# -- redemption request wire -------------------------------------------------


def redemption_auth_bytes(vendor_id: bytes, nonce: str, timestamp: int, items: list[dict]) -> bytes:
    return canonical_json(
        {
            "items": b64u(digest(items)),
            "nonce": nonce,
            "timestamp": timestamp,
            "type": "redemption",
            "vendor_id": b64u(vendor_id),
        }
    )


def build_redemption_request(
    vendor: Identity,
    items: list[dict],
    timestamp: int,
    nonce: str | None = None,
) -> dict:
    """Assemble and sign a redemption request. A retry must reuse the same
    nonce to be treated as the same request; a new nonce is a new attempt."""
    nonce = nonce if nonce is not None else b64u(secrets.token_bytes(16))
    sig = vendor.sign(redemption_auth_bytes(vendor.public.key, nonce, timestamp, items))
    return {
        "auth_sig": b64u(sig),
        "items": items,
        "nonce": nonce,
        "timestamp": timestamp,
        "type": "redemption-request",
        "vendor_id": b64u(vendor.public.key),
    }


class IssuerService:
    def __init__(
        self,
        identity: Identity,
        keyset: DenominationKeyset,
        policy: CompliancePolicy,
        ledger_config: LedgerConfig,
        data_dir: str | Path | None = None,
        snapshot_every: int = 100,
    ):
        self.identity = identity
        self.keyset = keyset
        self.policy = policy
        self.ledger_config = ledger_config
        self.denom_keys = keyset.public_map()

        self.claims: dict[str, ClaimRecord] = {}
        self.vendors: dict[bytes, VendorCertificate] = {}
        self.revoked: dict[bytes, str] = {}
        self.nullifiers: set[bytes] = set()
        self.receipts: list[dict] = []
        self.request_index: dict[str, int] = {}
        self.day_totals: dict[str, int] = {}
        self.issued_batches: list[dict] = []

        self.log: EventLog | None = None
        self.snapshots: SnapshotStore | None = None
        self._events_since_snapshot = 0
        self.snapshot_every = snapshot_every
        if data_dir is not None:
            base = Path(data_dir)
            self.log = EventLog(base / "issuer-events.jsonl")
            self.snapshots = SnapshotStore(base / "issuer-snapshot.json")
            self._restore()

    # -- event machinery -------------------------------------------------------

    def apply_event(self, event: dict) -> None:
        """The single state-transition function; both the live path and
        replay go through here."""
        kind = event["kind"]
        if kind == "claim":
            self.claims[event["claim_id"]] = ClaimRecord(
                claim_id=event["claim_id"], approved_amount=int(event["amount"])
            )
        elif kind == "freeze":
            self.claims[event["claim_id"]].frozen = True
        elif kind == "issuance":
            claim = self.claims[event["claim_id"]]
            claim.issued_amount += int(event["total"])
            self.issued_batches.append(
                {
                    "claim_id": event["claim_id"],
                    "count": int(event["count"]),
                    "total": int(event["total"]),
                }
            )
        elif kind == "vendor":
            cert = VendorCertificate.from_wire(event["cert"])
            self.vendors[cert.vendor_id] = cert
        elif kind == "revoke":
            self.revoked[unb64u(event["vendor_id"], KEY_SIZE)] = str(event["reason"])
        elif kind == "redemption":
            receipt = event["receipt"]
            for token_pub in event["token_pubs"]:
                self.nullifiers.add(unb64u(token_pub, KEY_SIZE))
            self.request_index[event["request_digest"]] = len(self.receipts)
            self.receipts.append(receipt)
            day_key = event["day_key"]
            self.day_totals[day_key] = self.day_totals.get(day_key, 0) + int(
                receipt["gross"]
            )
        else:
            raise IssuerError("unknown-event", f"unknown event kind {kind!r}")

    def _commit(self, event: dict) -> None:
        self.apply_event(event)
        if self.log is not None:
            self.log.append(event)
            self._events_since_snapshot += 1
            if self._events_since_snapshot >= self.snapshot_every:
                self.snapshot()

    def snapshot(self) -> None:
        if self.snapshots is None or self.log is None:
            return
        self.snapshots.save(self.state_wire())
        self.log.truncate()
        self._events_since_snapshot = 0

    def _restore(self) -> None:
        assert self.snapshots is not None and self.log is not None
        state = self.snapshots.load()
        if state is not None:
            self._load_state(state)
        for event in self.log.replay():
            self.apply_event(event)

    def state_wire(self) -> dict:
        return {
            "claims": {
                cid: {"amount": c.approved_amount, "frozen": c.frozen, "issued": c.issued_amount}
                for cid, c in sorted(self.claims.items())
            },
            "day_totals": dict(sorted(self.day_totals.items())),
            "issued_batches": self.issued_batches,
            "nullifiers": sorted(b64u(n) for n in self.nullifiers),
            "receipts": self.receipts,
            "request_index": dict(sorted(self.request_index.items())),
            "revoked": {b64u(k): v for k, v in sorted(self.revoked.items())},
            "vendors": [self.vendors[k].to_wire() for k in sorted(self.vendors)],
        }

    def _load_state(self, state: dict) -> None:
        self.claims = {
            cid: ClaimRecord(
                claim_id=cid,
                approved_amount=int(entry["amount"]),
                issued_amount=int(entry["issued"]),
                frozen=bool(entry["frozen"]),
            )
            for cid, entry in state["claims"].items()
        }
        self.day_totals = {k: int(v) for k, v in state["day_totals"].items()}
        self.issued_batches = list(state["issued_batches"])
        self.nullifiers = {unb64u(n, KEY_SIZE) for n in state["nullifiers"]}
        self.receipts = list(state["receipts"])
        self.request_index = {k: int(v) for k, v in state["request_index"].items()}
        self.revoked = {unb64u(k, KEY_SIZE): v for k, v in state["revoked"].items()}
        self.vendors = {}
        for wire in state["vendors"]:
            cert = VendorCertificate.from_wire(wire)
            self.vendors[cert.vendor_id] = cert

    # -- admin: claims -----------------------------------------------------------

    def approve_claim(self, claim_id: str, amount: int) -> ClaimRecord:
        if claim_id in self.claims:
            raise IssuerError("duplicate-claim", f"claim {claim_id!r} already exists")
        if amount < 0:
            raise IssuerError("bad-amount", "approved amount must be non-negative")
        self._commit({"kind": "claim", "claim_id": claim_id, "amount": amount})
        return self.claims[claim_id]

    def freeze_claim(self, claim_id: str) -> ClaimRecord:
        if claim_id not in self.claims:
            raise IssuerError("unknown-claim", f"no claim {claim_id!r}")
        self._commit({"kind": "freeze", "claim_id": claim_id})
        return self.claims[claim_id]

    # -- issuance -------------------------------------------------------------------

    def issue_accreditations(
        self, claim_id: str, requests: list[BlindedMessage]
    ) -> list[int]:
        """Blind-sign a batch against the claim budget, all or nothing."""
        claim = self.claims.get(claim_id)
        if claim is None:
            raise IssuerError("unknown-claim", f"no claim {claim_id!r}")
        if claim.frozen:
            raise IssuerError("frozen-claim", f"claim {claim_id!r} is frozen")
        if not requests:
            raise IssuerError("empty-batch", "nothing to sign")
        for req in requests:
            if req.denomination not in self.denom_keys:
                raise IssuerError(
                    "unknown-denomination", f"no key for denomination {req.denomination}"
                )
        total = sum(req.denomination for req in requests)
        if total > claim.approved_amount - claim.issued_amount:
            raise IssuerError(
                "over-budget",
                f"batch of {total} exceeds remaining budget "
                f"{claim.approved_amount - claim.issued_amount}",
            )
        signatures = [
            sign_blinded(req, self.keyset.private(req.denomination)) for req in requests
        ]
        self._commit(
            {
                "kind": "issuance",
                "claim_id": claim_id,
                "count": len(requests),
                "total": total,
            }
        )
        return signatures

    # -- vendors ------------------------------------------------------------------------

    def register_vendor(
        self,
        vendor_pub: bytes,
        legal_name: str,
        registration_ref: str,
        tax_category: str,
        valid_from: int,
        valid_to: int,
        onward_transfer_allowed: bool | None = None,
        kyc_attested: bool = False,
    ) -> VendorCertificate:
        if tax_category not in self.policy.tax_rates:
            raise IssuerError("unknown-category", f"no tax category {tax_category!r}")
        if self.policy.kyc_required.get(tax_category, True) and not kyc_attested:
            raise IssuerError(
                "kyc-required", f"category {tax_category!r} requires a KYC attestation"
            )
        if onward_transfer_allowed is None:
            onward_transfer_allowed = self.policy.onward_transfer_default
        cert = sign_certificate(
            self.identity,
            vendor_pub,
            legal_name,
            registration_ref,
            tax_category,
            onward_transfer_allowed,
            valid_from,
            valid_to,
        )
        self._commit({"kind": "vendor", "cert": cert.to_wire()})
        return cert

    def revoke_vendor(self, vendor_id: bytes, reason: str) -> list[str]:
        if vendor_id not in self.vendors:
            raise IssuerError("unknown-vendor", "vendor not registered")
        self._commit({"kind": "revoke", "vendor_id": b64u(vendor_id), "reason": reason})
        return sorted(b64u(v) for v in self.revoked)

    # -- redemption -----------------------------------------------------------------------

    def redeem(self, request: dict, now: int) -> dict:
        """Validate a redemption bundle and settle it atomically.

        Identical requests (same nonce) are idempotent and return the
        stored receipt; a fresh nonce for already-nullified tokens is a
        real second spend and fails with `double-redeem`.
        """
        request_digest = b64u(digest(request))
        existing = self.request_index.get(request_digest)
        if existing is not None:
            return self.receipts[existing]

        vendor_id = unb64u(request["vendor_id"], KEY_SIZE)
        items = request["items"]
        if not items:
            raise IssuerError("empty-bundle", "nothing to redeem")

        cert = self.vendors.get(vendor_id)
        if cert is None:
            raise IssuerError(UNREGISTERED_RECIPIENT, "vendor not registered")
        if vendor_id in self.revoked:
            raise IssuerError(REVOKED_CERTIFICATE, "vendor certificate revoked")

        auth = redemption_auth_bytes(
            vendor_id, str(request["nonce"]), int(request["timestamp"]), items
        )
        ident = PublicIdentity(key=vendor_id, role=ROLE_VENDOR)
        if not ident.verify(unb64u(request["auth_sig"], 64), auth):
            raise IssuerError(HOLDER_MISMATCH, "bundle not signed by redeeming vendor")

        registry = list(self.vendors.values())
        seen: set[bytes] = set()
        gross = 0
        token_pubs: list[bytes] = []
        for item in items:
            token = Token.from_wire(item["token"])
            chain = [TransferRecord.from_wire(w) for w in item["chain"]]
            proofs = [ProofOfProvenance.from_wire(w) for w in item.get("proofs", [])]

            if token.token_pub in seen:
                raise IssuerError(
                    DOUBLE_REDEEM,
                    "token repeated within bundle",
                    {"token_ids": [b64u(token.token_pub)]},
                )
            seen.add(token.token_pub)

            for record in chain:
                if record.recipient_id in self.revoked:
                    raise IssuerError(
                        REVOKED_CERTIFICATE, "chain passes through a revoked vendor"
                    )
                if record.recipient_id not in self.vendors:
                    raise IssuerError(
                        UNREGISTERED_RECIPIENT, "chain recipient is not registered"
                    )

            summary = verify_transfer_chain(
                token, chain, self.identity.public.key, registry, self.denom_keys
            )
            if not summary.valid:
                raise IssuerError(
                    INVALID_CHAIN, f"chain invalid: {summary.reason}",
                    {"token_id": b64u(token.token_pub), "reason": summary.reason},
                )
            if summary.final_holder != vendor_id:
                raise IssuerError(
                    HOLDER_MISMATCH, "bundle token is not held by the redeeming vendor"
                )

            proof_by_record = {p.record.digest(): p for p in proofs}
            for record in chain:
                pop = proof_by_record.get(record.digest())
                if pop is None or not verify_pop(pop, self.ledger_config):
                    raise IssuerError(
                        MISSING_POP,
                        "chain record lacks a quorum-verified proof",
                        {"record": b64u(record.digest())},
                    )

            if token.token_pub in self.nullifiers:
                raise IssuerError(
                    DOUBLE_REDEEM,
                    "token already redeemed",
                    {"token_ids": [b64u(token.token_pub)]},
                )
            gross += token.denomination
            token_pubs.append(token.token_pub)

        day_key = f"{b64u(vendor_id)}/{now // SECONDS_PER_DAY}"
        if self.day_totals.get(day_key, 0) + gross > self.policy.max_redemption_per_vendor_per_day:
            raise IssuerError(LIMIT_EXCEEDED, "daily redemption cap exceeded")

        rate = self.policy.rate_for(cert.tax_category)
        withheld = withheld_amount(gross, rate)
        receipt = {
            "gross": gross,
            "net": gross - withheld,
            "payout_ref": f"payout-{request_digest[:16]}",
            "policy_version": self.policy.version,
            "receipt_id": request_digest,
            "timestamp": now,
            "token_ids": [b64u(t) for t in token_pubs],
            "vendor_id": b64u(vendor_id),
            "withheld": withheld,
        }
        self._commit(
            {
                "kind": "redemption",
                "receipt": receipt,
                "token_pubs": [b64u(t) for t in token_pubs],
                "request_digest": request_digest,
                "day_key": day_key,
            }
        )
        return receipt

    # -- reporting ----------------------------------------------------------------------------

    def audit_report(self) -> dict:
        total_approved = sum(c.approved_amount for c in self.claims.values())
        total_issued = sum(b["total"] for b in self.issued_batches)
        gross = sum(int(r["gross"]) for r in self.receipts)
        withheld = sum(int(r["withheld"]) for r in self.receipts)
        net = sum(int(r["net"]) for r in self.receipts)
        return {
            "outstanding": total_issued - gross,
            "total_approved": total_approved,
            "total_issued": total_issued,
            "total_net": net,
            "total_redeemed_gross": gross,
            "total_withheld": withheld,
        }

    def keys_wire(self) -> dict:
        return {
            "denomination_keys": [k.to_wire() for k in self.denom_keys.values()],
            "issuer_key": b64u(self.identity.public.key),
            "ledger": self.ledger_config.to_wire(),
            "policy": self.policy.to_wire(),
        }

    def claim_view(self, claim_id: str) -> dict | None:
        claim = self.claims.get(claim_id)
        return claim.to_wire() if claim else None

    def close(self) -> None:
        if self.log is not None:
            self.log.close()
