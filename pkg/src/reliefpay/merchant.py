"""Vendor-side service.

Issues invoices, verifies incoming payment bundles against the token
rules and quorum-signed checkpoints, optionally signs holdings over to
certified suppliers, and redeems with the issuer. State changes go
through a durable event log so a restart reconstructs invoices,
holdings, and in-flight redemption requests (idempotent retry keeps
the same nonce).
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable

from .checkpoints import LedgerConfig
from .encoding import b64u, digest, unb64u
from .eventlog import EventLog
from .history import SubmittedTransfer
from .identity import KEY_SIZE, Identity
from .issuer import build_redemption_request
from .blindsig import DenominationPublicKey
from .tokens import (
    ProofOfProvenance,
    Token,
    TransferRecord,
    VendorCertificate,
    build_transfer,
    verify_certificate,
    verify_pop,
    verify_transfer_chain,
)
from .wallet import Invoice

HELD = "held"
TRANSFERRED = "transferred"
REDEEMED = "redeemed"

WRONG_RECIPIENT = "wrong-recipient"
BAD_PROOF = "bad-proof"
WRONG_AMOUNT = "wrong-amount"
EXPIRED_INVOICE = "expired-invoice"
DUPLICATE_TOKEN = "duplicate-token-in-bundle"
ALREADY_HELD = "token-already-held"


class MerchantError(Exception):
    def __init__(self, code: str, message: str = "", details: dict | None = None):
        super().__init__(message or code)
        self.code = code
        self.details = details or {}


@dataclass
class Holding:
    token: Token
    chain: list[TransferRecord]
    proofs: list[ProofOfProvenance]
    certs: list[dict]
    status: str = HELD
    invoice_id: str | None = None

    def to_wire(self) -> dict:
        return {
            "certs": self.certs,
            "chain": [r.to_wire() for r in self.chain],
            "invoice_id": self.invoice_id,
            "proofs": [p.to_wire() for p in self.proofs],
            "status": self.status,
            "token": self.token.to_wire(),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "Holding":
        return cls(
            token=Token.from_wire(wire["token"]),
            chain=[TransferRecord.from_wire(w) for w in wire["chain"]],
            proofs=[ProofOfProvenance.from_wire(w) for w in wire["proofs"]],
            certs=list(wire.get("certs", [])),
            status=str(wire["status"]),
            invoice_id=wire.get("invoice_id"),
        )

    def item_wire(self) -> dict:
        return {
            "chain": [r.to_wire() for r in self.chain],
            "proofs": [p.to_wire() for p in self.proofs],
            "token": self.token.to_wire(),
        }


@dataclass
class InvoiceEntry:
    invoice: Invoice
    status: str = "open"
    bundle_digest: str | None = None
    receipt: dict | None = None


@dataclass
class Merchant:
    """The vendor application. `issuer` and `relay` are client objects
    with the same verbs the wallet uses."""

    identity: Identity
    certificate: VendorCertificate
    issuer: object
    relay: object
    data_dir: str | Path | None = None
    clock: Callable[[], int] | None = None
    sleep: Callable[[float], None] | None = None
    rng: Random | None = None
    poll_base_s: float = 0.25
    poll_retries: int = 8

    invoices: dict[str, InvoiceEntry] = field(default_factory=dict)
    holdings: dict[bytes, Holding] = field(default_factory=dict)
    receipts: list[dict] = field(default_factory=list)
    pending_redemptions: dict[str, dict] = field(default_factory=dict)
    issuer_keys: dict | None = None

    def __post_init__(self) -> None:
        self.clock = self.clock or (lambda: int(time.time()))
        self.sleep = self.sleep or time.sleep
        self.log: EventLog | None = None
        if self.data_dir is not None:
            path = Path(self.data_dir)
            path.mkdir(parents=True, exist_ok=True)
            self.log = EventLog(path / "merchant-log.jsonl")
            for event in self.log.replay():
                self._apply(event)

    # -- event sourcing -------------------------------------------------------

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "invoice":
            invoice = Invoice.from_wire(event["invoice"])
            self.invoices[invoice.invoice_id] = InvoiceEntry(invoice=invoice)
        elif kind == "expire":
            self.invoices[event["invoice_id"]].status = "expired"
        elif kind == "payment":
            entry = self.invoices[event["invoice_id"]]
            entry.status = "paid"
            entry.bundle_digest = event["bundle_digest"]
            entry.receipt = event["receipt"]
            for wire in event["holdings"]:
                holding = Holding.from_wire(wire)
                self.holdings[holding.token.token_pub] = holding
        elif kind == "onward":
            for wire in event["holdings"]:
                holding = Holding.from_wire(wire)
                self.holdings[holding.token.token_pub] = holding
        elif kind == "redeem-request":
            self.pending_redemptions[event["selection"]] = event["request"]
        elif kind == "redeem":
            for token_id in event["token_ids"]:
                self.holdings[unb64u(token_id, KEY_SIZE)].status = REDEEMED
            self.receipts.append(event["receipt"])
            self.pending_redemptions.pop(event["selection"], None)
        else:
            raise MerchantError("unknown-event", kind)

    def _commit(self, event: dict) -> None:
        self._apply(event)
        if self.log is not None:
            self.log.append(event)

    # -- issuer material --------------------------------------------------------

    def _keys(self) -> dict:
        if self.issuer_keys is None:
            self.issuer_keys = self.issuer.get_keys()
        return self.issuer_keys

    def _issuer_pub(self) -> bytes:
        return unb64u(self._keys()["issuer_key"], KEY_SIZE)

    def _denom_keys(self) -> dict[int, DenominationPublicKey]:
        out = {}
        for wire in self._keys()["denomination_keys"]:
            key = DenominationPublicKey.from_wire(wire)
            out[key.denomination] = key
        return out

    def _ledger_config(self) -> LedgerConfig:
        return LedgerConfig.from_wire(self._keys()["ledger"])

    def _fresh_id(self, prefix: str) -> str:
        if self.rng is not None:
            raw = self.rng.getrandbits(72).to_bytes(9, "big")
        else:
            raw = secrets.token_bytes(9)
        return f"{prefix}-{b64u(raw)}"

    # -- invoices ------------------------------------------------------------------

    def create_invoice(
        self,
        amount: int,
        ttl: int,
        relay_url: str = "",
        payment_url: str = "",
        now: int | None = None,
    ) -> Invoice:
        now = self.clock() if now is None else now
        if amount <= 0:
            raise MerchantError("bad-amount", "invoice amount must be positive")
        if ttl <= 0:
            raise MerchantError("bad-ttl", "ttl must be positive")
        if not verify_certificate(self.certificate, self._issuer_pub(), now):
            raise MerchantError("bad-certificate", "own certificate is not currently valid")
        if now + ttl > self.certificate.valid_to:
            raise MerchantError(
                "bad-certificate", "invoice would outlive the vendor certificate"
            )
        invoice_id = self._fresh_id("inv")
        if payment_url:
            payment_url = payment_url.format(invoice_id=invoice_id)
        invoice = Invoice(
            invoice_id=invoice_id,
            vendor_cert=self.certificate,
            amount=amount,
            relay_url=relay_url,
            payment_url=payment_url,
            expiry=now + ttl,
        )
        self._commit({"invoice": invoice.to_wire(), "kind": "invoice"})
        return invoice

    def invoice_status(self, invoice_id: str) -> dict:
        entry = self.invoices.get(invoice_id)
        if entry is None:
            raise MerchantError("unknown-invoice", invoice_id)
        out = {"invoice": entry.invoice.to_wire(), "status": entry.status}
        if entry.receipt is not None:
            out["receipt"] = entry.receipt
        return out

    # -- payment acceptance -------------------------------------------------------

    def accept_payment(self, invoice_id: str, triples: list[dict], now: int | None = None) -> dict:
        """Verify a payment bundle against an open invoice.

        Each triple carries the token, the record transferring it to this
        vendor, that record's proof, and (for tokens with history) the
        prior records, proofs, and certificates needed to check the whole
        chain locally. Resubmitting the same bundle returns the stored
        receipt.
        """
        now = self.clock() if now is None else now
        entry = self.invoices.get(invoice_id)
        if entry is None:
            raise MerchantError("unknown-invoice", invoice_id)

        bundle_digest = b64u(digest(triples))
        if entry.status == "paid":
            if entry.bundle_digest == bundle_digest:
                return entry.receipt
            raise MerchantError("already-paid", "invoice was paid by a different bundle")
        if entry.status == "expired" or now > entry.invoice.expiry:
            if entry.status == "open":
                self._commit({"invoice_id": invoice_id, "kind": "expire"})
            raise MerchantError(EXPIRED_INVOICE, "invoice expiry has passed")

        issuer_pub = self._issuer_pub()
        denom_keys = self._denom_keys()
        ledger = self._ledger_config()

        seen: set[bytes] = set()
        parsed: list[Holding] = []
        total = 0
        for triple in triples:
            token = Token.from_wire(triple["token"])
            if token.token_pub in seen:
                raise MerchantError(
                    DUPLICATE_TOKEN, "same token appears twice in the bundle"
                )
            seen.add(token.token_pub)
            if token.token_pub in self.holdings:
                # A replayed triple stays relay-valid (the relay dedupes the
                # identical record), so the vendor must refuse to credit one
                # token against a second invoice itself.
                raise MerchantError(
                    ALREADY_HELD, "token was already accepted for another invoice"
                )

            final = TransferRecord.from_wire(triple["record"])
            final_proof = ProofOfProvenance.from_wire(triple["proof"])
            prior = triple.get("prior", [])
            chain = [TransferRecord.from_wire(p["record"]) for p in prior] + [final]
            proofs = [ProofOfProvenance.from_wire(p["proof"]) for p in prior] + [final_proof]
            cert_wires = list(triple.get("certs", []))

            if final.recipient_id != self.identity.public.key:
                raise MerchantError(
                    WRONG_RECIPIENT, "final record names a different vendor"
                )

            registry = [VendorCertificate.from_wire(w) for w in cert_wires]
            registry.append(self.certificate)
            summary = verify_transfer_chain(token, chain, issuer_pub, registry, denom_keys)
            if not summary.valid:
                raise MerchantError(
                    "invalid-chain",
                    f"token history does not verify: {summary.reason}",
                    {"reason": summary.reason},
                )

            proof_by_record = {p.record.digest(): p for p in proofs}
            for record in chain:
                pop = proof_by_record.get(record.digest())
                if pop is None or not verify_pop(pop, ledger):
                    raise MerchantError(
                        BAD_PROOF, "a chain record lacks a quorum-verified proof"
                    )

            total += token.denomination
            parsed.append(
                Holding(
                    token=token,
                    chain=chain,
                    proofs=proofs,
                    certs=cert_wires + [self.certificate.to_wire()],
                    status=HELD,
                    invoice_id=invoice_id,
                )
            )

        if total != entry.invoice.amount:
            raise MerchantError(
                WRONG_AMOUNT,
                f"bundle sums to {total}, invoice wants {entry.invoice.amount}",
            )

        receipt = {
            "amount": total,
            "bundle_digest": bundle_digest,
            "invoice_id": invoice_id,
            "status": "paid",
            "token_ids": sorted(b64u(h.token.token_pub) for h in parsed),
        }
        self._commit(
            {
                "bundle_digest": bundle_digest,
                "holdings": [h.to_wire() for h in parsed],
                "invoice_id": invoice_id,
                "kind": "payment",
                "receipt": receipt,
            }
        )
        return receipt

    # -- onward transfer ------------------------------------------------------------

    def transfer_onward(
        self,
        token_ids: list[str],
        supplier_cert: VendorCertificate,
        now: int | None = None,
    ) -> dict:
        """Sign held tokens over to a certified supplier and hand back a
        delivery bundle shaped exactly like an incoming payment."""
        now = self.clock() if now is None else now
        if not self.certificate.onward_transfer_allowed:
            raise MerchantError(
                "onward-not-permitted",
                "this vendor's certificate does not allow onward transfer",
            )
        issuer_pub = self._issuer_pub()
        if not verify_certificate(supplier_cert, issuer_pub, now):
            raise MerchantError("bad-certificate", "supplier certificate does not verify")

        selected: list[Holding] = []
        for token_id in token_ids:
            holding = self.holdings.get(unb64u(token_id, KEY_SIZE))
            if holding is None or holding.status != HELD:
                raise MerchantError("not-held", f"token {token_id} is not held")
            selected.append(holding)

        triples = []
        updated = []
        for holding in selected:
            record = build_transfer(
                holding.chain[-1],
                supplier_cert,
                self.identity,
                now,
                issuer_pub,
                signer_cert=self.certificate,
            )
            sub = SubmittedTransfer(
                token=holding.token,
                record=record,
                certs=(supplier_cert, self.certificate),
            )
            receipt = self.relay.submit(sub.to_wire())
            if receipt.get("status") == "rejected":
                raise MerchantError(
                    "relay-rejected",
                    f"relay refused the transfer: {receipt.get('code')}",
                    {"code": receipt.get("code")},
                )
            pop = self._await_proof(record)
            prior = [
                {"proof": p.to_wire(), "record": r.to_wire()}
                for r, p in zip(holding.chain, holding.proofs)
            ]
            triples.append(
                {
                    "certs": holding.certs,
                    "prior": prior,
                    "proof": pop.to_wire(),
                    "record": record.to_wire(),
                    "token": holding.token.to_wire(),
                }
            )
            updated.append(
                Holding(
                    token=holding.token,
                    chain=holding.chain + [record],
                    proofs=holding.proofs + [pop],
                    certs=holding.certs,
                    status=TRANSFERRED,
                    invoice_id=holding.invoice_id,
                )
            )

        self._commit({"holdings": [h.to_wire() for h in updated], "kind": "onward"})
        return {
            "supplier_id": b64u(supplier_cert.vendor_id),
            "triples": triples,
        }

    def _await_proof(self, record: TransferRecord) -> ProofOfProvenance:
        rdigest = record.digest()
        delay = self.poll_base_s
        for _ in range(self.poll_retries):
            resp = self.relay.proof(rdigest)
            if resp.get("status") == "finalized":
                pop = ProofOfProvenance.from_wire(resp["proof"])
                if not verify_pop(pop, self._ledger_config()):
                    raise MerchantError(BAD_PROOF, "relay returned an unverifiable proof")
                return pop
            if resp.get("status") == "rejected":
                raise MerchantError(
                    "relay-rejected", f"record rejected: {resp.get('code')}"
                )
            self.sleep(delay)
            delay *= 2
        raise MerchantError("proof-timeout", "no proof of provenance before timeout")

    # -- redemption -----------------------------------------------------------------

    def redeem_holdings(self, token_ids: list[str], now: int | None = None) -> dict:
        """Redeem held tokens with the issuer. The signed request is logged
        before it leaves, so a retry after a network failure resends the
        identical request and the issuer's idempotency absorbs it."""
        now = self.clock() if now is None else now
        selected: list[Holding] = []
        for token_id in token_ids:
            holding = self.holdings.get(unb64u(token_id, KEY_SIZE))
            if holding is None:
                raise MerchantError("not-held", f"token {token_id} is unknown")
            if holding.status != HELD:
                raise MerchantError(
                    "not-held", f"token {token_id} is already {holding.status}"
                )
            selected.append(holding)
        if not selected:
            raise MerchantError("empty-bundle", "nothing selected to redeem")

        selection = b64u(digest(sorted(token_ids)))
        request = self.pending_redemptions.get(selection)
        if request is None:
            items = [h.item_wire() for h in selected]
            nonce = None
            if self.rng is not None:
                nonce = b64u(self.rng.getrandbits(128).to_bytes(16, "big"))
            request = build_redemption_request(self.identity, items, now, nonce)
            self._commit({"kind": "redeem-request", "request": request, "selection": selection})

        receipt = self.issuer.redeem(request)
        self._commit(
            {
                "kind": "redeem",
                "receipt": receipt,
                "selection": selection,
                "token_ids": sorted(b64u(h.token.token_pub) for h in selected),
            }
        )
        return receipt

    # -- views ------------------------------------------------------------------------

    def holdings_view(self) -> dict:
        out = {HELD: [], TRANSFERRED: [], REDEEMED: []}
        for pub in sorted(self.holdings):
            holding = self.holdings[pub]
            out[holding.status].append(
                {
                    "denomination": holding.token.denomination,
                    "hops": len(holding.chain),
                    "invoice_id": holding.invoice_id,
                    "token_id": b64u(pub),
                }
            )
        return {
            "held": out[HELD],
            "redeemed": out[REDEEMED],
            "totals": {
                "held": sum(h["denomination"] for h in out[HELD]),
                "redeemed": sum(h["denomination"] for h in out[REDEEMED]),
                "transferred": sum(h["denomination"] for h in out[TRANSFERRED]),
            },
            "transferred": out[TRANSFERRED],
        }

    def close(self) -> None:
        if self.log is not None:
            self.log.close()
