"""Consumer bearer wallet.

Generates token keypairs, obtains blind accreditations against an
approved claim, composes exact payments (no change exists in this
system), signs transfers over to vendors, tracks spent state, and
exports encrypted backups. The wallet is the only holder of token
private keys; nothing it sends after issuance carries the claim id or
any cross-token identifier.
"""

from __future__ import annotations

import os
import secrets
import time
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .blindsig import Accreditation, DenominationPublicKey, blind, unblind
from .checkpoints import LedgerConfig
from .encoding import b64u, canonical_json, unb64u
from .history import SubmittedTransfer
from .identity import KEY_SIZE, ROLE_TOKEN, Identity
from .tokens import (
    ProofOfProvenance,
    Token,
    TransferRecord,
    VendorCertificate,
    accreditation_message,
    build_transfer,
    verify_certificate,
    verify_pop,
)

PENDING = "pending-accreditation"
SPENDABLE = "spendable"
SPENT = "spent"

CANNOT_COMPOSE = "cannot-compose"


class WalletError(Exception):
    def __init__(self, code: str, message: str = "", details: dict | None = None):
        super().__init__(message or code)
        self.code = code
        self.details = details or {}


@dataclass(frozen=True)
class Invoice:
    """A vendor's payment request: how much, which certificate to pay to,
    where the relay lives, and where to deliver the payment bundle."""

    invoice_id: str
    vendor_cert: VendorCertificate
    amount: int
    relay_url: str
    payment_url: str
    expiry: int

    def __post_init__(self) -> None:
        if self.amount <= 0:
            raise WalletError("bad-amount", "invoice amount must be positive")

    def to_wire(self) -> dict:
        return {
            "amount": self.amount,
            "expiry": self.expiry,
            "invoice_id": self.invoice_id,
            "payment_url": self.payment_url,
            "relay_url": self.relay_url,
            "type": "invoice",
            "vendor_cert": self.vendor_cert.to_wire(),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "Invoice":
        return cls(
            invoice_id=str(wire["invoice_id"]),
            vendor_cert=VendorCertificate.from_wire(wire["vendor_cert"]),
            amount=int(wire["amount"]),
            relay_url=str(wire.get("relay_url", "")),
            payment_url=str(wire.get("payment_url", "")),
            expiry=int(wire["expiry"]),
        )


# ---------------------------------------------------------------------------
# Encrypted blobs (store file and backups share the format)
# ---------------------------------------------------------------------------

_SCRYPT_N = 2**14
_SCRYPT_R = 8
_SCRYPT_P = 1


def _derive_key(passphrase: str, salt: bytes, n: int, r: int, p: int) -> bytes:
    return Scrypt(salt=salt, length=32, n=n, r=r, p=p).derive(passphrase.encode())


def encrypt_blob(payload: dict, passphrase: str) -> bytes:
    salt = secrets.token_bytes(16)
    nonce = secrets.token_bytes(12)
    key = _derive_key(passphrase, salt, _SCRYPT_N, _SCRYPT_R, _SCRYPT_P)
    box = ChaCha20Poly1305(key).encrypt(nonce, canonical_json(payload), b"")
    return canonical_json(
        {
            "box": b64u(box),
            "kdf": {
                "n": _SCRYPT_N,
                "name": "scrypt",
                "p": _SCRYPT_P,
                "r": _SCRYPT_R,
                "salt": b64u(salt),
            },
            "nonce": b64u(nonce),
            "version": 1,
        }
    )


def decrypt_blob(blob: bytes, passphrase: str) -> dict:
    import json

    try:
        outer = json.loads(blob)
        kdf = outer["kdf"]
        key = _derive_key(
            passphrase, unb64u(kdf["salt"], 16), int(kdf["n"]), int(kdf["r"]), int(kdf["p"])
        )
        plain = ChaCha20Poly1305(key).decrypt(
            unb64u(outer["nonce"], 12), unb64u(outer["box"]), b""
        )
        return json.loads(plain)
    except InvalidTag:
        raise WalletError("bad-passphrase", "authentication failed") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise WalletError("malformed-blob", str(exc)) from None


# ---------------------------------------------------------------------------
# Denomination arithmetic
# ---------------------------------------------------------------------------


def greedy_decompose(amount: int, schedule: list[int]) -> list[int]:
    """Largest-first decomposition of `amount` into schedule denominations."""
    if amount <= 0:
        raise WalletError("bad-amount", "amount must be positive")
    remaining = amount
    parts: list[int] = []
    for denom in sorted(schedule, reverse=True):
        while remaining >= denom:
            parts.append(denom)
            remaining -= denom
    if remaining:
        raise WalletError(
            "not-expressible",
            f"{amount} cannot be written in denominations {sorted(schedule)}",
        )
    return parts


def _reachable_sums(denoms: list[int]) -> dict[int, list[int]]:
    """Map of every reachable subset sum to one witness (list of indices)."""
    reachable: dict[int, list[int]] = {0: []}
    for idx, d in enumerate(denoms):
        additions = {}
        for total, witness in reachable.items():
            cand = total + d
            if cand not in reachable and cand not in additions:
                additions[cand] = witness + [idx]
        reachable.update(additions)
    return reachable


def select_exact(denoms: list[int], amount: int) -> list[int]:
    """Indices of a subset of `denoms` summing exactly to `amount`.

    Greedy largest-first usually lands it; the exhaustive subset-sum pass
    behind it is authoritative. Failure raises `cannot-compose` carrying
    the nearest achievable sums on both sides.
    """
    order = sorted(range(len(denoms)), key=lambda i: denoms[i], reverse=True)
    picked: list[int] = []
    remaining = amount
    for idx in order:
        if denoms[idx] <= remaining:
            picked.append(idx)
            remaining -= denoms[idx]
    if remaining == 0:
        return picked
    reachable = _reachable_sums(denoms)
    if amount in reachable:
        return reachable[amount]
    below = max((s for s in reachable if s < amount), default=0)
    above = min((s for s in reachable if s > amount), default=None)
    raise WalletError(
        CANNOT_COMPOSE,
        f"holdings cannot compose {amount} exactly",
        {"nearest_below": below, "nearest_above": above},
    )


# ---------------------------------------------------------------------------
# Wallet
# ---------------------------------------------------------------------------


@dataclass
class WalletToken:
    identity: Identity
    denomination: int
    state: str
    token: Token | None = None

    def to_wire(self) -> dict:
        return {
            "denomination": self.denomination,
            "seed": b64u(self.identity.seed_bytes()),
            "state": self.state,
            "token": self.token.to_wire() if self.token else None,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "WalletToken":
        return cls(
            identity=Identity.from_seed(unb64u(wire["seed"], 32), ROLE_TOKEN),
            denomination=int(wire["denomination"]),
            state=str(wire["state"]),
            token=Token.from_wire(wire["token"]) if wire.get("token") else None,
        )


_STATE_RANK = {PENDING: 0, SPENDABLE: 1, SPENT: 2}


class Wallet:
    """The consumer application. `issuer` and `relay` are client objects
    (in-process or HTTP; see api module) exposing the service verbs."""

    def __init__(
        self,
        issuer,
        relay,
        store_path: str | Path | None = None,
        passphrase: str | None = None,
        rng: Random | None = None,
        clock: Callable[[], int] | None = None,
        sleep: Callable[[float], None] | None = None,
        poll_base_s: float = 0.25,
        poll_retries: int = 8,
    ):
        self.issuer = issuer
        self.relay = relay
        self.store_path = Path(store_path) if store_path else None
        self.passphrase = passphrase
        self.rng = rng
        self.clock = clock or (lambda: int(time.time()))
        self.sleep = sleep or time.sleep
        self.poll_base_s = poll_base_s
        self.poll_retries = poll_retries

        self.tokens: dict[bytes, WalletToken] = {}
        self.claim_id: str | None = None
        self.issuer_keys: dict | None = None
        self.payment_cache: dict[str, dict] = {}
        self.invoices: dict[str, Invoice] = {}

        if self.store_path and self.store_path.exists():
            if self.passphrase is None:
                raise WalletError("bad-passphrase", "store exists; passphrase required")
            self._load_store()

    # -- persistence ---------------------------------------------------------

    def store_wire(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "invoices": {k: v.to_wire() for k, v in sorted(self.invoices.items())},
            "issuer_keys": self.issuer_keys,
            "payment_cache": self.payment_cache,
            "tokens": [
                self.tokens[k].to_wire() for k in sorted(self.tokens)
            ],
            "type": "wallet-store",
        }

    def _load_wire(self, wire: dict) -> None:
        self.claim_id = wire.get("claim_id")
        self.issuer_keys = wire.get("issuer_keys")
        self.payment_cache = dict(wire.get("payment_cache", {}))
        self.invoices = {
            k: Invoice.from_wire(v) for k, v in wire.get("invoices", {}).items()
        }
        self.tokens = {}
        for entry in wire.get("tokens", []):
            wt = WalletToken.from_wire(entry)
            self.tokens[wt.identity.public.key] = wt

    def save(self) -> None:
        if self.store_path is None:
            return
        if self.passphrase is None:
            raise WalletError("bad-passphrase", "passphrase required to persist")
        blob = encrypt_blob(self.store_wire(), self.passphrase)
        tmp = self.store_path.with_suffix(self.store_path.suffix + ".tmp")
        self.store_path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.store_path)

    def _load_store(self) -> None:
        assert self.store_path is not None and self.passphrase is not None
        self._load_wire(decrypt_blob(self.store_path.read_bytes(), self.passphrase))

    # -- issuer key cache ------------------------------------------------------

    def refresh_keys(self) -> dict:
        self.issuer_keys = self.issuer.get_keys()
        return self.issuer_keys

    def _keys(self) -> dict:
        if self.issuer_keys is None:
            self.refresh_keys()
        return self.issuer_keys

    def _denom_keys(self) -> dict[int, DenominationPublicKey]:
        keys = self._keys()
        out = {}
        for wire in keys["denomination_keys"]:
            key = DenominationPublicKey.from_wire(wire)
            out[key.denomination] = key
        return out

    def _relay_id(self) -> bytes:
        return LedgerConfig.from_wire(self._keys()["ledger"]).collective_id

    def _ledger_config(self) -> LedgerConfig:
        return LedgerConfig.from_wire(self._keys()["ledger"])

    # -- issuance ----------------------------------------------------------------

    def request_tokens(
        self,
        claim_id: str,
        amount: int | None = None,
        denominations: list[int] | None = None,
    ) -> list[Token]:
        """Obtain spendable tokens against a claim.

        Default decomposition is greedy largest-first over the issuer's
        schedule; pass `denominations` for an explicit breakdown (the
        issuer only ever sees denominations, never the split rationale).
        """
        denom_keys = self._denom_keys()
        schedule = sorted(denom_keys)
        if denominations is None:
            if amount is None:
                raise WalletError("bad-amount", "amount or denominations required")
            denominations = greedy_decompose(amount, schedule)
        else:
            for d in denominations:
                if d not in denom_keys:
                    raise WalletError("not-expressible", f"no denomination {d}")
            if amount is not None and sum(denominations) != amount:
                raise WalletError("bad-amount", "denominations do not sum to amount")

        relay_id = self._relay_id()
        batch = []
        for denom in denominations:
            ident = (
                Identity.generate_seeded(ROLE_TOKEN, self.rng)
                if self.rng is not None
                else Identity.generate(ROLE_TOKEN)
            )
            message = accreditation_message(ident.public.key, relay_id)
            blinded, factor = blind(message, denom_keys[denom], self.rng)
            batch.append((ident, denom, blinded, factor))

        signatures = self.issuer.issue_accreditations(
            claim_id, [b.to_wire() for _, _, b, _ in batch]
        )
        if len(signatures) != len(batch):
            raise WalletError("accreditation-failed", "issuer returned a short batch")

        minted: list[Token] = []
        for (ident, denom, _blinded, factor), sig in zip(batch, signatures):
            accreditation = unblind(int(sig, 16), factor, denom_keys[denom])
            token = Token(
                token_pub=ident.public.key,
                relay_id=relay_id,
                denomination=denom,
                accreditation=accreditation,
            )
            if not token.verify(denom_keys[denom]):
                raise WalletError(
                    "accreditation-failed",
                    "an accreditation failed verification; batch not accepted",
                )
            minted.append(token)

        # Only after the whole batch verifies does anything become spendable;
        # blinding factors are gone once this method returns.
        for (ident, denom, _b, _f), token in zip(batch, minted):
            self.tokens[ident.public.key] = WalletToken(
                identity=ident, denomination=denom, state=SPENDABLE, token=token
            )
        self.claim_id = claim_id
        self.save()
        return minted

    # -- balance and selection ------------------------------------------------------

    def balance(self) -> dict:
        spendable = [t for t in self.tokens.values() if t.state == SPENDABLE]
        spent = [t for t in self.tokens.values() if t.state == SPENT]
        pending = [t for t in self.tokens.values() if t.state == PENDING]
        return {
            "pending": sum(t.denomination for t in pending),
            "spendable": sum(t.denomination for t in spendable),
            "spendable_tokens": [
                {"denomination": t.denomination, "token_id": b64u(t.identity.public.key)}
                for t in sorted(spendable, key=lambda t: (-t.denomination, t.identity.public.key))
            ],
            "spent": sum(t.denomination for t in spent),
            "total": sum(t.denomination for t in self.tokens.values()),
        }

    def select_tokens(self, amount: int) -> list[WalletToken]:
        spendable = sorted(
            (t for t in self.tokens.values() if t.state == SPENDABLE),
            key=lambda t: (-t.denomination, t.identity.public.key),
        )
        indices = select_exact([t.denomination for t in spendable], amount)
        return [spendable[i] for i in indices]

    # -- payment ------------------------------------------------------------------------

    def ingest_invoice(self, wire: dict) -> Invoice:
        """Store a vendor invoice (pasted file or scanned payload) for review
        and later payment by id."""
        invoice = Invoice.from_wire(wire)
        self.invoices[invoice.invoice_id] = invoice
        self.save()
        return invoice

    def pay(self, invoice: Invoice, deliver: Callable[[list[dict]], dict] | None = None) -> dict:
        """Pay an invoice: sign selected tokens over to the vendor, submit
        to the relay, wait for proofs, and hand the triples to `deliver`.

        Retrying the same invoice reuses the cached signed records, so a
        timed-out attempt resubmits identically (the relay treats it as a
        duplicate) instead of burning fresh tokens.
        """
        now = self.clock()
        if now > invoice.expiry:
            raise WalletError("expired-invoice", "invoice expiry has passed")
        keys = self._keys()
        issuer_pub = unb64u(keys["issuer_key"], KEY_SIZE)
        if not verify_certificate(invoice.vendor_cert, issuer_pub, now):
            raise WalletError("bad-certificate", "vendor certificate does not verify")

        cached = self.payment_cache.get(invoice.invoice_id)
        if cached is not None:
            plan = [
                (
                    Token.from_wire(entry["token"]),
                    TransferRecord.from_wire(entry["record"]),
                )
                for entry in cached["entries"]
            ]
        else:
            selected = self.select_tokens(invoice.amount)
            plan = []
            for wt in selected:
                record = build_transfer(
                    wt.token, invoice.vendor_cert, wt.identity, now, issuer_pub
                )
                plan.append((wt.token, record))
            self.payment_cache[invoice.invoice_id] = {
                "entries": [
                    {"record": r.to_wire(), "token": t.to_wire()} for t, r in plan
                ]
            }
            self.save()

        triples: list[dict] = []
        for token, record in plan:
            sub = SubmittedTransfer(
                token=token, record=record, certs=(invoice.vendor_cert,)
            )
            receipt = self.relay.submit(sub.to_wire())
            status = receipt.get("status")
            if status == "rejected":
                code = receipt.get("code")
                if code == "stale-prev":
                    self._mark_spent([token.token_pub])
                    raise WalletError(
                        "double-spend",
                        "relay reports this token's history has already moved on "
                        "(restored backup or corrupted store?)",
                        {"token_id": b64u(token.token_pub)},
                    )
                raise WalletError("relay-rejected", f"relay refused the record: {code}")
            # Relay accepted (pending or already finalized): the token is
            # committed to this vendor no matter what happens next.
            self._mark_spent([token.token_pub])
            pop = self._await_proof(record)
            triples.append(
                {
                    "proof": pop.to_wire(),
                    "record": record.to_wire(),
                    "token": token.to_wire(),
                }
            )
        self.save()

        result = {"invoice_id": invoice.invoice_id, "triples": triples}
        if deliver is not None:
            result["delivery"] = deliver(triples)
        return result

    def _await_proof(self, record: TransferRecord) -> ProofOfProvenance:
        rdigest = record.digest()
        delay = self.poll_base_s
        for _ in range(self.poll_retries):
            resp = self.relay.proof(rdigest)
            if resp.get("status") == "finalized":
                pop = ProofOfProvenance.from_wire(resp["proof"])
                if not verify_pop(pop, self._ledger_config()):
                    raise WalletError("bad-proof", "relay returned an unverifiable proof")
                return pop
            if resp.get("status") == "rejected":
                raise WalletError(
                    "relay-rejected", f"record rejected after acceptance: {resp.get('code')}"
                )
            self.sleep(delay)
            delay *= 2
        raise WalletError("proof-timeout", "no proof of provenance before timeout")

    def _mark_spent(self, token_pubs: list[bytes]) -> None:
        for pub in token_pubs:
            wt = self.tokens.get(pub)
            if wt is not None:
                wt.state = SPENT

    # -- backup -------------------------------------------------------------------

    def export_backup(self, passphrase: str) -> bytes:
        return encrypt_blob(self.store_wire(), passphrase)

    def import_backup(self, blob: bytes, passphrase: str) -> dict:
        """Merge a backup in. Token states only move forward: a token spent
        anywhere is spent everywhere."""
        wire = decrypt_blob(blob, passphrase)
        added = 0
        upgraded = 0
        for entry in wire.get("tokens", []):
            incoming = WalletToken.from_wire(entry)
            pub = incoming.identity.public.key
            mine = self.tokens.get(pub)
            if mine is None:
                self.tokens[pub] = incoming
                added += 1
            elif _STATE_RANK[incoming.state] > _STATE_RANK[mine.state]:
                mine.state = incoming.state
                if mine.token is None:
                    mine.token = incoming.token
                upgraded += 1
        if self.claim_id is None:
            self.claim_id = wire.get("claim_id")
        if self.issuer_keys is None:
            self.issuer_keys = wire.get("issuer_keys")
        self.save()
        return {"added": added, "upgraded": upgraded}
