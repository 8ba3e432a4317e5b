"""HTTP faces for the four services, plus the client adapters the wallet
and merchant use to reach the issuer and relay.

Every response body is canonical JSON. Errors come back as
{"error": code, "message": ..., "details": {...}} with a status code in
the 4xx range; machine codes match the service-layer exceptions, so an
HTTP client can re-raise them losslessly.

The in-process client classes speak to service objects directly with the
same verbs as the HTTP clients, which keeps the wallet and merchant
logic transport-blind.
"""

from __future__ import annotations

import time
from typing import Callable

import httpx
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .blindsig import BlindedMessage
from .encoding import DIGEST_SIZE, EncodingError, b64u, canonical_json, int_to_hex, unb64u
from .history import SubmittedTransfer
from .identity import KEY_SIZE
from .issuer import IssuerError, IssuerService
from .merchant import Merchant, MerchantError
from .relay import RelayNode
from .tokens import TokenError, VendorCertificate
from .wallet import Invoice, Wallet, WalletError

_JSON = "application/json"

_STATUS_BY_CODE = {
    "already-paid": 409,
    "double-redeem": 409,
    "duplicate": 409,
    "duplicate-claim": 409,
    "not-found": 404,
    "unknown-claim": 404,
    "unknown-invoice": 404,
    "unknown-vendor": 404,
}


def canonical_response(data, status: int = 200) -> Response:
    return Response(content=canonical_json(data), media_type=_JSON, status_code=status)


def error_response(code: str, message: str = "", details: dict | None = None) -> Response:
    return canonical_response(
        {"details": details or {}, "error": code, "message": message},
        _STATUS_BY_CODE.get(code, 400),
    )


def _trap(fn: Callable) -> Callable:
    """Translate service exceptions and malformed bodies into error JSON."""

    async def wrapper(request: Request):
        try:
            return await fn(request)
        except (IssuerError, MerchantError, WalletError) as exc:
            return error_response(exc.code, str(exc), exc.details)
        except TokenError as exc:
            return error_response("invalid-record", str(exc))
        except (EncodingError, KeyError, ValueError, TypeError) as exc:
            return error_response("malformed", str(exc))

    return wrapper


def _raise_for(resp: httpx.Response, exc_type) -> dict:
    data = resp.json()
    if resp.status_code >= 400:
        raise exc_type(
            data.get("error", "http-error"),
            data.get("message", ""),
            data.get("details", {}),
        )
    return data


# ---------------------------------------------------------------------------
# Relay
# ---------------------------------------------------------------------------


def create_relay_app(node: RelayNode, auto_seal: bool | None = None) -> FastAPI:
    """HTTP face of one relay node. With a single-member ledger the batch
    seals synchronously after each accepted submission; a multi-member
    deployment drives node.tick from its transport loop instead."""
    if auto_seal is None:
        auto_seal = len(node.member.config.members) == 1
    app = FastAPI(title="relay", docs_url=None, redoc_url=None)

    @app.post("/v1/transfers")
    @_trap
    async def submit(request: Request):
        sub = SubmittedTransfer.from_wire(await request.json())
        receipt = node.submit(sub)
        if auto_seal and receipt["status"] == "pending":
            node.seal()
        return canonical_response(receipt)

    @app.get("/v1/proofs/{record_digest}")
    @_trap
    async def proof(request: Request):
        rdigest = unb64u(request.path_params["record_digest"], DIGEST_SIZE)
        resp = node.proof(rdigest)
        status = 404 if resp["status"] == "not-found" else 200
        return canonical_response(resp, status)

    @app.get("/v1/tokens/{token_id}")
    @_trap
    async def token(request: Request):
        token_pub = unb64u(request.path_params["token_id"], KEY_SIZE)
        return canonical_response(node.token_view(token_pub))

    @app.get("/v1/checkpoints/latest")
    @_trap
    async def latest(request: Request):
        cp = node.latest_checkpoint()
        if cp is None:
            return error_response("not-found", "no checkpoint finalized yet")
        return canonical_response(cp.to_wire())

    @app.post("/v1/consensus/inbox")
    @_trap
    async def inbox(request: Request):
        node.handle_inbox(await request.json())
        return canonical_response({"ok": True})

    return app


# ---------------------------------------------------------------------------
# Issuer
# ---------------------------------------------------------------------------


def create_issuer_app(
    service: IssuerService,
    admin_token: str,
    clock: Callable[[], int] | None = None,
) -> FastAPI:
    clock = clock or (lambda: int(time.time()))
    app = FastAPI(title="issuer", docs_url=None, redoc_url=None)

    def _authorized(request: Request) -> bool:
        return request.headers.get("authorization") == f"Bearer {admin_token}"

    @app.post("/v1/claims")
    @_trap
    async def claims(request: Request):
        if not _authorized(request):
            return canonical_response({"error": "unauthorized"}, 401)
        body = await request.json()
        claim = service.approve_claim(str(body["claim_id"]), int(body["amount"]))
        return canonical_response(claim.to_wire())

    @app.post("/v1/claims/{claim_id}/freeze")
    @_trap
    async def freeze(request: Request):
        if not _authorized(request):
            return canonical_response({"error": "unauthorized"}, 401)
        claim = service.freeze_claim(request.path_params["claim_id"])
        return canonical_response(claim.to_wire())

    @app.get("/v1/claims/{claim_id}")
    @_trap
    async def claim_view(request: Request):
        if not _authorized(request):
            return canonical_response({"error": "unauthorized"}, 401)
        view = service.claim_view(request.path_params["claim_id"])
        if view is None:
            return error_response("unknown-claim", "no such claim")
        return canonical_response(view)

    @app.post("/v1/accreditations")
    @_trap
    async def accreditations(request: Request):
        body = await request.json()
        requests = [BlindedMessage.from_wire(w) for w in body["requests"]]
        signatures = service.issue_accreditations(str(body["claim_id"]), requests)
        return canonical_response({"signatures": [int_to_hex(s) for s in signatures]})

    @app.post("/v1/vendors")
    @_trap
    async def vendors(request: Request):
        if not _authorized(request):
            return canonical_response({"error": "unauthorized"}, 401)
        body = await request.json()
        cert = service.register_vendor(
            vendor_pub=unb64u(body["vendor_pub"], KEY_SIZE),
            legal_name=str(body["legal_name"]),
            registration_ref=str(body["registration_ref"]),
            tax_category=str(body["tax_category"]),
            valid_from=int(body["valid_from"]),
            valid_to=int(body["valid_to"]),
            onward_transfer_allowed=body.get("onward_transfer_allowed"),
            kyc_attested=bool(body.get("kyc_attested", False)),
        )
        return canonical_response(cert.to_wire())

    @app.post("/v1/vendors/{vendor_id}/revoke")
    @_trap
    async def revoke(request: Request):
        if not _authorized(request):
            return canonical_response({"error": "unauthorized"}, 401)
        body = await request.json()
        revoked = service.revoke_vendor(
            unb64u(request.path_params["vendor_id"], KEY_SIZE),
            str(body.get("reason", "")),
        )
        return canonical_response({"revoked": revoked})

    @app.post("/v1/redemptions")
    @_trap
    async def redemptions(request: Request):
        receipt = service.redeem(await request.json(), clock())
        return canonical_response(receipt)

    @app.get("/v1/audit")
    @_trap
    async def audit(request: Request):
        return canonical_response(service.audit_report())

    @app.get("/v1/keys")
    @_trap
    async def keys(request: Request):
        return canonical_response(service.keys_wire())

    return app


# ---------------------------------------------------------------------------
# Wallet (local API for the console)
# ---------------------------------------------------------------------------


def create_wallet_app(
    wallet: Wallet,
    deliver_factory: Callable[[str], Callable[[list[dict]], dict]] | None = None,
) -> FastAPI:
    """Local HTTP face of one wallet. `deliver_factory(payment_url)` builds
    the callable that posts the payment bundle to the vendor; the default
    uses a plain HTTP client."""
    app = FastAPI(title="wallet", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    payment_results: dict[str, dict] = {}

    if deliver_factory is None:
        outbound = httpx.Client(timeout=30.0)

        def deliver_factory(payment_url: str):
            return http_deliverer(outbound, payment_url)

    @app.get("/v1/balance")
    @_trap
    async def balance(request: Request):
        return canonical_response(wallet.balance())

    @app.post("/v1/request")
    @_trap
    async def request_tokens(request: Request):
        body = await request.json()
        denominations = body.get("denominations")
        if denominations is not None:
            denominations = [int(d) for d in denominations]
        amount = body.get("amount")
        tokens = wallet.request_tokens(
            str(body["claim_id"]),
            int(amount) if amount is not None else None,
            denominations,
        )
        return canonical_response(
            {
                "balance": wallet.balance(),
                "tokens": [t.to_wire() for t in tokens],
            }
        )

    @app.post("/v1/invoices")
    @_trap
    async def ingest(request: Request):
        invoice = wallet.ingest_invoice(await request.json())
        return canonical_response(invoice.to_wire())

    @app.get("/v1/invoices")
    @_trap
    async def invoices(request: Request):
        out = []
        for invoice_id in sorted(wallet.invoices):
            entry = {"invoice": wallet.invoices[invoice_id].to_wire(), "status": "open"}
            if invoice_id in payment_results:
                entry["status"] = "paid"
                entry["result"] = payment_results[invoice_id]
            out.append(entry)
        return canonical_response({"invoices": out})

    @app.post("/v1/pay")
    @_trap
    async def pay(request: Request):
        body = await request.json()
        if "invoice" in body:
            invoice = wallet.ingest_invoice(body["invoice"])
        else:
            invoice = wallet.invoices.get(str(body["invoice_id"]))
            if invoice is None:
                return error_response("unknown-invoice", "ingest the invoice first")
        deliver = (
            deliver_factory(invoice.payment_url) if invoice.payment_url else None
        )
        result = wallet.pay(invoice, deliver)
        summary = {
            "delivery": result.get("delivery"),
            "invoice_id": invoice.invoice_id,
            "token_count": len(result["triples"]),
        }
        payment_results[invoice.invoice_id] = summary
        return canonical_response(result | {"summary": summary})

    return app


# ---------------------------------------------------------------------------
# Merchant
# ---------------------------------------------------------------------------


def create_merchant_app(merchant: Merchant, base_url: str = "") -> FastAPI:
    """HTTP face of one merchant. Invoices minted here carry a payment_url
    pointing back at this app's payment endpoint."""
    app = FastAPI(title="merchant", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.post("/v1/invoices")
    @_trap
    async def invoices(request: Request):
        body = await request.json()
        invoice = merchant.create_invoice(
            amount=int(body["amount"]),
            ttl=int(body.get("ttl", 3600)),
            relay_url=str(body.get("relay_url", "")),
            payment_url=f"{base_url}/v1/invoices/{{invoice_id}}/payment",
        )
        return canonical_response(invoice.to_wire())

    @app.get("/v1/invoices/{invoice_id}")
    @_trap
    async def invoice(request: Request):
        return canonical_response(
            merchant.invoice_status(request.path_params["invoice_id"])
        )

    @app.post("/v1/invoices/{invoice_id}/payment")
    @_trap
    async def payment(request: Request):
        body = await request.json()
        receipt = merchant.accept_payment(
            request.path_params["invoice_id"], body["triples"]
        )
        return canonical_response(receipt)

    @app.post("/v1/onward")
    @_trap
    async def onward(request: Request):
        body = await request.json()
        bundle = merchant.transfer_onward(
            [str(t) for t in body["token_ids"]],
            VendorCertificate.from_wire(body["supplier_cert"]),
        )
        return canonical_response(bundle)

    @app.post("/v1/redeem")
    @_trap
    async def redeem(request: Request):
        body = await request.json()
        receipt = merchant.redeem_holdings([str(t) for t in body["token_ids"]])
        return canonical_response(receipt)

    @app.get("/v1/holdings")
    @_trap
    async def holdings(request: Request):
        return canonical_response(merchant.holdings_view())

    return app


# ---------------------------------------------------------------------------
# Clients: in-process
# ---------------------------------------------------------------------------


class InProcessIssuerClient:
    """Wallet/merchant-facing adapter over a local IssuerService."""

    def __init__(self, service: IssuerService, clock: Callable[[], int] | None = None):
        self.service = service
        self.clock = clock or (lambda: int(time.time()))

    def get_keys(self) -> dict:
        return self.service.keys_wire()

    def issue_accreditations(self, claim_id: str, blinded_wires: list[dict]) -> list[str]:
        requests = [BlindedMessage.from_wire(w) for w in blinded_wires]
        return [int_to_hex(s) for s in self.service.issue_accreditations(claim_id, requests)]

    def redeem(self, request: dict) -> dict:
        return self.service.redeem(request, self.clock())


class InProcessRelayClient:
    """Wallet/merchant-facing adapter over a local RelayNode."""

    def __init__(self, node: RelayNode, auto_seal: bool | None = None):
        self.node = node
        if auto_seal is None:
            auto_seal = len(node.member.config.members) == 1
        self.auto_seal = auto_seal

    def submit(self, wire: dict) -> dict:
        receipt = self.node.submit(SubmittedTransfer.from_wire(wire))
        if self.auto_seal and receipt["status"] == "pending":
            self.node.seal()
        return receipt

    def proof(self, record_digest: bytes) -> dict:
        return self.node.proof(record_digest)

    def token_view(self, token_pub: bytes) -> dict:
        return self.node.token_view(token_pub)

    def latest_checkpoint(self) -> dict | None:
        cp = self.node.latest_checkpoint()
        return cp.to_wire() if cp else None


# ---------------------------------------------------------------------------
# Clients: HTTP
# ---------------------------------------------------------------------------


def _post(client: httpx.Client, url: str, payload, exc_type, headers: dict | None = None) -> dict:
    resp = client.post(
        url,
        content=canonical_json(payload),
        headers={"content-type": _JSON, **(headers or {})},
    )
    return _raise_for(resp, exc_type)


class HttpIssuerClient:
    def __init__(self, client: httpx.Client, base_url: str = "", admin_token: str | None = None):
        self.client = client
        self.base = base_url.rstrip("/")
        self.admin_token = admin_token

    def _admin_headers(self) -> dict:
        if self.admin_token is None:
            return {}
        return {"authorization": f"Bearer {self.admin_token}"}

    def get_keys(self) -> dict:
        return _raise_for(self.client.get(f"{self.base}/v1/keys"), IssuerError)

    def issue_accreditations(self, claim_id: str, blinded_wires: list[dict]) -> list[str]:
        data = _post(
            self.client,
            f"{self.base}/v1/accreditations",
            {"claim_id": claim_id, "requests": blinded_wires},
            IssuerError,
        )
        return data["signatures"]

    def redeem(self, request: dict) -> dict:
        return _post(self.client, f"{self.base}/v1/redemptions", request, IssuerError)

    def approve_claim(self, claim_id: str, amount: int) -> dict:
        return _post(
            self.client,
            f"{self.base}/v1/claims",
            {"amount": amount, "claim_id": claim_id},
            IssuerError,
            self._admin_headers(),
        )

    def register_vendor(self, **payload) -> dict:
        return _post(
            self.client, f"{self.base}/v1/vendors", payload, IssuerError, self._admin_headers()
        )

    def revoke_vendor(self, vendor_id: str, reason: str = "") -> dict:
        return _post(
            self.client,
            f"{self.base}/v1/vendors/{vendor_id}/revoke",
            {"reason": reason},
            IssuerError,
            self._admin_headers(),
        )

    def audit(self) -> dict:
        return _raise_for(self.client.get(f"{self.base}/v1/audit"), IssuerError)


class HttpRelayClient:
    def __init__(self, client: httpx.Client, base_url: str = ""):
        self.client = client
        self.base = base_url.rstrip("/")

    def submit(self, wire: dict) -> dict:
        resp = self.client.post(
            f"{self.base}/v1/transfers",
            content=canonical_json(wire),
            headers={"content-type": _JSON},
        )
        data = resp.json()
        if resp.status_code >= 400 and "status" not in data:
            raise WalletError(data.get("error", "http-error"), data.get("message", ""))
        return data

    def proof(self, record_digest: bytes) -> dict:
        resp = self.client.get(f"{self.base}/v1/proofs/{b64u(record_digest)}")
        return resp.json()

    def token_view(self, token_pub: bytes) -> dict:
        resp = self.client.get(f"{self.base}/v1/tokens/{b64u(token_pub)}")
        return resp.json()

    def latest_checkpoint(self) -> dict | None:
        resp = self.client.get(f"{self.base}/v1/checkpoints/latest")
        return resp.json() if resp.status_code == 200 else None


def http_deliverer(client: httpx.Client, payment_url: str) -> Callable[[list[dict]], dict]:
    """Build the callable wallet.pay uses to hand triples to the vendor."""

    def deliver(triples: list[dict]) -> dict:
        resp = client.post(
            payment_url,
            content=canonical_json({"triples": triples}),
            headers={"content-type": _JSON},
        )
        data = resp.json()
        if resp.status_code >= 400:
            raise WalletError(
                "delivery-failed",
                f"vendor refused the bundle: {data.get('error')}",
                data,
            )
        return data

    return deliver
