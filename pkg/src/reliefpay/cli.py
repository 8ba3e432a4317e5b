"""Command line for operating the services and the two client roles.

Layout:
  reliefpay demo                      -- full in-process walkthrough
  reliefpay relay init|serve          -- provenance relay (single member)
  reliefpay issuer init|serve|...     -- issuer service + admin verbs
  reliefpay wallet init|request|...   -- consumer wallet on a local store
  reliefpay merchant init|serve|...   -- vendor service + client verbs

Servers persist key material under their --data-dir as canonical JSON;
client verbs talk to running servers over HTTP.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from random import Random

import click
import httpx

from .api import (
    HttpIssuerClient,
    HttpRelayClient,
    create_issuer_app,
    create_merchant_app,
    create_relay_app,
    create_wallet_app,
    http_deliverer,
)
from .blindsig import (
    DEFAULT_DENOMINATIONS,
    PRODUCTION_MODULUS_BITS,
    DenominationKeyset,
)
from .checkpoints import LedgerConfig
from .encoding import canonical_json, unb64u
from .identity import (
    KEY_SIZE,
    ROLE_ISSUER,
    ROLE_RELAY,
    ROLE_VENDOR,
    Identity,
)
from .issuer import IssuerError, IssuerService, default_policy
from .merchant import Merchant
from .relay import RelayNode, standalone_config
from .tokens import VendorCertificate
from .wallet import Invoice, Wallet, WalletError


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json(data) + b"\n")


def _read_json(path: Path):
    return json.loads(path.read_bytes())


def _echo_json(data) -> None:
    click.echo(canonical_json(data).decode())


def _fail(exc: Exception) -> None:
    code = getattr(exc, "code", "error")
    raise click.ClickException(f"{code}: {exc}")


@click.group()
def main() -> None:
    """Relief payment network: issuer, relay, wallet, and merchant."""


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------


@main.command()
@click.option("--seed", default=7, show_default=True, help="Deterministic run seed.")
def demo(seed: int) -> None:
    """Run the whole flow in process and narrate each step."""
    from .demo import run_demo

    run_demo(seed=seed, echo=click.echo)


# ---------------------------------------------------------------------------
# relay
# ---------------------------------------------------------------------------


@main.group()
def relay() -> None:
    """Provenance relay: orders transfers and serves inclusion proofs."""


@relay.command("init")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
def relay_init(data_dir: Path) -> None:
    """Create the relay identity and a single-member ledger config."""
    secret_path = data_dir / "relay-secret.json"
    if secret_path.exists():
        raise click.ClickException(f"{secret_path} already exists")
    identity = Identity.generate(ROLE_RELAY)
    _write_json(secret_path, identity.to_wire_secret())
    config = standalone_config(identity)
    _write_json(data_dir / "ledger-config.json", config.to_wire())
    click.echo(f"relay id: {identity.identifier}")
    click.echo(f"ledger config written to {data_dir / 'ledger-config.json'}")


@relay.command("serve")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--issuer-url", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8401, show_default=True)
def relay_serve(data_dir: Path, issuer_url: str, host: str, port: int) -> None:
    """Serve the relay HTTP API (fetches verification keys from the issuer)."""
    import uvicorn

    identity = Identity.from_wire_secret(_read_json(data_dir / "relay-secret.json"))
    config = LedgerConfig.from_wire(_read_json(data_dir / "ledger-config.json"))
    with httpx.Client(timeout=30.0) as client:
        keys = HttpIssuerClient(client, issuer_url).get_keys()
    from .blindsig import public_key_map

    node = RelayNode(
        identity,
        config,
        unb64u(keys["issuer_key"], KEY_SIZE),
        public_key_map(keys["denomination_keys"]),
        data_dir=data_dir,
    )
    uvicorn.run(create_relay_app(node), host=host, port=port, log_level="warning")


# ---------------------------------------------------------------------------
# issuer
# ---------------------------------------------------------------------------


@main.group()
def issuer() -> None:
    """Issuer: approves claims, blind-signs tokens, registers vendors,
    settles redemptions."""


@issuer.command("init")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option(
    "--ledger-config",
    "ledger_config_path",
    required=True,
    type=click.Path(path_type=Path, exists=True),
    help="ledger-config.json produced by `relay init`.",
)
@click.option(
    "--modulus-bits",
    default=PRODUCTION_MODULUS_BITS,
    show_default=True,
    help="RSA modulus size per denomination key.",
)
@click.option("--seed", default=None, type=int, help="Deterministic keygen seed (testing only).")
def issuer_init(data_dir: Path, ledger_config_path: Path, modulus_bits: int, seed) -> None:
    """Generate the issuer identity and one signing key per denomination."""
    secret_path = data_dir / "issuer-secret.json"
    if secret_path.exists():
        raise click.ClickException(f"{secret_path} already exists")
    rng = Random(seed) if seed is not None else None
    identity = (
        Identity.generate_seeded(ROLE_ISSUER, rng) if rng else Identity.generate(ROLE_ISSUER)
    )
    click.echo(f"generating {len(DEFAULT_DENOMINATIONS)} denomination keys "
               f"({modulus_bits}-bit moduli); this can take a while...")
    keyset = DenominationKeyset.generate(DEFAULT_DENOMINATIONS, modulus_bits, rng)
    _write_json(
        secret_path,
        {
            "identity": identity.to_wire_secret(),
            "keyset": keyset.to_wire(),
            "ledger": _read_json(ledger_config_path),
        },
    )
    click.echo(f"issuer id: {identity.identifier}")


def _load_issuer(data_dir: Path) -> IssuerService:
    secret = _read_json(data_dir / "issuer-secret.json")
    return IssuerService(
        Identity.from_wire_secret(secret["identity"]),
        DenominationKeyset.from_wire(secret["keyset"]),
        default_policy(),
        LedgerConfig.from_wire(secret["ledger"]),
        data_dir=data_dir,
    )


@issuer.command("serve")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--admin-token", required=True, envvar="RELIEFPAY_ADMIN_TOKEN")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8400, show_default=True)
def issuer_serve(data_dir: Path, admin_token: str, host: str, port: int) -> None:
    """Serve the issuer HTTP API."""
    import uvicorn

    service = _load_issuer(data_dir)
    uvicorn.run(
        create_issuer_app(service, admin_token), host=host, port=port, log_level="warning"
    )


@issuer.command("approve-claim")
@click.option("--url", required=True)
@click.option("--admin-token", required=True, envvar="RELIEFPAY_ADMIN_TOKEN")
@click.option("--claim", "claim_id", required=True)
@click.option("--amount", required=True, type=int)
def issuer_approve_claim(url: str, admin_token: str, claim_id: str, amount: int) -> None:
    """Approve a relief claim for a budget (admin)."""
    with httpx.Client(timeout=30.0) as client:
        try:
            _echo_json(HttpIssuerClient(client, url, admin_token).approve_claim(claim_id, amount))
        except IssuerError as exc:
            _fail(exc)


@issuer.command("register-vendor")
@click.option("--url", required=True)
@click.option("--admin-token", required=True, envvar="RELIEFPAY_ADMIN_TOKEN")
@click.option("--vendor-pub", required=True, help="Vendor public key (from `merchant init`).")
@click.option("--legal-name", required=True)
@click.option("--registration-ref", required=True)
@click.option("--category", "tax_category", required=True)
@click.option("--valid-days", default=365, show_default=True)
@click.option("--onward/--no-onward", "onward", default=None)
@click.option("--kyc-attested", is_flag=True, default=False)
@click.option("--out", type=click.Path(path_type=Path), help="Write the certificate here.")
def issuer_register_vendor(
    url, admin_token, vendor_pub, legal_name, registration_ref,
    tax_category, valid_days, onward, kyc_attested, out,
) -> None:
    """Register a vendor and mint its certificate (admin)."""
    now = int(time.time())
    payload = {
        "kyc_attested": kyc_attested,
        "legal_name": legal_name,
        "registration_ref": registration_ref,
        "tax_category": tax_category,
        "valid_from": now - 60,
        "valid_to": now + valid_days * 86400,
        "vendor_pub": vendor_pub,
    }
    if onward is not None:
        payload["onward_transfer_allowed"] = onward
    with httpx.Client(timeout=30.0) as client:
        try:
            cert = HttpIssuerClient(client, url, admin_token).register_vendor(**payload)
        except IssuerError as exc:
            _fail(exc)
    if out:
        _write_json(out, cert)
        click.echo(f"certificate written to {out}")
    else:
        _echo_json(cert)


@issuer.command("revoke-vendor")
@click.option("--url", required=True)
@click.option("--admin-token", required=True, envvar="RELIEFPAY_ADMIN_TOKEN")
@click.option("--vendor-id", required=True)
@click.option("--reason", default="")
def issuer_revoke_vendor(url: str, admin_token: str, vendor_id: str, reason: str) -> None:
    """Revoke a vendor certificate (admin)."""
    with httpx.Client(timeout=30.0) as client:
        try:
            _echo_json(HttpIssuerClient(client, url, admin_token).revoke_vendor(vendor_id, reason))
        except IssuerError as exc:
            _fail(exc)


@issuer.command("audit")
@click.option("--url", required=True)
def issuer_audit(url: str) -> None:
    """Print the aggregate issuance/redemption report."""
    with httpx.Client(timeout=30.0) as client:
        _echo_json(HttpIssuerClient(client, url).audit())


# ---------------------------------------------------------------------------
# wallet
# ---------------------------------------------------------------------------


def _open_wallet(store: Path, passphrase: str, issuer_url: str | None, relay_url: str | None,
                 client: httpx.Client | None = None) -> Wallet:
    issuer_client = HttpIssuerClient(client, issuer_url) if issuer_url else None
    relay_client = HttpRelayClient(client, relay_url) if relay_url else None
    return Wallet(issuer_client, relay_client, store_path=store, passphrase=passphrase)


_store_opt = click.option(
    "--store", required=True, type=click.Path(path_type=Path), envvar="RELIEFPAY_WALLET_STORE"
)
_pass_opt = click.option(
    "--passphrase", required=True, envvar="RELIEFPAY_PASSPHRASE",
    help="Store encryption passphrase (or set RELIEFPAY_PASSPHRASE).",
)


@main.group()
def wallet() -> None:
    """Consumer wallet: blind-issued bearer tokens on an encrypted store."""


@wallet.command("init")
@_store_opt
@_pass_opt
def wallet_init(store: Path, passphrase: str) -> None:
    """Create an empty encrypted wallet store."""
    if store.exists():
        raise click.ClickException(f"{store} already exists")
    w = Wallet(None, None, store_path=store, passphrase=passphrase)
    w.save()
    click.echo(f"wallet store created at {store}")


@wallet.command("request")
@_store_opt
@_pass_opt
@click.option("--issuer-url", required=True, envvar="RELIEFPAY_ISSUER_URL")
@click.option("--claim", "claim_id", required=True)
@click.option("--amount", type=int, default=None)
@click.option("--denominations", default=None, help="Comma-separated explicit breakdown.")
def wallet_request(store, passphrase, issuer_url, claim_id, amount, denominations) -> None:
    """Request blind-accredited tokens against an approved claim."""
    denoms = [int(d) for d in denominations.split(",")] if denominations else None
    with httpx.Client(timeout=60.0) as client:
        w = _open_wallet(store, passphrase, issuer_url, None, client)
        try:
            tokens = w.request_tokens(claim_id, amount, denoms)
        except (WalletError, IssuerError) as exc:
            _fail(exc)
    click.echo(f"minted {len(tokens)} tokens: {sorted((t.denomination for t in tokens), reverse=True)}")
    _echo_json(w.balance())


@wallet.command("balance")
@_store_opt
@_pass_opt
def wallet_balance(store: Path, passphrase: str) -> None:
    """Show spendable / spent totals."""
    _echo_json(Wallet(None, None, store_path=store, passphrase=passphrase).balance())


@wallet.command("pay")
@_store_opt
@_pass_opt
@click.option("--issuer-url", required=True, envvar="RELIEFPAY_ISSUER_URL")
@click.option("--relay-url", default=None, help="Override the invoice's relay endpoint.")
@click.option("--invoice", "invoice_src", required=True,
              help="Invoice file path, or URL to fetch it from.")
def wallet_pay(store, passphrase, issuer_url, relay_url, invoice_src) -> None:
    """Pay a vendor invoice and deliver the proof bundle."""
    with httpx.Client(timeout=60.0) as client:
        if invoice_src.startswith("http://") or invoice_src.startswith("https://"):
            wire = client.get(invoice_src).json()
        else:
            wire = _read_json(Path(invoice_src))
        if isinstance(wire, dict) and "invoice" in wire:
            wire = wire["invoice"]
        invoice = Invoice.from_wire(wire)
        w = _open_wallet(store, passphrase, issuer_url, relay_url or invoice.relay_url, client)
        deliver = http_deliverer(client, invoice.payment_url) if invoice.payment_url else None
        try:
            result = w.pay(invoice, deliver)
        except (WalletError, IssuerError) as exc:
            _fail(exc)
    click.echo(f"paid invoice {invoice.invoice_id} with {len(result['triples'])} tokens")
    if "delivery" in result:
        _echo_json(result["delivery"])


@wallet.command("export")
@_store_opt
@_pass_opt
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--backup-passphrase", required=True)
def wallet_export(store, passphrase, out, backup_passphrase) -> None:
    """Write an encrypted backup of the whole store."""
    w = Wallet(None, None, store_path=store, passphrase=passphrase)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(w.export_backup(backup_passphrase))
    click.echo(f"backup written to {out}")


@wallet.command("import")
@_store_opt
@_pass_opt
@click.option("--backup", required=True, type=click.Path(path_type=Path, exists=True))
@click.option("--backup-passphrase", required=True)
def wallet_import(store, passphrase, backup, backup_passphrase) -> None:
    """Merge a backup into this store (spent state never downgrades)."""
    w = Wallet(None, None, store_path=store, passphrase=passphrase)
    try:
        report = w.import_backup(Path(backup).read_bytes(), backup_passphrase)
    except WalletError as exc:
        _fail(exc)
    _echo_json(report)


@wallet.command("serve")
@_store_opt
@_pass_opt
@click.option("--issuer-url", required=True, envvar="RELIEFPAY_ISSUER_URL")
@click.option("--relay-url", required=True, envvar="RELIEFPAY_RELAY_URL")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8402, show_default=True)
def wallet_serve(store, passphrase, issuer_url, relay_url, host, port) -> None:
    """Serve the local wallet API for the web console."""
    import uvicorn

    client = httpx.Client(timeout=60.0)
    w = _open_wallet(store, passphrase, issuer_url, relay_url, client)
    uvicorn.run(create_wallet_app(w), host=host, port=port, log_level="warning")


# ---------------------------------------------------------------------------
# merchant
# ---------------------------------------------------------------------------


@main.group()
def merchant() -> None:
    """Vendor service: invoices, payment verification, onward transfer,
    redemption."""


@merchant.command("init")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
def merchant_init(data_dir: Path) -> None:
    """Create the vendor identity; register its public key with the issuer."""
    secret_path = data_dir / "merchant-secret.json"
    if secret_path.exists():
        raise click.ClickException(f"{secret_path} already exists")
    identity = Identity.generate(ROLE_VENDOR)
    _write_json(secret_path, identity.to_wire_secret())
    click.echo(f"vendor public key: {identity.identifier}")
    click.echo("register this key with the issuer to obtain a certificate")


@merchant.command("serve")
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--cert", "cert_path", required=True, type=click.Path(path_type=Path, exists=True))
@click.option("--issuer-url", required=True, envvar="RELIEFPAY_ISSUER_URL")
@click.option("--relay-url", required=True, envvar="RELIEFPAY_RELAY_URL")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8403, show_default=True)
@click.option("--base-url", default=None, help="Public URL invoices should point back to.")
def merchant_serve(data_dir, cert_path, issuer_url, relay_url, host, port, base_url) -> None:
    """Serve the merchant HTTP API."""
    import uvicorn

    identity = Identity.from_wire_secret(_read_json(data_dir / "merchant-secret.json"))
    certificate = VendorCertificate.from_wire(_read_json(cert_path))
    client = httpx.Client(timeout=60.0)
    m = Merchant(
        identity=identity,
        certificate=certificate,
        issuer=HttpIssuerClient(client, issuer_url),
        relay=HttpRelayClient(client, relay_url),
        data_dir=data_dir,
    )
    app = create_merchant_app(m, base_url or f"http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@merchant.command("invoice")
@click.option("--url", required=True, envvar="RELIEFPAY_MERCHANT_URL")
@click.option("--amount", required=True, type=int)
@click.option("--ttl", default=3600, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), help="Also write the invoice to a file.")
def merchant_invoice(url, amount, ttl, out) -> None:
    """Create an invoice for a customer."""
    with httpx.Client(timeout=30.0) as client:
        resp = client.post(
            f"{url.rstrip('/')}/v1/invoices",
            content=canonical_json({"amount": amount, "ttl": ttl}),
            headers={"content-type": "application/json"},
        )
        data = resp.json()
        if resp.status_code >= 400:
            raise click.ClickException(f"{data.get('error')}: {data.get('message')}")
    if out:
        _write_json(out, data)
        click.echo(f"invoice written to {out}")
    _echo_json(data)


@merchant.command("holdings")
@click.option("--url", required=True, envvar="RELIEFPAY_MERCHANT_URL")
def merchant_holdings(url) -> None:
    """Show held / transferred / redeemed holdings."""
    with httpx.Client(timeout=30.0) as client:
        _echo_json(client.get(f"{url.rstrip('/')}/v1/holdings").json())


@merchant.command("redeem")
@click.option("--url", required=True, envvar="RELIEFPAY_MERCHANT_URL")
@click.option("--token-ids", required=True, help="Comma-separated token ids (or 'all').")
def merchant_redeem(url, token_ids) -> None:
    """Redeem held tokens with the issuer."""
    with httpx.Client(timeout=60.0) as client:
        base = url.rstrip("/")
        if token_ids == "all":
            held = client.get(f"{base}/v1/holdings").json()["held"]
            ids = [h["token_id"] for h in held]
        else:
            ids = token_ids.split(",")
        resp = client.post(
            f"{base}/v1/redeem",
            content=canonical_json({"token_ids": ids}),
            headers={"content-type": "application/json"},
        )
        data = resp.json()
        if resp.status_code >= 400:
            raise click.ClickException(f"{data.get('error')}: {data.get('message')}")
    _echo_json(data)


if __name__ == "__main__":
    main(prog_name="reliefpay")
