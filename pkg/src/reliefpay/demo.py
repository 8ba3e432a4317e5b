"""End-to-end walkthrough wired entirely in process.

One issuer, one relay, one consumer wallet, a shop, and the shop's
supplier. The claim is approved, tokens are minted blind, a purchase is
paid with exact denominations, part of the holdings moves onward to the
supplier, and both vendors redeem under their own tax categories. Every
run with the same seed produces the same story.
"""

from __future__ import annotations

from random import Random
from typing import Callable

from .api import InProcessIssuerClient, InProcessRelayClient
from .blindsig import DEFAULT_DENOMINATIONS, DenominationKeyset
from .identity import ROLE_ISSUER, ROLE_RELAY, ROLE_VENDOR, Identity
from .issuer import IssuerService, default_policy
from .merchant import Merchant
from .relay import RelayNode, standalone_config
from .wallet import Wallet

DAY = 86400


def run_demo(
    seed: int = 7,
    echo: Callable[[str], None] = print,
    modulus_bits: int = 64,
    base_time: int = 1_755_000_000,
) -> dict:
    rng = Random(seed)
    now_box = [base_time]
    clock = lambda: now_box[0]  # noqa: E731

    def step(label: str) -> None:
        now_box[0] += 5
        echo(label)

    issuer_identity = Identity.generate_seeded(ROLE_ISSUER, rng)
    relay_identity = Identity.generate_seeded(ROLE_RELAY, rng)
    config = standalone_config(relay_identity)
    keyset = DenominationKeyset.generate(DEFAULT_DENOMINATIONS, modulus_bits, rng)
    issuer = IssuerService(issuer_identity, keyset, default_policy(), config)
    relay = RelayNode(relay_identity, config, issuer_identity.public.key, keyset.public_map())

    issuer_client = InProcessIssuerClient(issuer, clock)
    relay_client = InProcessRelayClient(relay)

    wallet = Wallet(issuer_client, relay_client, rng=rng, clock=clock, sleep=lambda s: None)

    shop_identity = Identity.generate_seeded(ROLE_VENDOR, rng)
    shop_cert = issuer.register_vendor(
        vendor_pub=shop_identity.public.key,
        legal_name="Harbor General Store",
        registration_ref="reg-1001",
        tax_category="general",
        valid_from=base_time - DAY,
        valid_to=base_time + 90 * DAY,
        onward_transfer_allowed=True,
        kyc_attested=True,
    )
    supplier_identity = Identity.generate_seeded(ROLE_VENDOR, rng)
    supplier_cert = issuer.register_vendor(
        vendor_pub=supplier_identity.public.key,
        legal_name="Coastal Produce Cooperative",
        registration_ref="reg-1002",
        tax_category="essential-goods",
        valid_from=base_time - DAY,
        valid_to=base_time + 90 * DAY,
    )
    shop = Merchant(
        identity=shop_identity,
        certificate=shop_cert,
        issuer=issuer_client,
        relay=relay_client,
        clock=clock,
        sleep=lambda s: None,
        rng=rng,
    )
    supplier = Merchant(
        identity=supplier_identity,
        certificate=supplier_cert,
        issuer=issuer_client,
        relay=relay_client,
        clock=clock,
        sleep=lambda s: None,
        rng=rng,
    )

    step("approving claim claim-001 for 25000")
    issuer.approve_claim("claim-001", 25_000)

    step("wallet requesting 7500 in tokens (blind issuance)")
    tokens = wallet.request_tokens("claim-001", 7_500)
    denominations = sorted((t.denomination for t in tokens), reverse=True)
    echo(f"  minted denominations: {denominations}")

    step("shop invoicing 2500")
    invoice = shop.create_invoice(2_500, ttl=3_600)

    step("wallet paying the invoice (relay proofs collected)")
    payment = wallet.pay(
        invoice, deliver=lambda triples: shop.accept_payment(invoice.invoice_id, triples)
    )
    receipt = payment["delivery"]
    echo(f"  shop receipt: {receipt['status']} amount {receipt['amount']}")

    held = shop.holdings_view()["held"]
    small = min(held, key=lambda h: h["denomination"])
    step(f"shop passing the {small['denomination']} token on to its supplier")
    bundle = shop.transfer_onward([small["token_id"]], supplier_cert)
    supplier_invoice = supplier.create_invoice(small["denomination"], ttl=3_600)
    supplier.accept_payment(supplier_invoice.invoice_id, bundle["triples"])

    step("shop redeeming remaining holdings (general rate applies)")
    shop_tokens = [h["token_id"] for h in shop.holdings_view()["held"]]
    shop_receipt = shop.redeem_holdings(shop_tokens)
    echo(
        f"  gross {shop_receipt['gross']}, withheld {shop_receipt['withheld']},"
        f" net {shop_receipt['net']}"
    )

    step("supplier redeeming (essential goods, zero rate)")
    supplier_tokens = [h["token_id"] for h in supplier.holdings_view()["held"]]
    supplier_receipt = supplier.redeem_holdings(supplier_tokens)
    echo(
        f"  gross {supplier_receipt['gross']}, withheld {supplier_receipt['withheld']},"
        f" net {supplier_receipt['net']}"
    )

    audit = issuer.audit_report()
    balance = wallet.balance()
    echo(
        f"issuer audit: issued {audit['total_issued']}, redeemed {audit['total_redeemed_gross']},"
        f" withheld {audit['total_withheld']}, outstanding {audit['outstanding']}"
    )
    echo(f"wallet balance: spendable {balance['spendable']}, spent {balance['spent']}")
    return {
        "audit": audit,
        "balance": balance,
        "shop_receipt": shop_receipt,
        "supplier_receipt": supplier_receipt,
    }
