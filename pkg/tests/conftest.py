"""Shared fixtures: a hand-checkable tiny RSA key, a session-scoped toy
keyset, and a builder wiring issuer + relay + wallet + merchants fully in
process with a controllable clock."""

from __future__ import annotations

from pathlib import Path
from random import Random
from typing import Callable

import pytest

from reliefpay.api import InProcessIssuerClient, InProcessRelayClient
from reliefpay.blindsig import (
    DEFAULT_DENOMINATIONS,
    DenominationKeyPair,
    DenominationKeyset,
)
from reliefpay.identity import ROLE_ISSUER, ROLE_RELAY, ROLE_VENDOR, Identity
from reliefpay.issuer import IssuerService, default_policy
from reliefpay.merchant import Merchant
from reliefpay.relay import RelayNode, standalone_config
from reliefpay.wallet import Wallet

# p=5, q=11: n=55, e=3, d=27 (3*27 = 81 = 2*40+1). Small enough to verify
# every algebraic step by hand or by exhaustive search.
TINY_KEY = DenominationKeyPair(denomination=100, n=55, e=3, d=27)

BASE_TIME = 1_755_000_000
DAY = 86_400


@pytest.fixture(scope="session")
def toy_keyset() -> DenominationKeyset:
    return DenominationKeyset.generate(DEFAULT_DENOMINATIONS, 64, Random(0xC0FFEE))


class Env:
    """One issuer + one single-member relay + one wallet, all in process.

    The clock is a shared mutable integer so every component agrees on
    "now" and tests can move time deliberately.
    """

    def __init__(
        self,
        keyset: DenominationKeyset,
        seed: int = 5,
        issuer_dir: Path | None = None,
        relay_dir: Path | None = None,
        policy=None,
        wallet_store: Path | None = None,
        wallet_passphrase: str | None = None,
    ):
        self.rng = Random(seed)
        self.now_box = [BASE_TIME]
        self.clock: Callable[[], int] = lambda: self.now_box[0]
        self.keyset = keyset
        self.policy = policy or default_policy()

        self.issuer_identity = Identity.generate_seeded(ROLE_ISSUER, self.rng)
        self.relay_identity = Identity.generate_seeded(ROLE_RELAY, self.rng)
        self.config = standalone_config(self.relay_identity)
        self.issuer_dir = issuer_dir
        self.relay_dir = relay_dir

        self.issuer = IssuerService(
            self.issuer_identity, keyset, self.policy, self.config, data_dir=issuer_dir
        )
        self.relay = RelayNode(
            self.relay_identity,
            self.config,
            self.issuer_identity.public.key,
            keyset.public_map(),
            data_dir=relay_dir,
        )
        self.issuer_client = InProcessIssuerClient(self.issuer, self.clock)
        self.relay_client = InProcessRelayClient(self.relay)
        self.wallet = Wallet(
            self.issuer_client,
            self.relay_client,
            store_path=wallet_store,
            passphrase=wallet_passphrase,
            rng=self.rng,
            clock=self.clock,
            sleep=lambda s: None,
        )
        self.merchants: list[Merchant] = []

    @property
    def now(self) -> int:
        return self.now_box[0]

    def advance(self, seconds: int) -> int:
        self.now_box[0] += seconds
        return self.now_box[0]

    def register_merchant(
        self,
        legal_name: str = "Shop",
        tax_category: str = "general",
        onward: bool | None = True,
        kyc: bool = True,
        valid_days: int = 365,
        data_dir: Path | None = None,
    ) -> Merchant:
        identity = Identity.generate_seeded(ROLE_VENDOR, self.rng)
        cert = self.issuer.register_vendor(
            vendor_pub=identity.public.key,
            legal_name=legal_name,
            registration_ref=f"reg-{len(self.merchants) + 1:04d}",
            tax_category=tax_category,
            valid_from=self.now - DAY,
            valid_to=self.now + valid_days * DAY,
            onward_transfer_allowed=onward,
            kyc_attested=kyc,
        )
        merchant = Merchant(
            identity=identity,
            certificate=cert,
            issuer=self.issuer_client,
            relay=self.relay_client,
            data_dir=data_dir,
            clock=self.clock,
            sleep=lambda s: None,
            rng=self.rng,
        )
        self.merchants.append(merchant)
        return merchant

    def fund_wallet(self, claim_id: str, amount: int, budget: int | None = None):
        self.issuer.approve_claim(claim_id, budget if budget is not None else amount)
        return self.wallet.request_tokens(claim_id, amount)

    def purchase(self, merchant: Merchant, amount: int, ttl: int = 3_600) -> dict:
        invoice = merchant.create_invoice(amount, ttl=ttl)
        return self.wallet.pay(
            invoice,
            deliver=lambda triples: merchant.accept_payment(invoice.invoice_id, triples),
        )

    # -- restarts (durability scenarios) -----------------------------------

    def restart_relay(self) -> None:
        assert self.relay_dir is not None, "relay has no data dir to restart from"
        self.relay.close()
        self.relay = RelayNode(
            self.relay_identity,
            self.config,
            self.issuer_identity.public.key,
            self.keyset.public_map(),
            data_dir=self.relay_dir,
        )
        self.relay_client = InProcessRelayClient(self.relay)
        self.wallet.relay = self.relay_client
        for merchant in self.merchants:
            merchant.relay = self.relay_client

    def restart_issuer(self) -> None:
        assert self.issuer_dir is not None, "issuer has no data dir to restart from"
        self.issuer.close()
        self.issuer = IssuerService(
            self.issuer_identity, self.keyset, self.policy, self.config,
            data_dir=self.issuer_dir,
        )
        self.issuer_client = InProcessIssuerClient(self.issuer, self.clock)
        self.wallet.issuer = self.issuer_client
        for merchant in self.merchants:
            merchant.issuer = self.issuer_client


@pytest.fixture
def env(toy_keyset) -> Env:
    return Env(toy_keyset)


# One line per delivery criterion, echoed after the test table so the
# verdicts survive output capture.
GATE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if GATE_LINES:
        terminalreporter.section("delivery gate")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
