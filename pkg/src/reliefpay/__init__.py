"""Relief payment network: blind-signed bearer tokens, relay-sequenced
transfer history with provenance proofs, and compliance-gated redemption."""

__version__ = "0.1.0"
