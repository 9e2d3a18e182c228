"""Simulated Bluetooth legacy pairing, its key-exchange attacks, and a
ledger-mediated pairing channel that defeats them."""

__version__ = "0.1.0"
