"""KEM-based secure channel with a benchmark harness and a pcap fingerprinter."""

from .crypto import SealedMessage, SessionKey, derive_session_key, open_sealed, seal
from .kem import KemParamSet, KemRegistry, default_registry
from .protocol import ClientSession, KemServer, ServerSession, run_once

__version__ = "0.1.0"

__all__ = [
    "ClientSession",
    "KemParamSet",
    "KemRegistry",
    "KemServer",
    "SealedMessage",
    "ServerSession",
    "SessionKey",
    "default_registry",
    "derive_session_key",
    "open_sealed",
    "run_once",
    "seal",
]
