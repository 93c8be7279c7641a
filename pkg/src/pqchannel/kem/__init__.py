"""Key encapsulation: registry of the ten parameter sets and provider selection.

Provider choice comes from the ``kem.provider`` config key, or the
``PQCHANNEL_KEM_PROVIDER`` environment variable: ``auto`` (default: liboqs,
then pqcrypto, then none), ``liboqs``, ``pqcrypto`` or ``none``.
"""

from __future__ import annotations

import logging
import os
import threading

from ..errors import ProviderUnavailable
from .base import EncapsulationResult, KemProvider, KeyPair, ProviderLengths, SecretKey
from .registry import (
    PQC_PARAMSETS,
    PARAMSET_IDS,
    PUBLISHED_LENGTHS,
    KemParamSet,
    KemRegistry,
    NistLevel,
    canonical_id,
)

__all__ = [
    "EncapsulationResult", "KemParamSet", "KemProvider", "KemRegistry", "KeyPair", "NistLevel",
    "PQC_PARAMSETS", "PARAMSET_IDS", "PUBLISHED_LENGTHS", "ProviderLengths", "SecretKey",
    "canonical_id", "decapsulate", "default_registry", "encapsulate", "keypair", "load_provider",
    "registry_lookup", "set_default_registry",
]

log = logging.getLogger(__name__)

PROVIDERS = ("auto", "liboqs", "pqcrypto", "none")


def load_provider(name: str = "auto") -> KemProvider | None:
    """Instantiate a provider by name; ``none`` (and ``auto`` with nothing installed) yields None."""
    name = name.lower()
    if name not in PROVIDERS:
        raise ValueError(f"unknown KEM provider {name!r}; choose from {', '.join(PROVIDERS)}")
    if name == "none":
        return None
    if name in ("auto", "liboqs"):
        from .liboqs import LiboqsProvider
        try:
            return LiboqsProvider()
        except ProviderUnavailable as exc:
            if name == "liboqs":
                raise
            log.debug("liboqs unavailable: %s", exc)
    if name in ("auto", "pqcrypto"):
        from .pqcrypto_provider import PqcryptoProvider
        try:
            return PqcryptoProvider()
        except ProviderUnavailable as exc:
            if name == "pqcrypto":
                raise
            log.debug("pqcrypto unavailable: %s", exc)
    return None


_default: KemRegistry | None = None
_default_lock = threading.Lock()


def default_registry() -> KemRegistry:
    global _default
    with _default_lock:
        if _default is None:
            _default = KemRegistry(load_provider(os.environ.get("PQCHANNEL_KEM_PROVIDER", "auto")))
        return _default


def set_default_registry(registry: KemRegistry | None) -> None:
    global _default
    with _default_lock:
        _default = registry


def registry_lookup(paramset: str) -> KemParamSet:
    return default_registry().lookup(paramset)


def keypair(paramset: str | KemParamSet, seed: bytes | None = None) -> KeyPair:
    return default_registry().keypair(paramset, seed)


def encapsulate(paramset: str | KemParamSet, public_key: bytes) -> EncapsulationResult:
    return default_registry().encapsulate(paramset, public_key)


def decapsulate(paramset: str | KemParamSet, secret_key: SecretKey | bytes, ciphertext: bytes) -> bytes:
    return default_registry().decapsulate(paramset, secret_key, ciphertext)
