"""Provider backed by the ``pqcrypto`` wheel (ML-KEM and HQC; no BIKE).

ML-KEM is the FIPS 203 form of Kyber. Its artifact lengths match round-3
Kyber, so it is registered under the Kyber ids; transcripts are not
interoperable with a round-3 Kyber peer.
"""

from __future__ import annotations

import importlib

from ..errors import DecapsulationFailure, ProviderUnavailable
from .base import ProviderLengths

MODULES = {
    "HQC-128": "pqcrypto.kem.hqc_128",
    "HQC-192": "pqcrypto.kem.hqc_192",
    "HQC-256": "pqcrypto.kem.hqc_256",
    "Kyber-512": "pqcrypto.kem.ml_kem_512",
    "Kyber-768": "pqcrypto.kem.ml_kem_768",
    "Kyber-1024": "pqcrypto.kem.ml_kem_1024",
}
_LEVELS = {"128": 1, "192": 3, "256": 5, "512": 1, "768": 3, "1024": 5}


class PqcryptoProvider:
    name = "pqcrypto"

    def __init__(self) -> None:
        try:
            importlib.import_module("pqcrypto.kem")
        except ImportError as exc:
            raise ProviderUnavailable(f"pqcrypto is not installed: {exc}") from None
        self._mods = {}
        for pid, modname in MODULES.items():
            try:
                self._mods[pid] = importlib.import_module(modname)
            except ImportError:
                continue
        if not self._mods:
            raise ProviderUnavailable("pqcrypto exposes none of the supported KEMs")

    def supported(self) -> list[str]:
        return list(self._mods)

    def _mod(self, paramset: str):
        try:
            return self._mods[paramset]
        except KeyError:
            raise ProviderUnavailable(f"{paramset} is not available from pqcrypto") from None

    def lengths(self, paramset: str) -> ProviderLengths:
        m = self._mod(paramset)
        return ProviderLengths(
            pk_len=m.PUBLIC_KEY_SIZE,
            sk_len=m.SECRET_KEY_SIZE,
            ct_len=m.CIPHERTEXT_SIZE,
            ss_len=m.SHARED_SECRET_SIZE,
            nist_level=_LEVELS[paramset.rsplit("-", 1)[1]],
        )

    def keypair(self, paramset: str) -> tuple[bytes, bytes]:
        pk, sk = self._mod(paramset).keygen()
        return bytes(pk), bytes(sk)

    def encapsulate(self, paramset: str, public_key: bytes) -> tuple[bytes, bytes]:
        ct, ss = self._mod(paramset).encaps(public_key)
        return bytes(ct), bytes(ss)

    def decapsulate(self, paramset: str, secret_key: bytes, ciphertext: bytes) -> bytes:
        try:
            return bytes(self._mod(paramset).decaps(secret_key, ciphertext))
        except ValueError as exc:
            raise DecapsulationFailure(str(exc)) from None
