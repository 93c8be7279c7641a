"""Deterministic hash-based stand-in KEM.

NOT SECURE. Anyone who sees the ciphertext and public key can compute the
shared secret. It exists so the protocol, bench and CI can run without a PQC
library, with realistic byte-string shapes and exact round-trip semantics:

    sk = seed (32 bytes)         pk = SHA-256(sk)
    ct = r (32 random bytes)     ss = SHA-256(pk || r)
    decapsulate(sk, ct) = SHA-256(SHA-256(sk) || ct)
"""

from __future__ import annotations

import hashlib
import secrets

SEED_LEN = 32
PK_LEN = 32
CT_LEN = 32
SS_LEN = 32


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def keypair(seed: bytes | None = None) -> tuple[bytes, bytes]:
    if seed is None:
        seed = secrets.token_bytes(SEED_LEN)
    if len(seed) != SEED_LEN:
        raise ValueError(f"mock seed must be {SEED_LEN} bytes, got {len(seed)}")
    sk = bytes(seed)
    return _sha256(sk), sk


def encapsulate(public_key: bytes, randomness: bytes | None = None) -> tuple[bytes, bytes]:
    r = secrets.token_bytes(CT_LEN) if randomness is None else bytes(randomness)
    if len(r) != CT_LEN:
        raise ValueError(f"mock randomness must be {CT_LEN} bytes, got {len(r)}")
    return r, _sha256(public_key + r)


def decapsulate(secret_key: bytes, ciphertext: bytes) -> bytes:
    return _sha256(_sha256(secret_key) + ciphertext)
