"""Session-key derivation and AES-256-GCM sealing.

The session key is the bare SHA-256 digest of the KEM shared secret (no salt,
no context label). That is the minimal construction; a production deployment
would want HKDF with a transcript-bound info string.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthenticationFailure, EmptySecret, RngFailure

KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
MAX_PLAINTEXT = 2**32 - 1


class SessionKey:
    """A 32-byte AES-256 key. Immutable; ``repr`` never shows key bytes."""

    __slots__ = ("_key", "_aead")

    def __init__(self, key: bytes) -> None:
        if len(key) != KEY_LEN:
            raise ValueError(f"session key must be {KEY_LEN} bytes")
        self._key = bytes(key)
        self._aead = AESGCM(self._key)

    @property
    def key(self) -> bytes:
        return self._key

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SessionKey):
            return NotImplemented
        return secrets.compare_digest(self._key, other._key)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return "SessionKey(<redacted>)"

    def __reduce__(self):
        raise TypeError("SessionKey is not serializable")


@dataclass(frozen=True)
class SealedMessage:
    nonce: bytes
    ciphertext: bytes
    tag: bytes
    aad: bytes | None = None


def derive_session_key(shared_secret: bytes) -> SessionKey:
    if not shared_secret:
        raise EmptySecret("shared secret is empty")
    return SessionKey(hashlib.sha256(shared_secret).digest())


def _fresh_nonce() -> bytes:
    try:
        return secrets.token_bytes(NONCE_LEN)
    except Exception as exc:  # pragma: no cover - os.urandom failing is environmental
        raise RngFailure(str(exc)) from exc


def _seal_with_nonce(key: SessionKey, nonce: bytes, plaintext: bytes, aad: bytes | None) -> SealedMessage:
    # Known-answer tests call this directly; everything else goes through seal().
    if len(plaintext) > MAX_PLAINTEXT:
        raise ValueError("plaintext exceeds 2**32 - 1 bytes")
    out = key._aead.encrypt(nonce, plaintext, aad)
    return SealedMessage(nonce, out[:-TAG_LEN], out[-TAG_LEN:], aad)


def seal(key: SessionKey, plaintext: bytes, aad: bytes | None = None) -> SealedMessage:
    """Encrypt under a fresh random 96-bit nonce."""
    return _seal_with_nonce(key, _fresh_nonce(), plaintext, aad)


def open_sealed(key: SessionKey, sealed: SealedMessage, aad: bytes | None = None) -> bytes:
    """Return the plaintext, or raise AuthenticationFailure.

    ``aad`` defaults to the AAD recorded in ``sealed``. The same exception
    (with no detail) is raised whatever was tampered with.
    """
    if aad is None:
        aad = sealed.aad
    if len(sealed.nonce) != NONCE_LEN or len(sealed.tag) != TAG_LEN:
        raise AuthenticationFailure()
    try:
        return key._aead.decrypt(sealed.nonce, sealed.ciphertext + sealed.tag, aad)
    except InvalidTag:
        raise AuthenticationFailure() from None
