"""Key-encapsulation data types and the provider seam."""

from __future__ import annotations

import hmac
from dataclasses import dataclass
from typing import Protocol, runtime_checkable


class SecretKey:
    """KEM secret key held in a mutable buffer that is zeroed on release.

    Pickling and copying to any wire or report format is refused. ``bytes(sk)``
    hands a copy to the provider; Python cannot guarantee that copy is wiped.
    """

    __slots__ = ("_buf",)

    def __init__(self, data: bytes | bytearray) -> None:
        self._buf = bytearray(data)

    def __bytes__(self) -> bytes:
        return bytes(self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SecretKey):
            return NotImplemented
        return hmac.compare_digest(self._buf, other._buf)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SecretKey(<redacted, {len(self._buf)} bytes>)"

    def __reduce__(self):
        raise TypeError("SecretKey is not serializable")

    def wipe(self) -> None:
        for i in range(len(self._buf)):
            self._buf[i] = 0

    def __del__(self) -> None:
        try:
            self.wipe()
        except Exception:  # interpreter shutdown
            pass


@dataclass(frozen=True)
class KeyPair:
    paramset: str
    public_key: bytes
    secret_key: SecretKey

    def __repr__(self) -> str:
        return f"KeyPair(paramset={self.paramset!r}, public_key=<{len(self.public_key)} bytes>)"


@dataclass(frozen=True)
class EncapsulationResult:
    ciphertext: bytes
    shared_secret: bytes

    def __repr__(self) -> str:
        return f"EncapsulationResult(ciphertext=<{len(self.ciphertext)} bytes>, shared_secret=<redacted>)"


@dataclass(frozen=True)
class ProviderLengths:
    pk_len: int
    sk_len: int
    ct_len: int
    ss_len: int
    nist_level: int | None = None


@runtime_checkable
class KemProvider(Protocol):
    """Adapter seam for an external PQC library.

    Implementations must be safe to call from several threads at once, wrapping
    the underlying library in a lock themselves if it is not.
    """

    name: str

    def supported(self) -> list[str]:
        """Canonical paramset ids this provider can serve."""

    def lengths(self, paramset: str) -> ProviderLengths: ...

    def keypair(self, paramset: str) -> tuple[bytes, bytes]: ...

    def encapsulate(self, paramset: str, public_key: bytes) -> tuple[bytes, bytes]: ...

    def decapsulate(self, paramset: str, secret_key: bytes, ciphertext: bytes) -> bytes: ...
