"""Parameter-set registry and the keypair/encapsulate/decapsulate front door."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

from ..errors import (
    BadCiphertextLength,
    BadPublicKeyLength,
    ProviderUnavailable,
    SeedRejected,
    UnknownParamSet,
)
from . import mock
from .base import EncapsulationResult, KemProvider, KeyPair, SecretKey


class NistLevel(str, Enum):
    L1 = "L1"
    L3 = "L3"
    L5 = "L5"
    NONE = "none"


# Wire order: the index is the 1-byte paramset id carried in ClientHello.
PARAMSET_IDS = (
    "Mock",
    "BIKE-L1", "BIKE-L3", "BIKE-L5",
    "HQC-128", "HQC-192", "HQC-256",
    "Kyber-512", "Kyber-768", "Kyber-1024",
)
PQC_PARAMSETS = PARAMSET_IDS[1:]

_LEVELS = {
    "Mock": NistLevel.NONE,
    "BIKE-L1": NistLevel.L1, "HQC-128": NistLevel.L1, "Kyber-512": NistLevel.L1,
    "BIKE-L3": NistLevel.L3, "HQC-192": NistLevel.L3, "Kyber-768": NistLevel.L3,
    "BIKE-L5": NistLevel.L5, "HQC-256": NistLevel.L5, "Kyber-1024": NistLevel.L5,
}

# Sizes reported by liboqs 0.13 (pk, ct, ss). Only used for entries that no
# active provider backs, so the pcap classifier still knows their fingerprints.
PUBLISHED_LENGTHS = {
    "BIKE-L1": (1541, 1573, 32),
    "BIKE-L3": (3083, 3115, 32),
    "BIKE-L5": (5122, 5154, 32),
    "HQC-128": (2249, 4433, 64),
    "HQC-192": (4522, 8978, 64),
    "HQC-256": (7245, 14421, 64),
    "Kyber-512": (800, 768, 32),
    "Kyber-768": (1184, 1088, 32),
    "Kyber-1024": (1568, 1568, 32),
}


def _norm(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_ALIASES = {_norm(pid): pid for pid in PARAMSET_IDS}
_ALIASES.update({"mlkem512": "Kyber-512", "mlkem768": "Kyber-768", "mlkem1024": "Kyber-1024"})


def canonical_id(name: str) -> str:
    """Map user spellings ("kyber768", "ML-KEM-768", "mock") to registry ids."""
    try:
        return _ALIASES[_norm(name)]
    except KeyError:
        raise UnknownParamSet(f"unknown parameter set {name!r}") from None


@dataclass(frozen=True)
class KemParamSet:
    id: str
    wire_id: int
    nist_level: NistLevel
    pk_len: int
    ct_len: int
    ss_len: int
    lengths_source: str  # "provider", "published" or "mock"
    provider: str | None

    @property
    def family(self) -> str:
        return self.id.split("-")[0]

    @property
    def enabled(self) -> bool:
        return self.provider is not None


class KemRegistry:
    """Immutable table of the ten parameter sets, bound to one provider.

    Safe to share between threads; every operation is dispatched to the mock
    or to the provider, both of which are reentrant.
    """

    def __init__(self, provider: KemProvider | None = None) -> None:
        self.provider = provider
        supported = set(provider.supported()) if provider is not None else set()
        entries = []
        for wire_id, pid in enumerate(PARAMSET_IDS):
            if pid == "Mock":
                entries.append(KemParamSet(pid, wire_id, NistLevel.NONE, mock.PK_LEN, mock.CT_LEN,
                                           mock.SS_LEN, "mock", "mock"))
            elif pid in supported:
                ln = provider.lengths(pid)
                entries.append(KemParamSet(pid, wire_id, _LEVELS[pid], ln.pk_len, ln.ct_len, ln.ss_len,
                                           "provider", provider.name))
            else:
                pk, ct, ss = PUBLISHED_LENGTHS[pid]
                entries.append(KemParamSet(pid, wire_id, _LEVELS[pid], pk, ct, ss, "published", None))
        self._entries = tuple(entries)
        self._by_id = {e.id: e for e in entries}

    def __iter__(self) -> Iterator[KemParamSet]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, paramset: str | KemParamSet) -> KemParamSet:
        if isinstance(paramset, KemParamSet):
            paramset = paramset.id
        return self._by_id[canonical_id(paramset)]

    def by_wire_id(self, wire_id: int) -> KemParamSet:
        if not 0 <= wire_id < len(self._entries):
            raise UnknownParamSet(f"unknown parameter set id 0x{wire_id:02x}")
        return self._entries[wire_id]

    def enabled(self) -> list[KemParamSet]:
        return [e for e in self._entries if e.enabled]

    def _require_provider(self, ps: KemParamSet) -> KemProvider:
        if not ps.enabled or self.provider is None:
            raise ProviderUnavailable(f"{ps.id} requires a PQC provider and none is enabled for it")
        return self.provider

    def keypair(self, paramset: str | KemParamSet, seed: bytes | None = None) -> KeyPair:
        ps = self.lookup(paramset)
        if ps.id == "Mock":
            pk, sk = mock.keypair(seed)
        else:
            if seed is not None:
                raise SeedRejected(f"{ps.id} draws its own entropy; seeds are accepted only by Mock")
            pk, sk = self._require_provider(ps).keypair(ps.id)
        if len(pk) != ps.pk_len:
            raise BadPublicKeyLength(f"provider returned {len(pk)}-byte public key for {ps.id}, expected {ps.pk_len}")
        return KeyPair(ps.id, pk, SecretKey(sk))

    def encapsulate(self, paramset: str | KemParamSet, public_key: bytes,
                    randomness: bytes | None = None) -> EncapsulationResult:
        ps = self.lookup(paramset)
        if len(public_key) != ps.pk_len:
            raise BadPublicKeyLength(f"{ps.id} public key must be {ps.pk_len} bytes, got {len(public_key)}")
        if ps.id == "Mock":
            ct, ss = mock.encapsulate(public_key, randomness)
        else:
            if randomness is not None:
                raise SeedRejected(f"{ps.id} encapsulation randomness is provider-internal")
            ct, ss = self._require_provider(ps).encapsulate(ps.id, public_key)
        return EncapsulationResult(ct, ss)

    def decapsulate(self, paramset: str | KemParamSet, secret_key: SecretKey | bytes,
                    ciphertext: bytes) -> bytes:
        ps = self.lookup(paramset)
        if len(ciphertext) != ps.ct_len:
            raise BadCiphertextLength(f"{ps.id} ciphertext must be {ps.ct_len} bytes, got {len(ciphertext)}")
        sk = bytes(secret_key)
        if ps.id == "Mock":
            return mock.decapsulate(sk, ciphertext)
        return self._require_provider(ps).decapsulate(ps.id, sk, ciphertext)
