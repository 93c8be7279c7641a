"""ctypes binding to liboqs' KEM API.

Only the stable ``OQS_KEM`` surface is used (``OQS_KEM_new``, the length
fields, ``OQS_KEM_keypair/encaps/decaps``), so any liboqs from 0.10 on works.
The library is located through ``PQCHANNEL_LIBOQS`` (path to the shared
object), ``OQS_INSTALL_PATH`` (install prefix), the linker search path, and a
few conventional prefixes, in that order.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os
from pathlib import Path

from ..errors import DecapsulationFailure, ProviderUnavailable
from .base import ProviderLengths

log = logging.getLogger(__name__)

# canonical id -> liboqs method name
METHOD_NAMES = {
    "BIKE-L1": "BIKE-L1",
    "BIKE-L3": "BIKE-L3",
    "BIKE-L5": "BIKE-L5",
    "HQC-128": "HQC-128",
    "HQC-192": "HQC-192",
    "HQC-256": "HQC-256",
    "Kyber-512": "Kyber512",
    "Kyber-768": "Kyber768",
    "Kyber-1024": "Kyber1024",
}

_SEARCH_PREFIXES = ("/usr/local", "/opt/liboqs", "~/_oqs", "/usr")


class _OqsKem(ctypes.Structure):
    # Mirrors struct OQS_KEM up to the function pointers we call through the
    # exported wrappers; only the leading data fields are read directly.
    _fields_ = [
        ("method_name", ctypes.c_char_p),
        ("alg_version", ctypes.c_char_p),
        ("claimed_nist_level", ctypes.c_uint8),
        ("ind_cca", ctypes.c_bool),
        ("length_public_key", ctypes.c_size_t),
        ("length_secret_key", ctypes.c_size_t),
        ("length_ciphertext", ctypes.c_size_t),
        ("length_shared_secret", ctypes.c_size_t),
    ]


def _candidate_paths() -> list[str]:
    out = []
    if os.environ.get("PQCHANNEL_LIBOQS"):
        out.append(os.environ["PQCHANNEL_LIBOQS"])
    if os.environ.get("OQS_INSTALL_PATH"):
        root = Path(os.environ["OQS_INSTALL_PATH"])
        out += [str(root / "lib" / "liboqs.so"), str(root / "lib64" / "liboqs.so"),
                str(root / "lib" / "liboqs.dylib")]
    found = ctypes.util.find_library("oqs")
    if found:
        out.append(found)
    for prefix in _SEARCH_PREFIXES:
        root = Path(prefix).expanduser()
        out += [str(root / "lib" / "liboqs.so"), str(root / "lib" / "liboqs.dylib")]
    return out


def load_library() -> ctypes.CDLL:
    errors = []
    for path in _candidate_paths():
        if os.sep in path and not Path(path).exists():
            continue
        try:
            lib = ctypes.CDLL(path)
        except OSError as exc:
            errors.append(f"{path}: {exc}")
            continue
        log.debug("loaded liboqs from %s", path)
        return lib
    raise ProviderUnavailable("liboqs shared library not found" + (f" ({'; '.join(errors)})" if errors else ""))


class LiboqsProvider:
    name = "liboqs"

    def __init__(self, lib: ctypes.CDLL | None = None) -> None:
        self._lib = lib or load_library()
        lib = self._lib
        lib.OQS_init.restype = None
        lib.OQS_init()
        lib.OQS_KEM_new.restype = ctypes.POINTER(_OqsKem)
        lib.OQS_KEM_new.argtypes = [ctypes.c_char_p]
        for fn in ("OQS_KEM_keypair", "OQS_KEM_encaps", "OQS_KEM_decaps"):
            getattr(lib, fn).restype = ctypes.c_int
            getattr(lib, fn).argtypes = [ctypes.POINTER(_OqsKem), ctypes.c_char_p,
                                         ctypes.c_char_p, ctypes.c_char_p][: 3 if fn == "OQS_KEM_keypair" else 4]
        # OQS_KEM objects are immutable descriptors; one per paramset, never freed.
        self._kems = {}
        for pid, method in METHOD_NAMES.items():
            ptr = lib.OQS_KEM_new(method.encode())
            if ptr:
                self._kems[pid] = ptr
        if not self._kems:
            raise ProviderUnavailable("liboqs loaded but no supported KEM is enabled")

    def supported(self) -> list[str]:
        return list(self._kems)

    def _kem(self, paramset: str):
        try:
            return self._kems[paramset]
        except KeyError:
            raise ProviderUnavailable(f"{paramset} is not enabled in this liboqs build") from None

    def lengths(self, paramset: str) -> ProviderLengths:
        k = self._kem(paramset).contents
        return ProviderLengths(
            pk_len=k.length_public_key,
            sk_len=k.length_secret_key,
            ct_len=k.length_ciphertext,
            ss_len=k.length_shared_secret,
            nist_level=k.claimed_nist_level,
        )

    def keypair(self, paramset: str) -> tuple[bytes, bytes]:
        ptr = self._kem(paramset)
        k = ptr.contents
        pk = ctypes.create_string_buffer(k.length_public_key)
        sk = ctypes.create_string_buffer(k.length_secret_key)
        if self._lib.OQS_KEM_keypair(ptr, pk, sk) != 0:
            raise ProviderUnavailable(f"liboqs keypair failed for {paramset}")
        out = pk.raw, sk.raw
        ctypes.memset(sk, 0, k.length_secret_key)
        return out

    def encapsulate(self, paramset: str, public_key: bytes) -> tuple[bytes, bytes]:
        ptr = self._kem(paramset)
        k = ptr.contents
        ct = ctypes.create_string_buffer(k.length_ciphertext)
        ss = ctypes.create_string_buffer(k.length_shared_secret)
        if self._lib.OQS_KEM_encaps(ptr, ct, ss, public_key) != 0:
            raise ProviderUnavailable(f"liboqs encapsulation failed for {paramset}")
        return ct.raw, ss.raw

    def decapsulate(self, paramset: str, secret_key: bytes, ciphertext: bytes) -> bytes:
        ptr = self._kem(paramset)
        k = ptr.contents
        ss = ctypes.create_string_buffer(k.length_shared_secret)
        if self._lib.OQS_KEM_decaps(ptr, ss, ciphertext, secret_key) != 0:
            raise DecapsulationFailure(f"liboqs decapsulation failed for {paramset}")
        return ss.raw
