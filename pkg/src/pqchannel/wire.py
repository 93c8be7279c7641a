"""Frame codec for the handshake protocol.

Every frame is ``length (u32, big-endian) || type (u8) || payload`` where
``length = 1 + len(payload)`` and never exceeds 2**24. See docs/wire.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Callable, Union

from .errors import (
    EndOfStream,
    LengthMismatch,
    MalformedFrame,
    OversizedFrame,
    OversizedPayload,
    Truncated,
    UnknownType,
)

MAX_FRAME = 2**24
HEADER_LEN = 5
CLIENT_NONCE_LEN = 16
GCM_NONCE_LEN = 12
GCM_TAG_LEN = 16


class MsgType(IntEnum):
    CLIENT_HELLO = 0x01
    PUBLIC_KEY = 0x02
    CIPHERTEXT = 0x03
    ENCRYPTED_MESSAGE = 0x04
    ERROR = 0x05


class ErrorCode(IntEnum):
    PROTOCOL = 0x01
    DECODE = 0x02
    HANDSHAKE = 0x03  # decapsulation or authentication failure, deliberately merged
    UNSUPPORTED = 0x04
    INTERNAL = 0x05


@dataclass(frozen=True)
class ClientHello:
    paramset_id: int
    client_nonce: bytes
    type = MsgType.CLIENT_HELLO


@dataclass(frozen=True)
class PublicKey:
    pk: bytes
    type = MsgType.PUBLIC_KEY


@dataclass(frozen=True)
class Ciphertext:
    ct: bytes
    type = MsgType.CIPHERTEXT


@dataclass(frozen=True)
class EncryptedMessage:
    nonce: bytes
    tag: bytes
    ciphertext: bytes
    type = MsgType.ENCRYPTED_MESSAGE


@dataclass(frozen=True)
class Error:
    code: int
    detail: str = ""
    type = MsgType.ERROR


Message = Union[ClientHello, PublicKey, Ciphertext, EncryptedMessage, Error]


@dataclass(frozen=True)
class Expect:
    """Decode-time hint: the negotiated artifact lengths, if any.

    With ``pk_len``/``ct_len`` set, PublicKey and Ciphertext payloads of any
    other length raise LengthMismatch.
    """

    pk_len: int | None = None
    ct_len: int | None = None


def _payload(msg: Message) -> bytes:
    if isinstance(msg, ClientHello):
        if not 0 <= msg.paramset_id <= 0xFF or len(msg.client_nonce) != CLIENT_NONCE_LEN:
            raise ValueError("ClientHello needs a 1-byte paramset id and a 16-byte nonce")
        return bytes([msg.paramset_id]) + msg.client_nonce
    if isinstance(msg, PublicKey):
        return msg.pk
    if isinstance(msg, Ciphertext):
        return msg.ct
    if isinstance(msg, EncryptedMessage):
        if len(msg.nonce) != GCM_NONCE_LEN or len(msg.tag) != GCM_TAG_LEN:
            raise ValueError("EncryptedMessage needs a 12-byte nonce and a 16-byte tag")
        return msg.nonce + msg.tag + msg.ciphertext
    if isinstance(msg, Error):
        if not 0 <= msg.code <= 0xFF:
            raise ValueError("error code must fit in one byte")
        return bytes([msg.code]) + msg.detail.encode("utf-8")
    raise TypeError(f"not a protocol message: {msg!r}")


def encode(msg: Message) -> bytes:
    payload = _payload(msg)
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise OversizedPayload(f"frame of {length} bytes exceeds the {MAX_FRAME}-byte cap")
    return struct.pack(">IB", length, msg.type) + payload


def _parse(msg_type: int, payload: bytes, expect: Expect | None) -> Message:
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise UnknownType(f"unknown message type 0x{msg_type:02x}") from None
    if kind is MsgType.CLIENT_HELLO:
        if len(payload) != 1 + CLIENT_NONCE_LEN:
            raise LengthMismatch(f"ClientHello payload must be 17 bytes, got {len(payload)}")
        return ClientHello(payload[0], payload[1:])
    if kind is MsgType.PUBLIC_KEY:
        if expect is not None and expect.pk_len is not None and len(payload) != expect.pk_len:
            raise LengthMismatch(f"public key is {len(payload)} bytes, negotiated paramset expects {expect.pk_len}")
        return PublicKey(payload)
    if kind is MsgType.CIPHERTEXT:
        if expect is not None and expect.ct_len is not None and len(payload) != expect.ct_len:
            raise LengthMismatch(f"ciphertext is {len(payload)} bytes, negotiated paramset expects {expect.ct_len}")
        return Ciphertext(payload)
    if kind is MsgType.ENCRYPTED_MESSAGE:
        if len(payload) < GCM_NONCE_LEN + GCM_TAG_LEN:
            raise LengthMismatch(f"EncryptedMessage payload of {len(payload)} bytes is shorter than nonce+tag")
        return EncryptedMessage(payload[:12], payload[12:28], payload[28:])
    if not payload:
        raise LengthMismatch("Error payload is missing its code byte")
    try:
        detail = payload[1:].decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedFrame("Error detail is not valid UTF-8") from None
    return Error(payload[0], detail)


def _read_exact(read: Callable[[int], bytes], n: int, at_boundary: bool = False) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = read(remaining)
        if not chunk:
            if at_boundary and remaining == n:
                raise EndOfStream("stream closed at a frame boundary")
            raise Truncated(f"stream ended {remaining} bytes short of a {n}-byte read")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode(stream: BinaryIO | Callable[[int], bytes], expect: Expect | None = None) -> Message:
    """Read exactly one frame from ``stream`` and parse it.

    ``stream`` is anything with ``read(n)`` (a file, ``socket.makefile('rb')``)
    or a bare ``read(n)`` callable. Never reads past the declared frame end.
    """
    read = stream if callable(stream) else stream.read
    header = _read_exact(read, HEADER_LEN - 1, at_boundary=True)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise OversizedFrame(f"declared frame length {length} exceeds the {MAX_FRAME}-byte cap")
    if length == 0:
        raise MalformedFrame("zero-length frame has no type byte")
    body = _read_exact(read, length)
    return _parse(body[0], body[1:], expect)


def decode_bytes(data: bytes, expect: Expect | None = None) -> tuple[Message, int]:
    """Decode one frame from the front of ``data``; return it and the bytes consumed."""
    view = memoryview(data)
    pos = 0

    def read(n: int) -> bytes:
        nonlocal pos
        chunk = bytes(view[pos:pos + n])
        pos += len(chunk)
        return chunk

    msg = decode(read, expect)
    return msg, pos
