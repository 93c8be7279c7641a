"""Exception hierarchy shared by every pqchannel module."""

from __future__ import annotations


class PqChannelError(Exception):
    """Base class for all library errors."""


# -- kem ---------------------------------------------------------------------

class KemError(PqChannelError):
    pass


class UnknownParamSet(KemError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class ProviderUnavailable(KemError):
    pass


class SeedRejected(KemError):
    pass


class BadPublicKeyLength(KemError):
    pass


class BadCiphertextLength(KemError):
    pass


class DecapsulationFailure(KemError):
    pass


# -- crypto ------------------------------------------------------------------

class CryptoError(PqChannelError):
    pass


class EmptySecret(CryptoError):
    pass


class RngFailure(CryptoError):
    pass


class AuthenticationFailure(CryptoError):
    """Tag verification failed. Deliberately carries no detail."""

    def __init__(self) -> None:
        super().__init__("authentication failed")


# -- wire --------------------------------------------------------------------

class WireError(PqChannelError):
    pass


class Truncated(WireError):
    pass


class EndOfStream(Truncated):
    """Stream closed cleanly between frames."""


class UnknownType(WireError):
    pass


class LengthMismatch(WireError):
    pass


class OversizedPayload(WireError):
    pass


class OversizedFrame(WireError):
    pass


class MalformedFrame(WireError):
    pass


# -- protocol ----------------------------------------------------------------

class ProtocolError(PqChannelError):
    pass


class ProtocolViolation(ProtocolError):
    pass


class Timeout(ProtocolError, TimeoutError):
    pass


class ServerUnreachable(Timeout):
    pass


class NotEstablished(ProtocolError):
    pass


class PeerError(ProtocolError):
    """The peer sent an Error frame."""

    def __init__(self, code: int, detail: str = "") -> None:
        super().__init__(f"peer error 0x{code:02x}: {detail}")
        self.code = code
        self.detail = detail


# -- probes ------------------------------------------------------------------

class ProbeError(PqChannelError):
    pass


class ProbeIOError(ProbeError, OSError):
    pass


class ParseError(ProbeError, ValueError):
    pass


# -- bench -------------------------------------------------------------------

class BenchError(PqChannelError):
    pass


class EmptyInput(BenchError, ValueError):
    pass


class SchemaError(BenchError, ValueError):
    """Raw sample CSV does not match the expected schema."""

    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# -- pcapscan ----------------------------------------------------------------

class PcapError(PqChannelError):
    pass


class BadMagic(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class TruncatedCapture(PcapError):
    pass
