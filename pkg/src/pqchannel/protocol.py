"""Client and server session state machines and their TCP runtime.

Handshake::

    client                              server
    ClientHello(paramset, nonce)  -->
                                  <--   PublicKey(pk)          keygen
    encapsulate, derive key
    Ciphertext(ct)                -->                          decapsulate, derive key
    EncryptedMessage(payload)     -->                          open
                                  <--   EncryptedMessage("OK")

Sessions are sans-IO: ``handle()`` takes a decoded message and returns the
frames to send back. ``KemServer`` and ``client_run`` move frames over TCP.
Every EncryptedMessage is sealed with the message-type byte as AAD.
"""

from __future__ import annotations

import logging
import queue
import secrets
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from . import crypto, wire
from .errors import (
    AuthenticationFailure,
    BadCiphertextLength,
    DecapsulationFailure,
    EndOfStream,
    KemError,
    NotEstablished,
    PeerError,
    ProtocolViolation,
    ProviderUnavailable,
    ServerUnreachable,
    Timeout,
    UnknownParamSet,
    WireError,
)
from .kem import KemParamSet, KemRegistry, KeyPair, default_registry

log = logging.getLogger(__name__)

DEFAULT_PORT = 4433
DEFAULT_TIMEOUT = 10.0
ACK = b"OK"
AAD = bytes([wire.MsgType.ENCRYPTED_MESSAGE])

_clock = time.perf_counter


class ServerState(Enum):
    AWAIT_HELLO = "AwaitHello"
    SENT_PUBLIC_KEY = "SentPublicKey"
    ESTABLISHED = "Established"
    CLOSED = "Closed"


class ClientState(Enum):
    INIT = "Init"
    SENT_HELLO = "SentHello"
    SENT_CIPHERTEXT = "SentCiphertext"
    ESTABLISHED = "Established"
    CLOSED = "Closed"


@dataclass
class HandshakeTiming:
    """Per-phase durations in seconds from a monotonic clock.

    A client fills t_encap/t_kdf/t_total, a server t_keygen/t_decap/t_kdf/t_total;
    phases a side does not perform stay 0.
    """

    t_keygen: float = 0.0
    t_encap: float = 0.0
    t_decap: float = 0.0
    t_kdf: float = 0.0
    t_total: float = 0.0


@dataclass(frozen=True)
class SessionEstablished:
    paramset: str


@dataclass(frozen=True)
class DecryptedPayload:
    data: bytes


@dataclass(frozen=True)
class SessionFailed:
    error: Exception


def _sealed_frame(key: crypto.SessionKey, data: bytes) -> wire.EncryptedMessage:
    s = crypto.seal(key, data, AAD)
    return wire.EncryptedMessage(s.nonce, s.tag, s.ciphertext)


def _open_frame(key: crypto.SessionKey, msg: wire.EncryptedMessage) -> bytes:
    return crypto.open_sealed(key, crypto.SealedMessage(msg.nonce, msg.ciphertext, msg.tag, AAD), AAD)


def _error_code(exc: Exception) -> wire.ErrorCode:
    if isinstance(exc, ProtocolViolation):
        return wire.ErrorCode.PROTOCOL
    if isinstance(exc, (WireError, BadCiphertextLength)):
        return wire.ErrorCode.DECODE
    if isinstance(exc, (DecapsulationFailure, AuthenticationFailure)):
        return wire.ErrorCode.HANDSHAKE
    if isinstance(exc, (UnknownParamSet, ProviderUnavailable)):
        return wire.ErrorCode.UNSUPPORTED
    return wire.ErrorCode.INTERNAL


def error_frame(exc: Exception) -> wire.Error:
    code = _error_code(exc)
    return wire.Error(code, code.name.lower())


class ServerSession:
    """One server-side handshake. Single-owner; not shared between threads."""

    def __init__(self, registry: KemRegistry | None = None, peer_addr=None,
                 mock_seed: bytes | None = None, ack: bytes = ACK,
                 allowed: Iterable[str] | None = None) -> None:
        self.registry = registry or default_registry()
        self.allowed = frozenset(allowed) if allowed is not None else None
        self.peer_addr = peer_addr
        self.state = ServerState.AWAIT_HELLO
        self.paramset: KemParamSet | None = None
        self.keypair: KeyPair | None = None
        self.session_key: crypto.SessionKey | None = None
        self.timing = HandshakeTiming()
        self.events: list = []
        self.client_nonce: bytes | None = None
        self._mock_seed = mock_seed
        self._ack = ack
        self._t0 = 0.0

    @property
    def expect(self) -> wire.Expect | None:
        if self.paramset is not None and self.state is ServerState.SENT_PUBLIC_KEY:
            return wire.Expect(ct_len=self.paramset.ct_len)
        return None

    def fail(self, exc: Exception, notify_peer: bool = True) -> list[wire.Message]:
        """Close the session on ``exc``; returns the Error frame to send, if any."""
        already_closed = self.state is ServerState.CLOSED
        self.state = ServerState.CLOSED
        self.session_key = None
        self.events.append(SessionFailed(exc))
        if already_closed or not notify_peer:
            return []
        return [error_frame(exc)]

    def handle(self, msg: wire.Message) -> list[wire.Message]:
        st = self.state
        if st is ServerState.CLOSED:
            self.events.append(SessionFailed(ProtocolViolation(f"{msg.type.name} after close")))
            return []
        if isinstance(msg, wire.Error):
            return self.fail(PeerError(msg.code, msg.detail), notify_peer=False)
        try:
            if st is ServerState.AWAIT_HELLO and isinstance(msg, wire.ClientHello):
                return self._on_hello(msg)
            if st is ServerState.SENT_PUBLIC_KEY and isinstance(msg, wire.Ciphertext):
                return self._on_ciphertext(msg)
            if st is ServerState.ESTABLISHED and isinstance(msg, wire.EncryptedMessage):
                return self._on_encrypted(msg)
            raise ProtocolViolation(f"{msg.type.name} not valid in state {st.value}")
        except (ProtocolViolation, KemError, AuthenticationFailure, WireError) as exc:
            return self.fail(exc)

    def _on_hello(self, msg: wire.ClientHello) -> list[wire.Message]:
        self._t0 = _clock()
        ps = self.registry.by_wire_id(msg.paramset_id)
        if self.allowed is not None and ps.id not in self.allowed:
            raise ProviderUnavailable(f"{ps.id} is not offered by this server")
        self.paramset = ps
        self.client_nonce = msg.client_nonce
        seed = self._mock_seed if ps.id == "Mock" else None
        t = _clock()
        self.keypair = self.registry.keypair(ps, seed)
        self.timing.t_keygen = _clock() - t
        self.state = ServerState.SENT_PUBLIC_KEY
        return [wire.PublicKey(self.keypair.public_key)]

    def _on_ciphertext(self, msg: wire.Ciphertext) -> list[wire.Message]:
        assert self.paramset is not None and self.keypair is not None
        t = _clock()
        ss = self.registry.decapsulate(self.paramset, self.keypair.secret_key, msg.ct)
        t2 = _clock()
        self.session_key = crypto.derive_session_key(ss)
        t3 = _clock()
        self.timing.t_decap = t2 - t
        self.timing.t_kdf = t3 - t2
        self.timing.t_total = t3 - self._t0
        self.keypair.secret_key.wipe()
        self.state = ServerState.ESTABLISHED
        self.events.append(SessionEstablished(self.paramset.id))
        return []

    def _on_encrypted(self, msg: wire.EncryptedMessage) -> list[wire.Message]:
        assert self.session_key is not None
        data = _open_frame(self.session_key, msg)
        self.events.append(DecryptedPayload(data))
        return [_sealed_frame(self.session_key, self._ack)]


def server_handle(session: ServerSession, msg: wire.Message):
    """Functional form of ``session.handle``: ``(session, outbound, new_events)``."""
    seen = len(session.events)
    out = session.handle(msg)
    return session, out, session.events[seen:]


class ClientSession:
    """Client half. Holds no KEM secret key at any point."""

    def __init__(self, paramset: str | KemParamSet, registry: KemRegistry | None = None,
                 encap_randomness: bytes | None = None) -> None:
        self.registry = registry or default_registry()
        self.paramset = self.registry.lookup(paramset)
        self.state = ClientState.INIT
        self.session_key: crypto.SessionKey | None = None
        self.timing = HandshakeTiming()
        self.server_ack: bytes | None = None
        self._r = encap_randomness if self.paramset.id == "Mock" else None

    @property
    def expect(self) -> wire.Expect | None:
        if self.state is ClientState.SENT_HELLO:
            return wire.Expect(pk_len=self.paramset.pk_len)
        return None

    def hello(self) -> wire.ClientHello:
        if self.state is not ClientState.INIT:
            raise ProtocolViolation("hello already sent")
        self.state = ClientState.SENT_HELLO
        return wire.ClientHello(self.paramset.wire_id, secrets.token_bytes(wire.CLIENT_NONCE_LEN))

    def _close(self) -> None:
        self.state = ClientState.CLOSED
        self.session_key = None

    def handle(self, msg: wire.Message) -> list[wire.Message]:
        """Advance on a server frame. Raises on any failure and closes the session."""
        st = self.state
        try:
            if isinstance(msg, wire.Error):
                raise PeerError(msg.code, msg.detail)
            if st is ClientState.SENT_HELLO and isinstance(msg, wire.PublicKey):
                t = _clock()
                res = self.registry.encapsulate(self.paramset, msg.pk, self._r)
                t2 = _clock()
                self.session_key = crypto.derive_session_key(res.shared_secret)
                self.timing.t_encap = t2 - t
                self.timing.t_kdf = _clock() - t2
                self.state = ClientState.SENT_CIPHERTEXT
                return [wire.Ciphertext(res.ciphertext)]
            if st is ClientState.SENT_CIPHERTEXT and isinstance(msg, wire.EncryptedMessage):
                self.server_ack = _open_frame(self.session_key, msg)
                self.state = ClientState.ESTABLISHED
                return []
            raise ProtocolViolation(f"{msg.type.name} not valid in state {st.value}")
        except Exception:
            self._close()
            raise

    def seal_payload(self, payload: bytes) -> wire.EncryptedMessage:
        if self.session_key is None:
            raise NotEstablished("no session key yet")
        return _sealed_frame(self.session_key, payload)


def session_key_equality_check(client: ClientSession, server: ServerSession) -> bool:
    if client.state is not ClientState.ESTABLISHED or server.state is not ServerState.ESTABLISHED:
        raise NotEstablished(f"client is {client.state.value}, server is {server.state.value}")
    return client.session_key == server.session_key


# -- transport ---------------------------------------------------------------

def _send(sock: socket.socket, msgs: Iterable[wire.Message]) -> int:
    n = 0
    for m in msgs:
        data = wire.encode(m)
        sock.sendall(data)
        n += len(data)
    return n


def connect(address: tuple[str, int], timeout: float = DEFAULT_TIMEOUT) -> socket.socket:
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except OSError as exc:
        raise ServerUnreachable(f"cannot reach {address[0]}:{address[1]}: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def client_run(transport: socket.socket, paramset: str | KemParamSet, payload: bytes, *,
               registry: KemRegistry | None = None, timeout: float = DEFAULT_TIMEOUT,
               encap_randomness: bytes | None = None,
               session: ClientSession | None = None) -> tuple[HandshakeTiming, bytes]:
    """Run one full session over a connected socket.

    ``timeout`` bounds each receive phase. Returns the client timings and the
    server's decrypted acknowledgment.
    """
    sess = session or ClientSession(paramset, registry, encap_randomness)
    transport.settimeout(timeout)
    read = transport.recv
    t0 = _clock()
    try:
        _send(transport, [sess.hello()])
        pk_msg = wire.decode(read, sess.expect)
        _send(transport, sess.handle(pk_msg))
        _send(transport, [sess.seal_payload(payload)])
        sess.handle(wire.decode(read, sess.expect))
    except socket.timeout as exc:
        sess._close()
        raise Timeout(f"no reply within {timeout}s in state {sess.state.value}") from exc
    except (WireError, OSError):
        sess._close()
        raise
    sess.timing.t_total = _clock() - t0
    return sess.timing, sess.server_ack or b""


def run_once(address: tuple[str, int], paramset: str | KemParamSet, payload: bytes, **kw):
    """Connect, run one session, close."""
    with connect(address, kw.get("timeout", DEFAULT_TIMEOUT)) as sock:
        return client_run(sock, paramset, payload, **kw)


@dataclass
class ServerStats:
    started: int = 0
    established: int = 0
    failed: int = 0
    payloads: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, name: str) -> None:
        with self.lock:
            setattr(self, name, getattr(self, name) + 1)

    def snapshot(self) -> dict[str, int]:
        with self.lock:
            return {"started": self.started, "established": self.established,
                    "failed": self.failed, "payloads": self.payloads}


@dataclass(frozen=True)
class ServerEvent:
    """What the runtime reports per session, for logs and the bench collector."""

    index: int
    peer: str
    event: object
    paramset: str | None
    timing: HandshakeTiming | None
    bytes_in: int
    bytes_out: int


class _Handler(socketserver.BaseRequestHandler):
    server: "_TcpServer"

    def handle(self) -> None:
        owner = self.server.owner
        owner._serve_connection(self.request, self.client_address)


class _TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    owner: "KemServer"


class KemServer:
    """Threaded TCP server: one ServerSession per connection, then close.

    Events go to ``on_event`` (called from connection threads) and, if
    ``events`` is given, to that thread-safe queue.
    """

    def __init__(self, host: str = "0.0.0.0", port: int = DEFAULT_PORT, *,
                 registry: KemRegistry | None = None, timeout: float = DEFAULT_TIMEOUT,
                 mock_seed_fn: Callable[[], bytes] | None = None,
                 on_event: Callable[[ServerEvent], None] | None = None,
                 events: "queue.Queue[ServerEvent] | None" = None,
                 allowed: Iterable[str] | None = None) -> None:
        self.registry = registry or default_registry()
        self.allowed = [self.registry.lookup(p).id for p in allowed] if allowed is not None else None
        self.timeout = timeout
        self.stats = ServerStats()
        self._mock_seed_fn = mock_seed_fn
        self._on_event = on_event
        self._events = events
        self._tcp = _TcpServer((host, port), _Handler, bind_and_activate=True)
        self._tcp.owner = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._tcp.server_address[:2]
        return host, port

    def _emit(self, ev: ServerEvent) -> None:
        if self._on_event is not None:
            self._on_event(ev)
        if self._events is not None:
            self._events.put(ev)

    def _serve_connection(self, sock: socket.socket, peer) -> None:
        with self.stats.lock:
            self.stats.started += 1
            index = self.stats.started
        sock.settimeout(self.timeout)
        seed = self._mock_seed_fn() if self._mock_seed_fn is not None else None
        sess = ServerSession(self.registry, peer, mock_seed=seed, allowed=self.allowed)
        bytes_in = bytes_out = 0

        def read(n: int) -> bytes:
            nonlocal bytes_in
            chunk = sock.recv(n)
            bytes_in += len(chunk)
            return chunk

        seen = 0
        try:
            while sess.state is not ServerState.CLOSED:
                try:
                    msg = wire.decode(read, sess.expect)
                except EndOfStream:
                    break
                except WireError as exc:
                    bytes_out += _send(sock, sess.fail(exc))
                    break
                bytes_out += _send(sock, sess.handle(msg))
                for ev in sess.events[seen:]:
                    self._record(ev, index, peer, sess, bytes_in, bytes_out)
                seen = len(sess.events)
        except (socket.timeout, OSError) as exc:
            sess.fail(Timeout(str(exc)) if isinstance(exc, socket.timeout) else exc, notify_peer=False)
        finally:
            for ev in sess.events[seen:]:
                self._record(ev, index, peer, sess, bytes_in, bytes_out)
            try:
                sock.close()
            except OSError:
                pass

    def _record(self, ev, index, peer, sess: ServerSession, bytes_in: int, bytes_out: int) -> None:
        ps = sess.paramset.id if sess.paramset else None
        if isinstance(ev, SessionEstablished):
            self.stats.bump("established")
            log.info("session %d established paramset=%s handshake_ms=%.3f bytes_in=%d bytes_out=%d",
                     index, ps, sess.timing.t_total * 1e3, bytes_in, bytes_out)
        elif isinstance(ev, DecryptedPayload):
            self.stats.bump("payloads")
        elif isinstance(ev, SessionFailed):
            self.stats.bump("failed")
            log.warning("session %d failed paramset=%s: %s: %s", index, ps, type(ev.error).__name__, ev.error)
        self._emit(ServerEvent(index, f"{peer[0]}:{peer[1]}", ev, ps, sess.timing, bytes_in, bytes_out))

    def serve_forever(self) -> None:
        self._tcp.serve_forever(poll_interval=0.1)

    def start(self) -> "KemServer":
        self._thread = threading.Thread(target=self.serve_forever, name="kem-server", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        if self._thread is not None:  # socketserver.shutdown() blocks forever if never served
            self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "KemServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()
