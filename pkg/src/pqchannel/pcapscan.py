"""Offline pcap scanner that fingerprints PQC key-exchange packets by length.

Reads classic libpcap files (either byte order, micro- or nanosecond
timestamps) with Ethernet link type, extracts TCP-over-IPv4 payload lengths
and matches them against the KEM registry's public-key and ciphertext sizes,
raw and with this protocol's 5-byte frame header. pcapng is not supported.
"""

from __future__ import annotations

import io
import ipaddress
import json
import logging
import os
import struct
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

from . import wire
from .errors import BadMagic, TruncatedCapture, UnsupportedLinkType
from .kem import KemRegistry, default_registry

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
IPPROTO_TCP = 6
# Per-record ceiling regardless of the header's snaplen, so a corrupt length
# field cannot make us allocate gigabytes.
MAX_RECORD = 262144

_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

ARTIFACT_KINDS = ("public_key", "ciphertext", "framed_public_key", "framed_ciphertext")


@dataclass(frozen=True)
class PacketRecord:
    index: int
    timestamp: float
    src: str
    src_port: int
    dst: str
    dst_port: int
    tcp_payload_len: int

    @property
    def flow(self) -> tuple[tuple[str, int], tuple[str, int]]:
        a, b = (self.src, self.src_port), (self.dst, self.dst_port)
        return (a, b) if a <= b else (b, a)


@dataclass
class Capture:
    records: list[PacketRecord] = field(default_factory=list)
    skipped: int = 0
    truncated: bool = False
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _tcp_payload_len(frame: bytes) -> tuple[str, int, str, int, int] | None:
    if len(frame) < 14:
        return None
    off = 12
    (ethertype,) = struct.unpack_from(">H", frame, off)
    off += 2
    while ethertype == ETHERTYPE_VLAN and len(frame) >= off + 4:
        (ethertype,) = struct.unpack_from(">H", frame, off + 2)
        off += 4
    if ethertype != ETHERTYPE_IPV4 or len(frame) < off + 20:
        return None
    ver_ihl = frame[off]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    total_len, = struct.unpack_from(">H", frame, off + 2)
    frag, = struct.unpack_from(">H", frame, off + 6)
    proto = frame[off + 9]
    if proto != IPPROTO_TCP or ihl < 20 or frag & 0x1FFF:
        return None
    src = str(ipaddress.IPv4Address(frame[off + 12:off + 16]))
    dst = str(ipaddress.IPv4Address(frame[off + 16:off + 20]))
    tcp = off + ihl
    if len(frame) < tcp + 13:
        return None
    sport, dport = struct.unpack_from(">HH", frame, tcp)
    doff = (frame[tcp + 12] >> 4) * 4
    # IP total length, not captured length: trailing Ethernet padding is not payload
    payload = total_len - ihl - doff
    if payload < 0:
        return None
    return src, sport, dst, dport, payload


def parse_pcap(source: str | os.PathLike | BinaryIO | bytes) -> Capture:
    """Parse a classic pcap into TCP/IPv4 packet records.

    Non-TCP/IPv4 packets are counted in ``skipped``. A record cut short by
    EOF ends the parse with ``truncated`` set and a warning; records read so
    far are kept.
    """
    if isinstance(source, (bytes, bytearray)):
        return _parse(io.BytesIO(source))
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return _parse(fh)
    return _parse(source)


def _parse(fh: BinaryIO) -> Capture:
    header = fh.read(24)
    if len(header) < 4 or header[:4] not in _MAGICS:
        raise BadMagic("not a classic pcap file (bad magic number)")
    if len(header) < 24:
        raise TruncatedCapture("pcap global header is truncated")
    endian, ts_unit = _MAGICS[header[:4]]
    _vmaj, _vmin, _zone, _sig, snaplen, linktype = struct.unpack(endian + "HHiIII", header[4:])
    if linktype & 0x0FFFFFFF != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype} is not Ethernet")
    cap_limit = min(snaplen, MAX_RECORD) if snaplen else MAX_RECORD
    cap = Capture()
    index = 0
    while True:
        rec = fh.read(16)
        if not rec:
            break
        if len(rec) < 16:
            cap.truncated = True
            cap.warnings.append(f"record {index}: header truncated at EOF")
            break
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(endian + "IIII", rec)
        if incl_len > cap_limit:
            cap.truncated = True
            cap.warnings.append(f"record {index}: captured length {incl_len} exceeds limit {cap_limit}; stopping")
            break
        data = fh.read(incl_len)
        if len(data) < incl_len:
            cap.truncated = True
            cap.warnings.append(f"record {index}: data truncated at EOF ({len(data)}/{incl_len} bytes)")
            break
        parsed = _tcp_payload_len(data)
        if parsed is None:
            cap.skipped += 1
        else:
            src, sport, dst, dport, plen = parsed
            cap.records.append(PacketRecord(index, ts_sec + ts_frac * ts_unit, src, sport, dst, dport, plen))
        index += 1
    for w in cap.warnings:
        log.warning("%s", w)
    return cap


# -- writer (fixtures and recorded transcripts) ------------------------------

@dataclass(frozen=True)
class Segment:
    """One TCP segment to synthesize: endpoints, payload, optional timestamp."""

    src: str
    src_port: int
    dst: str
    dst_port: int
    payload: bytes
    timestamp: float = 0.0


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f">{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ethernet_frame(seg: Segment, seq: int = 0, proto: int = IPPROTO_TCP) -> bytes:
    """Ethernet/IPv4/TCP (or bare-payload UDP when ``proto`` = 17) frame."""
    src = ipaddress.IPv4Address(seg.src).packed
    dst = ipaddress.IPv4Address(seg.dst).packed
    if proto == IPPROTO_TCP:
        l4 = struct.pack(">HHIIBBHHH", seg.src_port, seg.dst_port, seq, 0, 5 << 4, 0x18, 65535, 0, 0)
    else:
        l4 = struct.pack(">HHHH", seg.src_port, seg.dst_port, 8 + len(seg.payload), 0)
    total = 20 + len(l4) + len(seg.payload)
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, total, 0, 0x4000, 64, proto, 0, src, dst)
    ip = ip[:10] + struct.pack(">H", _checksum(ip)) + ip[12:]
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack(">H", ETHERTYPE_IPV4)
    return eth + ip + l4 + seg.payload


def write_pcap(dest: str | os.PathLike | BinaryIO, frames: Iterable[tuple[float, bytes]],
               snaplen: int = 65535, linktype: int = LINKTYPE_ETHERNET) -> None:
    """Write raw link-layer ``(timestamp, frame)`` pairs as a little-endian pcap."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as fh:
            write_pcap(fh, frames, snaplen, linktype)
        return
    dest.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, linktype))
    for ts, frame in frames:
        sec = int(ts)
        usec = int(round((ts - sec) * 1e6))
        if usec >= 1_000_000:
            sec, usec = sec + 1, usec - 1_000_000
        data = frame[:snaplen]
        dest.write(struct.pack("<IIII", sec, usec, len(data), len(frame)))
        dest.write(data)


def write_segments(dest: str | os.PathLike | BinaryIO, segments: Iterable[Segment]) -> None:
    seqs: dict[tuple, int] = {}
    frames = []
    for seg in segments:
        key = (seg.src, seg.src_port, seg.dst, seg.dst_port)
        seq = seqs.get(key, 1)
        seqs[key] = seq + len(seg.payload)
        frames.append((seg.timestamp, ethernet_frame(seg, seq)))
    write_pcap(dest, frames)


# -- classification ----------------------------------------------------------

@dataclass(frozen=True)
class KemArtifactMatch:
    packet_index: int
    tcp_payload_len: int
    candidates: tuple[tuple[str, str], ...]  # (paramset, artifact_kind)


def fingerprint_table(registry: KemRegistry) -> dict[int, list[tuple[str, str]]]:
    table: dict[int, list[tuple[str, str]]] = {}
    for ps in registry:
        for length, kind in ((ps.pk_len, "public_key"), (ps.ct_len, "ciphertext"),
                             (ps.pk_len + wire.HEADER_LEN, "framed_public_key"),
                             (ps.ct_len + wire.HEADER_LEN, "framed_ciphertext")):
            entry = (ps.id, kind)
            if entry not in table.setdefault(length, []):
                table[length].append(entry)
    return table


def classify(records: Iterable[PacketRecord], registry: KemRegistry | None = None,
             include_mock: bool = False) -> list[KemArtifactMatch]:
    """Match payload lengths against every registered fingerprint.

    All candidates sharing a length are listed. Mock artifacts (32 bytes) are
    ignored unless ``include_mock`` since they collide with ordinary traffic.
    """
    table = fingerprint_table(registry or default_registry())
    out = []
    for rec in records:
        cands = [c for c in table.get(rec.tcp_payload_len, []) if include_mock or c[0] != "Mock"]
        if cands:
            out.append(KemArtifactMatch(rec.index, rec.tcp_payload_len, tuple(cands)))
    return out


def _is_pk(kind: str) -> bool:
    return kind.endswith("public_key")


def scan_summary(matches: Iterable[KemArtifactMatch], records: Iterable[PacketRecord] = ()) -> dict:
    """Per-paramset match counts and per-flow handshake inference.

    A flow is flagged a probable PQC handshake when it carries at least one
    public-key-sized and one ciphertext-sized packet of the same paramset.
    """
    matches = list(matches)
    by_index = {r.index: r for r in records}
    counts: Counter[str] = Counter()
    flows: dict[tuple, dict[str, set[str]]] = {}
    for m in matches:
        for ps in {ps for ps, _ in m.candidates}:
            counts[ps] += 1
        rec = by_index.get(m.packet_index)
        fkey = rec.flow if rec is not None else ("unknown",)
        per = flows.setdefault(fkey, {})
        for ps, kind in m.candidates:
            per.setdefault(ps, set()).add("pk" if _is_pk(kind) else "ct")
    flow_rows = []
    for fkey, per in flows.items():
        handshakes = sorted(ps for ps, kinds in per.items() if kinds == {"pk", "ct"})
        name = ("unknown" if fkey == ("unknown",)
                else f"{fkey[0][0]}:{fkey[0][1]} <-> {fkey[1][0]}:{fkey[1][1]}")
        flow_rows.append({"flow": name, "paramsets": sorted(per), "probable_pqc_handshake": bool(handshakes),
                          "handshake_paramsets": handshakes})
    return {
        "matches": [{"packet_index": m.packet_index, "tcp_payload_len": m.tcp_payload_len,
                     "candidates": [{"paramset": ps, "artifact_kind": k} for ps, k in m.candidates]}
                    for m in matches],
        "paramset_counts": dict(sorted(counts.items())),
        "flows": flow_rows,
    }


def scan_report(matches: Iterable[KemArtifactMatch], records: Iterable[PacketRecord] = (),
                as_json: bool = False) -> str:
    summary = scan_summary(matches, records)
    if as_json:
        return json.dumps(summary, indent=2) + "\n"
    if not summary["matches"]:
        return ""
    lines = ["packet  length  candidates"]
    for m in summary["matches"]:
        cands = ", ".join(f"{c['paramset']}/{c['artifact_kind']}" for c in m["candidates"])
        lines.append(f"{m['packet_index']:>6}  {m['tcp_payload_len']:>6}  {cands}")
    lines += ["", "matches per paramset:"]
    lines += [f"  {ps:<11} {n}" for ps, n in summary["paramset_counts"].items()]
    lines += ["", "flows:"]
    for f in summary["flows"]:
        flag = "probable PQC handshake (" + ", ".join(f["handshake_paramsets"]) + ")" \
            if f["probable_pqc_handshake"] else "no complete handshake"
        lines.append(f"  {f['flow']}: {flag}")
    return "\n".join(lines) + "\n"


def scan_file(path: str | os.PathLike, registry: KemRegistry | None = None) -> tuple[Capture, list[KemArtifactMatch]]:
    cap = parse_pcap(path)
    return cap, classify(cap.records, registry)


class RecordingSocket:
    """Wraps a connected client socket and logs the bytes in each direction.

    ``segments()`` re-splits the logged streams at frame boundaries, one TCP
    segment per protocol frame, ready for ``write_segments``.
    """

    def __init__(self, sock, clock=None) -> None:
        self._sock = sock
        self._clock = clock or time.time
        # kept so segments() still works after the socket is closed
        self._client = sock.getsockname()[:2]
        self._server = sock.getpeername()[:2]
        self.log: list[tuple[str, float, bytes]] = []  # ("c2s"|"s2c", time, data)

    def sendall(self, data: bytes) -> None:
        self._sock.sendall(data)
        self.log.append(("c2s", self._clock(), bytes(data)))

    def recv(self, n: int) -> bytes:
        data = self._sock.recv(n)
        if data:
            self.log.append(("s2c", self._clock(), data))
        return data

    def __getattr__(self, name):
        return getattr(self._sock, name)

    def segments(self) -> list[Segment]:
        cli, srv = self._client, self._server
        runs: list[tuple[str, float, bytearray]] = []
        for direction, ts, data in self.log:
            if runs and runs[-1][0] == direction:
                runs[-1][2].extend(data)
            else:
                runs.append((direction, ts, bytearray(data)))
        out = []
        for direction, ts, buf in runs:
            a, b = (cli, srv) if direction == "c2s" else (srv, cli)
            pos = 0
            while pos < len(buf):
                _, used = wire.decode_bytes(bytes(buf[pos:]))
                out.append(Segment(a[0], a[1], b[0], b[1], bytes(buf[pos:pos + used]), ts))
                pos += used
        return out
