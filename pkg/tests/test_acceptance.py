"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL/SKIP line that pytest prints in an
"acceptance criteria" section at the end of the run.
"""

import json
import math
import random
import socket
import statistics
import threading
import time

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from oracles import GCM_VECTORS, SHA256_ABC, sha256, two_pass_mean_std
from pqchannel import bench, crypto, pcapscan, wire
from pqchannel.bench import Aggregate, aggregate, format_cell
from pqchannel.cli import main as cli_main
from pqchannel.errors import AuthenticationFailure, EndOfStream, Truncated
from pqchannel.pcapscan import RecordingSocket, Segment
from pqchannel.probes import Metric
from pqchannel.protocol import (
    ClientSession,
    ClientState,
    DecryptedPayload,
    ServerSession,
    ServerState,
    client_run,
    connect,
    run_once,
    session_key_equality_check,
)


# -- 1 -----------------------------------------------------------------------

def _loopback_pair(registry, paramset, payload):
    """One handshake over a real loopback TCP connection, keeping both session objects."""
    listener = socket.create_server(("127.0.0.1", 0))
    server = ServerSession(registry)
    failure = []

    def serve():
        conn, _ = listener.accept()
        with conn:
            conn.settimeout(10)
            try:
                while server.state is not ServerState.CLOSED:
                    try:
                        msg = wire.decode(conn.recv, server.expect)
                    except EndOfStream:
                        break
                    for out in server.handle(msg):
                        conn.sendall(wire.encode(out))
            except Exception as exc:  # surfaced to the main thread
                failure.append(exc)

    t = threading.Thread(target=serve)
    t.start()
    client = ClientSession(paramset, registry)
    try:
        with connect(listener.getsockname()) as sock:
            _, ack = client_run(sock, paramset, payload, registry=registry, session=client)
    finally:
        t.join(10)
        listener.close()
    assert not failure, failure
    return client, server, ack


def test_criterion_1_protocol_correctness(criterion, real_registry):
    with criterion(1, "protocol correctness: 100 loopback handshakes per enabled paramset") as c:
        paramsets = [ps.id for ps in real_registry.enabled()]
        c.detail = f"{len(paramsets)} paramsets: {', '.join(paramsets)}"
        t0 = time.monotonic()
        for ps in paramsets:
            count = 0

            @settings(max_examples=100, derandomize=True, database=None, deadline=None,
                      suppress_health_check=list(HealthCheck))
            @given(payload=st.binary(max_size=2328))
            def check(payload):
                nonlocal count
                client, server, ack = _loopback_pair(real_registry, ps, payload)
                assert client.state is ClientState.ESTABLISHED and server.state is ServerState.ESTABLISHED
                assert session_key_equality_check(client, server)
                assert DecryptedPayload(payload) in server.events
                assert ack == b"OK"
                count += 1

            check()
            assert count >= 100, f"{ps}: only {count} handshakes ran"
        elapsed = time.monotonic() - t0
        c.detail += f"; {elapsed:.1f}s"
        assert elapsed < 120


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_crypto_known_answers(criterion):
    with criterion(2, "crypto known answers: SHA-256('abc') and 4 AES-256-GCM vectors") as c:
        assert crypto.derive_session_key(b"abc").key.hex() == SHA256_ABC == sha256(b"abc").hex()
        for name, key, iv, pt, aad, ct, tag in GCM_VECTORS:
            s = crypto._seal_with_nonce(crypto.SessionKey(bytes.fromhex(key)), bytes.fromhex(iv),
                                        bytes.fromhex(pt), bytes.fromhex(aad) or None)
            assert (s.ciphertext.hex(), s.tag.hex()) == (ct, tag), name
        c.detail = ", ".join(v[0] for v in GCM_VECTORS)


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_tamper_detection(criterion):
    with criterion(3, "tamper detection: 1000 single-bit mutations") as c:
        rng = random.Random(3)
        key = crypto.derive_session_key(b"tamper")
        false_accepts = 0
        per_field = {"nonce": 0, "ciphertext": 0, "tag": 0, "aad": 0}
        for _ in range(1000):
            sealed = crypto.seal(key, rng.randbytes(rng.randint(1, 256)), b"\x04")
            field = rng.choice(list(per_field))
            value = bytearray(getattr(sealed, field))
            bit = rng.randrange(len(value) * 8)
            value[bit // 8] ^= 1 << (bit % 8)
            mutated = crypto.SealedMessage(**{**sealed.__dict__, field: bytes(value)})
            per_field[field] += 1
            try:
                crypto.open_sealed(key, mutated)
                false_accepts += 1
            except AuthenticationFailure:
                pass
        c.detail = f"false accepts {false_accepts}; " + ", ".join(f"{k}={v}" for k, v in per_field.items())
        assert false_accepts == 0


# -- 4 -----------------------------------------------------------------------

def _random_message(rng):
    kind = rng.randrange(5)
    if kind == 0:
        return wire.ClientHello(rng.randrange(256), rng.randbytes(16))
    if kind == 1:
        return wire.PublicKey(rng.randbytes(rng.randrange(2000)))
    if kind == 2:
        return wire.Ciphertext(rng.randbytes(rng.randrange(2000)))
    if kind == 3:
        return wire.EncryptedMessage(rng.randbytes(12), rng.randbytes(16), rng.randbytes(rng.randrange(2000)))
    return wire.Error(rng.randrange(256), "".join(chr(rng.randrange(32, 0x2FFF)) for _ in range(rng.randrange(30))))


def test_criterion_4_wire_codec(criterion):
    with criterion(4, "wire codec: 10^4 fuzzed round trips, all truncation prefixes of 100 frames") as c:
        rng = random.Random(4)
        mismatches = 0
        for _ in range(10_000):
            msg = _random_message(rng)
            data = wire.encode(msg)
            out, used = wire.decode_bytes(data)
            mismatches += out != msg or used != len(data)
        prefixes = wrong = 0
        for _ in range(100):
            data = wire.encode(_random_message(rng))
            for cut in range(len(data)):
                prefixes += 1
                try:
                    wire.decode_bytes(data[:cut])
                    wrong += 1
                except Truncated:
                    pass
        c.detail = f"{mismatches} mismatches; {prefixes} prefixes, {wrong} not Truncated"
        assert mismatches == 0 and wrong == 0


# -- 5 -----------------------------------------------------------------------

def test_criterion_5_aggregation_oracle(criterion):
    with criterion(5, "aggregation matches two-pass oracle within 1e-9 on 1000 vectors") as c:
        rng = random.Random(5)
        worst = 0.0
        for _ in range(1000):
            xs = [rng.gauss(rng.uniform(-100, 100), rng.uniform(0.001, 50)) for _ in range(rng.randint(2, 500))]
            a = aggregate(xs)
            m, s = two_pass_mean_std(xs)
            worst = max(worst, abs(a.mean - m) / max(abs(m), 1e-300), abs(a.std - s) / max(abs(s), 1e-300))
        c.detail = f"worst relative error {worst:.2e}"
        assert worst <= 1e-9
        assert format_cell(Metric.EXEC_TIME, aggregate([1, 2, 3])) == "2.000 ± 1.000"


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_report_cells(criterion):
    with criterion(6, "report cell formatting") as c:
        a = format_cell(Metric.EXEC_TIME, Aggregate(0.0412, 0.0041, 10))
        b = format_cell(Metric.MEMORY_KB, Aggregate(5632.0, 0.0, 10))
        c.detail = f"{a!r}, {b!r}"
        assert a == "0.041 ± 0.004"
        assert b == "5632.00 ± 0.00"


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_desk_scale_run(criterion, tmp_path, capsys):
    with criterion(7, "desk-scale bench: Mock, 4 scenarios, 10 s sessions, 2 s rests") as c:
        out = tmp_path / "bench"
        t0 = time.monotonic()
        rc = cli_main(["--seed", "7", "bench", "--local-server", "--kem", "mock", "--session-secs", "10",
                       "--rest-secs", "2", "--probes", "mem=self", "--probe-period", "1", "--out", str(out)])
        elapsed = time.monotonic() - t0
        capsys.readouterr()
        assert rc == 0
        plan = json.loads((out / "plan.json").read_text())
        assert [s["payload_len"] for s in plan["sessions"]] == [208, 731, 1235, 2328]
        rows = json.loads((out / "report.json").read_text())
        per_metric = {}
        for r in rows:
            per_metric.setdefault((r["metric"], r["role"]), []).append(r)
        assert set(per_metric) == {("ExecTime", "client"), ("MemoryKB", "client")}
        assert all(len(v) == 4 for v in per_metric.values())
        exec_n = [r["n"] for r in per_metric[("ExecTime", "client")]]
        assert min(exec_n) >= 8
        sessions = json.loads((out / "sessions.json").read_text())
        assert all(s["status"] == "ok" for s in sessions)
        assert all(s["rest_clean"] for s in sessions[1:])
        for fmt, name in (("table", "report.txt"), ("json", "report.json"), ("csv", "report.csv")):
            assert cli_main(["report", str(out), "--format", fmt]) == 0
            assert capsys.readouterr().out == (out / name).read_text(), f"{fmt} recompute differs"
        c.detail = f"{elapsed:.1f}s; ExecTime samples per row {exec_n}"
        assert elapsed < 60


# -- 8 -----------------------------------------------------------------------

def _kyber768_artifacts(summary):
    hits = {(c["paramset"], c["artifact_kind"]) for m in summary["matches"] for c in m["candidates"]}
    pk = {k for p, k in hits if p == "Kyber-768" and k.endswith("public_key")}
    ct = {k for p, k in hits if p == "Kyber-768" and k.endswith("ciphertext")}
    flagged = any("Kyber-768" in f["handshake_paramsets"] for f in summary["flows"])
    return pk, ct, flagged


def test_criterion_8_pcap_fingerprinting(criterion, tmp_path, real_registry, kem_server):
    with criterion(8, "pcap fingerprinting of a Kyber-768 handshake") as c:
        routes = []
        ps = real_registry.lookup("Kyber-768")
        assert (ps.pk_len, ps.ct_len) == (1184, 1088)
        if ps.enabled:
            srv = kem_server(registry=real_registry)
            with connect(srv.address) as sock:
                rec = RecordingSocket(sock)
                client_run(rec, "Kyber-768", b"x" * 208, registry=real_registry)
            path = tmp_path / "recorded.pcap"
            pcapscan.write_segments(path, rec.segments())
            cap, matches = pcapscan.scan_file(path, real_registry)
            pk, ct, flagged = _kyber768_artifacts(pcapscan.scan_summary(matches, cap.records))
            # framed: 5-byte header + 1184-byte public key, 5-byte header + 1088-byte ciphertext
            assert pk == {"framed_public_key"} and ct == {"framed_ciphertext"} and flagged
            lens = sorted(m.tcp_payload_len for m in matches)
            assert lens == [1093, 1189]
            routes.append("recorded loopback (1189/1093 framed)")
        fixture = tmp_path / "fixture.pcap"
        pcapscan.write_segments(fixture, [
            Segment("192.168.1.10", 4433, "192.168.1.20", 51000, b"\xa5" * 1184, 1.0),
            Segment("192.168.1.20", 51000, "192.168.1.10", 4433, b"\x5a" * 1088, 1.1),
        ])
        cap, matches = pcapscan.scan_file(fixture, real_registry)
        pk, ct, flagged = _kyber768_artifacts(pcapscan.scan_summary(matches, cap.records))
        assert pk == {"public_key"} and ct == {"ciphertext"} and flagged
        routes.append("synthesized fixture (1184/1088 raw)")
        c.detail = "; ".join(routes)


# -- 9 -----------------------------------------------------------------------

def test_criterion_9_ordering(criterion, real_registry, kem_server):
    with criterion(9, "handshake time ordering (Kyber < BIKE, HQC; monotone within families)") as c:
        names = ["BIKE-L1", "BIKE-L3", "BIKE-L5", "HQC-128", "HQC-192", "HQC-256",
                 "Kyber-512", "Kyber-768", "Kyber-1024"]
        if not all(real_registry.lookup(n).enabled for n in names):
            pytest.skip("needs a provider with all nine paramsets")
        srv = kem_server(registry=real_registry)
        means = {}
        for n in names:
            run_once(srv.address, n, b"w", registry=real_registry)  # warm-up
            times = [run_once(srv.address, n, b"x" * 208, registry=real_registry)[0].t_total for _ in range(30)]
            means[n] = statistics.fmean(times)
        c.detail = ", ".join(f"{n}={means[n] * 1e3:.2f}ms" for n in names)
        kyber = [means[n] for n in names if n.startswith("Kyber")]
        others = [means[n] for n in names if not n.startswith("Kyber")]
        assert max(kyber) < min(others)
        assert means["BIKE-L1"] <= means["BIKE-L3"] <= means["BIKE-L5"]
        assert means["HQC-128"] <= means["HQC-192"] <= means["HQC-256"]
