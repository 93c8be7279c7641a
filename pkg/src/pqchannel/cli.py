"""Command-line entry point: ``pqchannel server|client|bench|report|pcapscan|status``.

Exit codes: 0 success, 1 failure or no match (pcapscan), 2 usage or parse
error, 3 partial bench failure. Logs go to stderr, data to stdout or files.
Settings come from ``--config`` (or ``PQCHANNEL_CONFIG``); flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import signal
import socket
import sys
import threading
from pathlib import Path

from . import __version__, bench, config, pcapscan
from .errors import BenchError, PcapError, PqChannelError, ServerUnreachable
from .kem import KemRegistry, load_provider, set_default_registry
from .kem.registry import PQC_PARAMSETS, canonical_id
from .probes import DEFAULT_PERIOD, parse_probe_spec
from .protocol import DEFAULT_PORT, DEFAULT_TIMEOUT, run_once

log = logging.getLogger("pqchannel")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _pick(flag, cfg: dict, key: str, default):
    if flag is not None:
        return flag
    return config.get(cfg, key, default)


def _csv_list(value) -> list[str]:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return list(value)


def _paramsets(value, registry: KemRegistry) -> list[str]:
    names = _csv_list(value)
    if [n.lower() for n in names] == ["all"]:
        return list(PQC_PARAMSETS)
    try:
        return [canonical_id(n) for n in names]
    except KeyError as exc:
        raise UsageError(str(exc.args[0] if exc.args else exc)) from None


def _require_enabled(names: list[str], registry: KemRegistry) -> None:
    off = [n for n in names if not registry.lookup(n).enabled]
    if off:
        raise UsageError(f"no KEM provider available for {', '.join(off)} (try --provider or --kem mock)")


def _mock_seed_fn(seed: int | None):
    if seed is None:
        return None
    rng = random.Random(seed)
    lock = threading.Lock()

    def next_seed() -> bytes:
        with lock:
            return rng.randbytes(32)
    return next_seed


# -- subcommands -------------------------------------------------------------

def cmd_server(args, cfg: dict, registry: KemRegistry) -> int:
    from .service.agent import Agent

    host, port = config.parse_address(_pick(args.listen, cfg, "server.listen", f"0.0.0.0:{DEFAULT_PORT}"),
                                      DEFAULT_PORT)
    kem = _pick(args.kem, cfg, "server.kem", None)
    allowed = _paramsets(kem, registry) if kem else None
    if allowed:
        _require_enabled(allowed, registry)
    try:
        probes = parse_probe_spec(_pick(args.probes, cfg, "probes.spec", ""),
                                  float(_pick(args.probe_period, cfg, "probes.period", DEFAULT_PERIOD)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples_csv = _pick(args.samples_csv, cfg, "server.samples_csv", None)
    try:
        agent = Agent(host, port, registry=registry, probes=probes, samples_csv=samples_csv, allowed=allowed,
                      timeout=args.timeout, mock_seed_fn=_mock_seed_fn(args.seed))
    except OSError as exc:
        print(f"error: cannot listen on {host}:{port}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FAIL

    http = _pick(args.http, cfg, "server.http", None)
    uv = None
    if http:
        import uvicorn

        from .service.app import create_app
        h, p = config.parse_address(http, 8080)
        try:
            http_sock = socket.create_server((h, p), reuse_port=False)
        except OSError as exc:
            agent.stop()
            print(f"error: cannot listen on {h}:{p}: {exc.strerror or exc}", file=sys.stderr)
            return EXIT_FAIL
        uv = uvicorn.Server(uvicorn.Config(create_app(agent), log_level="warning"))
        uv.install_signal_handlers = lambda: None
        threading.Thread(target=uv.run, kwargs={"sockets": [http_sock]}, name="http", daemon=True).start()

    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    agent.start()
    shost, sport = agent.address
    offered = ", ".join(allowed) if allowed else ", ".join(ps.id for ps in registry.enabled())
    log.info("listening on %s:%d (%s)%s", shost, sport, offered, f"; api on {http}" if http else "")
    try:
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        if uv is not None:
            uv.should_exit = True
        agent.stop()
        log.info("stopped: %s", agent.server.stats.snapshot())
    return EXIT_OK


def cmd_client(args, cfg: dict, registry: KemRegistry) -> int:
    addr = config.parse_address(_pick(args.server, cfg, "client.server", f"127.0.0.1:{DEFAULT_PORT}"),
                                DEFAULT_PORT)
    ps = _paramsets(_pick(args.kem, cfg, "client.kem", "Kyber-768"), registry)
    if len(ps) != 1:
        raise UsageError("client takes exactly one --kem")
    _require_enabled(ps, registry)
    if args.payload_file:
        payload = Path(args.payload_file).read_bytes()
    else:
        payload = (args.message if args.message is not None else "hello").encode()
    rng = random.Random(args.seed) if args.seed is not None else None
    failures = 0
    for i in range(args.count):
        r = rng.randbytes(32) if rng is not None and ps[0] == "Mock" else None
        try:
            timing, ack = run_once(addr, ps[0], payload, registry=registry, timeout=args.timeout,
                                   encap_randomness=r)
        except ServerUnreachable as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        except (PqChannelError, OSError) as exc:
            failures += 1
            log.error("session %d failed: %s: %s", i + 1, type(exc).__name__, exc)
            continue
        print(f"session {i + 1} paramset={ps[0]} handshake_ms={timing.t_total * 1e3:.3f} "
              f"payload={len(payload)} ack={ack.decode(errors='replace')}")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def _print_manifest(plan: bench.RunPlan, out) -> None:
    rows = plan.manifest()
    print(f"plan: {len(rows)} sessions x {plan.repetitions} repetition(s), "
          f"session {plan.session_duration:g}s, rest {plan.rest_duration:g}s", file=out)
    for i, row in enumerate(rows, 1):
        print(f"{i:>3}  {row['paramset']:<11} {row['scenario']:<12} {row['payload_len']:>6} bytes", file=out)
    out.flush()


def cmd_bench(args, cfg: dict, registry: KemRegistry) -> int:
    paramsets = _paramsets(_pick(args.kem, cfg, "plan.paramsets", list(PQC_PARAMSETS)), registry)
    seed = args.seed
    default_names = [] if args.scenario_file else list(bench.SCENARIO_SIZES)
    names = _csv_list(_pick(args.scenarios, cfg, "plan.scenarios", default_names))
    try:
        scenarios = bench.default_scenarios(names, seed) if names else []
        scenarios += [bench.scenario_from_file(p) for p in (args.scenario_file or [])]
        plan = bench.RunPlan(paramsets, scenarios,
                             session_duration=float(_pick(args.session_secs, cfg, "plan.session_secs",
                                                          bench.DEFAULT_SESSION_SECS)),
                             rest_duration=float(_pick(args.rest_secs, cfg, "plan.rest_secs",
                                                       bench.DEFAULT_REST_SECS)),
                             repetitions=int(_pick(args.repetitions, cfg, "plan.repetitions", 1)))
        probes = parse_probe_spec(_pick(args.probes, cfg, "probes.spec", ""),
                                  float(_pick(args.probe_period, cfg, "probes.period", DEFAULT_PERIOD)))
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None

    _print_manifest(plan, sys.stdout)
    if args.dry_run:
        return EXIT_OK
    _require_enabled(plan.paramsets, registry)
    out_dir = _pick(args.out, cfg, "output.dir", "bench-out")

    agent = client = None
    counter = samples = None
    if args.local_server:
        from .service.agent import Agent
        if not args.verbose:  # thousands of per-session lines would drown the progress log
            logging.getLogger("pqchannel.protocol").setLevel(logging.WARNING)
        agent = Agent("127.0.0.1", 0, registry=registry, timeout=args.timeout,
                      mock_seed_fn=_mock_seed_fn(seed)).start()
        addr = agent.address
        counter = lambda: agent.server.stats.started  # noqa: E731
    else:
        addr = config.parse_address(_pick(args.server, cfg, "client.server", f"127.0.0.1:{DEFAULT_PORT}"),
                                    DEFAULT_PORT)
    agent_url = _pick(args.agent, cfg, "client.agent", None)
    if agent_url:
        from .service.client import AgentClient
        client = AgentClient(agent_url)
        counter, samples = client.session_count, client.samples
    try:
        reports = bench.run_plan(plan, addr, probes, out_dir, registry=registry, session_counter=counter,
                                 server_samples=samples, timeout=args.timeout, mock_seed=seed)
    except ServerUnreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if agent is not None:
            agent.stop()
        if client is not None:
            client.close()

    report_path = Path(out_dir) / "report.txt"
    if report_path.exists():
        sys.stdout.write(report_path.read_text(encoding="utf-8"))
    print(f"results in {out_dir}", file=sys.stderr)
    if any(r.status != "ok" for r in reports):
        sys.stdout.write("\n" + bench.status_table(reports))
        return EXIT_PARTIAL
    return EXIT_OK


def _raw_csvs(paths: list[str]) -> list[Path]:
    out: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            raw = p / "raw" if (p / "raw").is_dir() else p
            out += sorted(f for f in raw.glob("*.csv") if not f.name.endswith("_timings.csv"))
        else:
            out.append(p)
    return out


def cmd_report(args, cfg: dict, registry: KemRegistry) -> int:
    files = _raw_csvs(args.paths)
    if not files:
        print("error: no raw CSV files found", file=sys.stderr)
        return EXIT_USAGE
    try:
        text = bench.render_report(bench.reports_from_csv(files), args.format)
    except (BenchError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_pcapscan(args, cfg: dict, registry: KemRegistry) -> int:
    try:
        cap = pcapscan.parse_pcap(args.file)
    except (PcapError, OSError) as exc:
        print(f"error: {args.file}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for w in cap.warnings:
        log.warning("%s", w)
    matches = pcapscan.classify(cap.records, registry, include_mock=args.include_mock)
    sys.stdout.write(pcapscan.scan_report(matches, cap.records, as_json=args.json))
    if not matches and not args.json:
        print(f"no KEM artifacts in {len(cap.records)} packets", file=sys.stderr)
    return EXIT_OK if matches else EXIT_FAIL


def cmd_status(args, cfg: dict, registry: KemRegistry) -> int:
    import httpx

    from .service.client import AgentClient
    url = _pick(args.agent, cfg, "client.agent", "127.0.0.1:8080")
    try:
        with AgentClient(url) as c:
            data = {"health": c.health(), "sessions": c.sessions()}
    except httpx.HTTPError as exc:
        print(f"error: agent at {url}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(data, indent=2))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _global_options(top: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags so they work on either side of the
    # command name; their defaults are suppressed so they never clobber
    # values given before it.
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    common = argparse.ArgumentParser(add_help=False, argument_default=None if top else argparse.SUPPRESS)
    g = common.add_argument_group("global options")
    g.add_argument("-v", "--verbose", action="count", default=d(0), help="more logging (repeatable)")
    g.add_argument("-q", "--quiet", action="store_true", default=d(False), help="warnings and errors only")
    g.add_argument("--config", help="TOML or JSON config file (default: $PQCHANNEL_CONFIG)")
    g.add_argument("--provider", choices=["auto", "liboqs", "pqcrypto", "none"],
                   help="KEM provider backend (default: auto)")
    g.add_argument("--seed", type=int, help="seed for payloads and Mock KEM randomness")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(top=False)
    p = argparse.ArgumentParser(prog="pqchannel", description="Post-quantum KEM secure channel: server, client, benchmark and pcap tools.",
                                parents=[_global_options(top=True)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("server", parents=[common], help="run the KEM server")
    s.add_argument("--listen", help=f"HOST:PORT (default 0.0.0.0:{DEFAULT_PORT})")
    s.add_argument("--kem", help="comma-separated paramsets to offer (default: all enabled)")
    s.add_argument("--http", help="also serve the control-plane API on HOST:PORT")
    s.add_argument("--probes", help="server-side probes, e.g. temp=PATH,mem=self,power=PATH")
    s.add_argument("--probe-period", type=float)
    s.add_argument("--samples-csv", help="append server samples to this CSV")
    s.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="per-read timeout, seconds")
    s.set_defaults(func=cmd_server)

    c = sub.add_parser("client", parents=[common], help="run one or more sessions against a server")
    c.add_argument("--server", help=f"HOST:PORT (default 127.0.0.1:{DEFAULT_PORT})")
    c.add_argument("--kem", help="paramset (default Kyber-768)")
    m = c.add_mutually_exclusive_group()
    m.add_argument("--message", help="payload text (default 'hello')")
    m.add_argument("--payload-file", help="send this file as the payload")
    c.add_argument("--count", type=int, default=1)
    c.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    c.set_defaults(func=cmd_client)

    b = sub.add_parser("bench", parents=[common], help="run the measurement plan")
    where = b.add_mutually_exclusive_group()
    where.add_argument("--server", help=f"HOST:PORT (default 127.0.0.1:{DEFAULT_PORT})")
    where.add_argument("--local-server", action="store_true", help="start a server in this process")
    b.add_argument("--kem", help="comma-separated paramsets or 'all' (default: the nine)")
    b.add_argument("--session-secs", type=float, help="session length (default 300)")
    b.add_argument("--rest-secs", type=float, help="rest between sessions (default 300)")
    b.add_argument("--scenarios", help="comma-separated, from networkSim1..networkSim4")
    b.add_argument("--scenario-file", action="append", help="extra scenario from a payload file (repeatable)")
    b.add_argument("--repetitions", type=int)
    b.add_argument("--probes", help="client-side probes, e.g. temp=PATH,mem=self,powercsv=PATH")
    b.add_argument("--probe-period", type=float)
    b.add_argument("--out", help="output directory (default bench-out)")
    b.add_argument("--agent", help="server agent API URL, for server samples and rest checks")
    b.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    b.add_argument("--dry-run", action="store_true", help="print the plan and exit")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", parents=[common], help="recompute reports from raw CSVs")
    r.add_argument("paths", nargs="+", help="raw CSV files or bench output directories")
    r.add_argument("--format", choices=["table", "csv", "json"], default="table")
    r.add_argument("-o", "--output", help="write here instead of stdout")
    r.set_defaults(func=cmd_report)

    k = sub.add_parser("pcapscan", parents=[common], help="find KEM artifacts in a pcap")
    k.add_argument("file")
    k.add_argument("--json", action="store_true")
    k.add_argument("--include-mock", action="store_true", help="also match 32-byte Mock artifacts")
    k.set_defaults(func=cmd_pcapscan)

    t = sub.add_parser("status", parents=[common], help="query a server's control-plane API")
    t.add_argument("--agent", help="API address (default 127.0.0.1:8080)")
    t.set_defaults(func=cmd_status)
    return p


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging(args) -> None:
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    handler = _StderrHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
    logging.getLogger("httpx").setLevel(max(level, logging.WARNING))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    try:
        cfg = config.load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        registry = KemRegistry(load_provider(_pick(args.provider, cfg, "kem.provider", "auto")))
    except (PqChannelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    set_default_registry(registry)
    try:
        return args.func(args, cfg, registry)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
