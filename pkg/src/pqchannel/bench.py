"""Benchmark orchestration and mean ± std reporting.

A plan runs every (paramset, scenario) pair as a fixed-duration session of
back-to-back handshakes, with a rest period between sessions. Each completed
handshake contributes one ExecTime sample (client-observed total time);
probes sample power, memory and temperature alongside. Raw samples are
written to CSV before aggregation so reports can be recomputed offline.

Raw CSV schema: ``timestamp,role,metric,value,paramset,scenario``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import EmptyInput, PqChannelError, SchemaError, ServerUnreachable, Timeout, UnknownParamSet
from .kem import PQC_PARAMSETS, PARAMSET_IDS, KemRegistry, canonical_id, default_registry
from .probes import Metric, MetricSample, ProbeConfig, Role, Sampler
from .protocol import connect, run_once

log = logging.getLogger(__name__)

SCENARIO_SIZES = {"networkSim1": 208, "networkSim2": 731, "networkSim3": 1235, "networkSim4": 2328}
DEFAULT_SESSION_SECS = 300.0
DEFAULT_REST_SECS = 300.0
RAW_FIELDS = ("timestamp", "role", "metric", "value", "paramset", "scenario")
TIMING_FIELDS = ("timestamp", "paramset", "scenario", "t_encap", "t_kdf", "t_total")

METRIC_ORDER = (Metric.EXEC_TIME, Metric.POWER_W, Metric.MEMORY_KB, Metric.TEMP_C)
METRIC_DECIMALS = {Metric.EXEC_TIME: 3, Metric.POWER_W: 3, Metric.MEMORY_KB: 2, Metric.TEMP_C: 2}
METRIC_TITLES = {
    Metric.EXEC_TIME: "Execution Time (s)",
    Metric.POWER_W: "Power Consumption (W)",
    Metric.MEMORY_KB: "Memory Usage (KB)",
    Metric.TEMP_C: "Temperature (°C)",
}
ROLE_ORDER = (Role.CLIENT, Role.SERVER)

_TEXT = b"Post-quantum key exchange benchmark payload. The quick brown fox jumps over the lazy dog. "


@dataclass(frozen=True)
class Scenario:
    name: str
    payload: bytes

    @property
    def payload_len(self) -> int:
        return len(self.payload)


def make_payload(size: int, seed: int | None = None) -> bytes:
    """ASCII text of exactly ``size`` bytes; a fixed repeating pattern unless seeded."""
    if seed is None:
        reps = size // len(_TEXT) + 1
        return (_TEXT * reps)[:size]
    rng = random.Random(seed)
    alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,\n"
    return bytes(rng.choice(alphabet) for _ in range(size))


def default_scenarios(names: Iterable[str] | None = None, seed: int | None = None) -> list[Scenario]:
    names = list(names) if names is not None else list(SCENARIO_SIZES)
    out = []
    for name in names:
        if name not in SCENARIO_SIZES:
            raise ValueError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_SIZES)}")
        out.append(Scenario(name, make_payload(SCENARIO_SIZES[name], seed)))
    return out


def scenario_from_file(path: str | Path, name: str | None = None) -> Scenario:
    p = Path(path)
    return Scenario(name or p.stem, p.read_bytes())


@dataclass
class RunPlan:
    paramsets: list[str] = field(default_factory=lambda: list(PQC_PARAMSETS))
    scenarios: list[Scenario] = field(default_factory=default_scenarios)
    session_duration: float = DEFAULT_SESSION_SECS
    rest_duration: float = DEFAULT_REST_SECS
    repetitions: int = 1

    def __post_init__(self) -> None:
        self.paramsets = [canonical_id(p) for p in self.paramsets]
        if not self.session_duration > 0:
            raise ValueError("session duration must be positive")
        if self.rest_duration < 0:
            raise ValueError("rest duration must be non-negative")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.paramsets or not self.scenarios:
            raise ValueError("plan needs at least one paramset and one scenario")

    def manifest(self) -> list[dict]:
        return [{"paramset": p, "scenario": s.name, "payload_len": s.payload_len}
                for p in self.paramsets for s in self.scenarios]


# -- statistics --------------------------------------------------------------

@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int


def aggregate(samples: Sequence[float]) -> Aggregate:
    """Mean and sample standard deviation (n-1 denominator; 0 for n = 1).

    Single pass (Welford), so it stays stable on long, nearly constant series.
    """
    n = 0
    mean = 0.0
    m2 = 0.0
    for x in samples:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
    if n == 0:
        raise EmptyInput("cannot aggregate an empty sample list")
    std = math.sqrt(m2 / (n - 1)) if n > 1 and m2 > 0 else 0.0
    return Aggregate(mean, std, n)


@dataclass
class SessionReport:
    paramset: str
    scenario: str
    aggregates: dict[tuple[Metric, Role], Aggregate]
    raw_files: list[str] = field(default_factory=list)
    status: str = "ok"  # ok | partial | failed
    handshakes: int = 0
    failures: int = 0
    gaps: list[str] = field(default_factory=list)
    rest_clean: bool | None = None


@dataclass(frozen=True)
class RawSample:
    timestamp: float
    role: Role
    metric: Metric
    value: float
    paramset: str
    scenario: str


def _sort_key(s: RawSample):
    return (s.timestamp, s.role.value, s.metric.value, s.value)


def reports_from_samples(samples: Iterable[RawSample], expected_metrics: Iterable[tuple[Metric, Role]] = ()) -> list[SessionReport]:
    """Group raw samples by (paramset, scenario) and aggregate each (metric, role).

    Samples are put in a canonical order first, so the result does not depend
    on how they were split across files.
    """
    groups: dict[tuple[str, str], dict[tuple[Metric, Role], list[float]]] = {}
    for s in sorted(samples, key=_sort_key):
        groups.setdefault((s.paramset, s.scenario), {}).setdefault((s.metric, s.role), []).append(s.value)
    out = []
    for (ps, sc), series in groups.items():
        aggs = {k: aggregate(v) for k, v in series.items()}
        gaps = [f"{m.value}/{r.value}" for m, r in expected_metrics if (m, r) not in aggs]
        handshakes = aggs[(Metric.EXEC_TIME, Role.CLIENT)].n if (Metric.EXEC_TIME, Role.CLIENT) in aggs else 0
        out.append(SessionReport(ps, sc, aggs, gaps=gaps, handshakes=handshakes))
    return sort_reports(out)


def _natural(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def sort_reports(reports: Iterable[SessionReport]) -> list[SessionReport]:
    def key(r: SessionReport):
        idx = PARAMSET_IDS.index(r.paramset) if r.paramset in PARAMSET_IDS else len(PARAMSET_IDS)
        return (idx, r.paramset, _natural(r.scenario))
    return sorted(reports, key=key)


# -- raw CSV -----------------------------------------------------------------

def write_raw_csv(path: str | Path, samples: Iterable[RawSample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_FIELDS)
        for s in samples:
            # repr() round-trips floats exactly, so offline recomputation is bit-identical
            w.writerow((repr(s.timestamp), s.role.value, s.metric.value, repr(s.value), s.paramset, s.scenario))
    return path


def read_raw_csv(path: str | Path) -> list[RawSample]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RAW_FIELDS:
            raise SchemaError(f"{path}: header must be {','.join(RAW_FIELDS)}", 1)
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(RAW_FIELDS):
                raise SchemaError(f"{path}: expected {len(RAW_FIELDS)} fields, got {len(row)}", lineno)
            ts, role, metric, value, ps, sc = row
            try:
                sample = RawSample(float(ts), Role(role), Metric(metric), float(value), canonical_id(ps), sc)
            except (ValueError, UnknownParamSet) as exc:
                raise SchemaError(f"{path}: {exc}", lineno) from None
            if not (math.isfinite(sample.value) and sample.value >= 0):
                raise SchemaError(f"{path}: value must be a finite non-negative number", lineno)
            out.append(sample)
    return out


def reports_from_csv(paths: Iterable[str | Path]) -> list[SessionReport]:
    samples: list[RawSample] = []
    files: dict[tuple[str, str], list[str]] = {}
    for p in paths:
        rows = read_raw_csv(p)
        samples.extend(rows)
        for key in {(r.paramset, r.scenario) for r in rows}:
            files.setdefault(key, []).append(str(p))
    reports = reports_from_samples(samples)
    for r in reports:
        r.raw_files = files.get((r.paramset, r.scenario), [])
    return reports


# -- rendering ---------------------------------------------------------------

def format_cell(metric: Metric, agg: Aggregate) -> str:
    d = METRIC_DECIMALS[metric]
    return f"{agg.mean:.{d}f} ± {agg.std:.{d}f}"


def _present_keys(reports: Sequence[SessionReport]) -> list[tuple[Metric, Role]]:
    keys = {k for r in reports for k in r.aggregates}
    return [(m, r) for m in METRIC_ORDER for r in ROLE_ORDER if (m, r) in keys]


def _render_table(reports: list[SessionReport]) -> str:
    scenarios: list[str] = []
    for r in reports:
        if r.scenario not in scenarios:
            scenarios.append(r.scenario)
    scenarios.sort(key=_natural)
    paramsets: list[str] = []
    for r in reports:
        if r.paramset not in paramsets:
            paramsets.append(r.paramset)
    by_key = {(r.paramset, r.scenario): r for r in reports}

    blocks = []
    for metric, role in _present_keys(reports):
        header = ["Algorithm", *scenarios]
        rows = []
        prev_family = None
        for ps in paramsets:
            family = ps.split("-")[0]
            if prev_family is not None and family != prev_family:
                rows.append(None)
            prev_family = family
            cells = [ps]
            for sc in scenarios:
                rep = by_key.get((ps, sc))
                agg = rep.aggregates.get((metric, role)) if rep else None
                cells.append(format_cell(metric, agg) if agg else "n/a")
            rows.append(cells)
        widths = [max(len(header[i]), *(len(r[i]) for r in rows if r)) for i in range(len(header))]
        sep = "-+-".join("-" * w for w in widths)
        lines = [f"{METRIC_TITLES[metric]} [{role.value}]",
                 " | ".join(h.ljust(w) for h, w in zip(header, widths)), sep]
        for row in rows:
            lines.append(sep if row is None else " | ".join(c.ljust(w) for c, w in zip(row, widths)))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def _flat_rows(reports: list[SessionReport]) -> list[dict]:
    rows = []
    for r in reports:
        for metric, role in _present_keys([r]):
            a = r.aggregates[(metric, role)]
            rows.append({"paramset": r.paramset, "scenario": r.scenario, "metric": metric.value,
                         "role": role.value, "mean": a.mean, "std": a.std, "n": a.n})
    return rows


def render_report(reports: Sequence[SessionReport], fmt: str = "table") -> str:
    """Render aggregates as a grouped text table, CSV or JSON."""
    if not reports:
        raise EmptyInput("no reports to render")
    reports = sort_reports(reports)
    if fmt == "table":
        return _render_table(reports)
    rows = _flat_rows(reports)
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["paramset", "scenario", "metric", "role", "mean", "std", "n"],
                           lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({**row, "mean": repr(row["mean"]), "std": repr(row["std"])})
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


# -- orchestration -----------------------------------------------------------

def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def check_reachable(address: tuple[str, int], timeout: float = 5.0) -> None:
    sock = connect(address, timeout)
    sock.close()


def run_plan(plan: RunPlan, server_addr: tuple[str, int], probes: Sequence[ProbeConfig] = (),
             out_dir: str | Path = "bench-out", *, registry: KemRegistry | None = None,
             session_counter: Callable[[], int] | None = None,
             server_samples: Callable[[float, float], list[MetricSample]] | None = None,
             timeout: float = 10.0, mock_seed: int | None = None,
             sleep: Callable[[float], None] = time.sleep) -> list[SessionReport]:
    """Execute ``plan`` against a running server and write raw CSVs and reports.

    ``session_counter`` returns the server's count of accepted sessions; it is
    read around each rest period to confirm no traffic happened there.
    ``server_samples(t0, t1)`` fetches server-side probe samples (e.g. from
    the agent's HTTP API) to merge into the session's raw CSV.
    """
    registry = registry or default_registry()
    for ps in plan.paramsets:
        registry.lookup(ps)
    check_reachable(server_addr, timeout)  # raises ServerUnreachable before any session starts

    out = Path(out_dir)
    raw_dir = out / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps({
        "session_duration": plan.session_duration, "rest_duration": plan.rest_duration,
        "repetitions": plan.repetitions, "sessions": plan.manifest()}, indent=2) + "\n")

    expected = [(Metric.EXEC_TIME, Role.CLIENT)] + [(p.metric, Role.CLIENT) for p in probes if p.metric]
    seed_rng = random.Random(mock_seed) if mock_seed is not None else None
    all_samples: list[RawSample] = []
    status: dict[tuple[str, str], dict] = {}
    pairs = [(ps, sc) for ps in plan.paramsets for sc in plan.scenarios]
    sessions = [(ps, sc, rep) for ps, sc in pairs for rep in range(plan.repetitions)]
    last_count = None

    for i, (ps, sc, rep) in enumerate(sessions):
        if i > 0 and plan.rest_duration > 0:
            log.info("resting %.1fs", plan.rest_duration)
            sleep(plan.rest_duration)
        st = status.setdefault((ps, sc.name), {"files": [], "failures": 0, "handshakes": 0,
                                          "aborted": False, "rest_clean": None})
        if session_counter is not None and last_count is not None:
            clean = session_counter() == last_count
            st["rest_clean"] = clean if st["rest_clean"] is None else (st["rest_clean"] and clean)
            if not clean:
                log.warning("server saw traffic during the rest before %s/%s", ps, sc.name)

        log.info("session %d/%d: %s %s (%d bytes) rep %d", i + 1, len(sessions), ps, sc.name,
                 sc.payload_len, rep + 1)
        sampler = Sampler(list(probes), Role.CLIENT).start() if probes else None
        samples: list[RawSample] = []
        timings: list[tuple] = []
        t_start_wall = time.time()
        deadline = time.monotonic() + plan.session_duration
        consecutive = 0
        try:
            while time.monotonic() < deadline:
                r = seed_rng.randbytes(32) if seed_rng is not None and ps == "Mock" else None
                try:
                    timing, _ = run_once(server_addr, ps, sc.payload, registry=registry,
                                         timeout=timeout, encap_randomness=r)
                except (PqChannelError, OSError) as exc:
                    st["failures"] += 1
                    consecutive += 1
                    log.warning("handshake failed: %s: %s", type(exc).__name__, exc)
                    if isinstance(exc, (ServerUnreachable, Timeout)) or consecutive >= 10:
                        st["aborted"] = True
                        break
                    continue
                consecutive = 0
                now = time.time()
                samples.append(RawSample(now, Role.CLIENT, Metric.EXEC_TIME, timing.t_total, ps, sc.name))
                timings.append((repr(now), ps, sc.name, repr(timing.t_encap), repr(timing.t_kdf),
                                repr(timing.t_total)))
        finally:
            if sampler is not None:
                sampler.stop()
        t_end_wall = time.time()
        if session_counter is not None:
            last_count = session_counter()
        if sampler is not None:
            samples += [RawSample(s.timestamp, s.role, s.metric, s.value, ps, sc.name) for s in sampler.take()]
        if server_samples is not None:
            try:
                remote = server_samples(t_start_wall, t_end_wall)
            except Exception as exc:
                log.warning("could not fetch server samples: %s", exc)
            else:
                samples += [RawSample(s.timestamp, Role.SERVER, s.metric, s.value, ps, sc.name) for s in remote]
        samples.sort(key=_sort_key)
        st["handshakes"] += len(timings)
        stem = f"{_safe(ps)}__{_safe(sc.name)}__r{rep + 1}"
        raw_path = write_raw_csv(raw_dir / f"{stem}.csv", samples)
        with open(raw_dir / f"{stem}_timings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMING_FIELDS)
            w.writerows(timings)
        st["files"].append(str(raw_path))
        all_samples += samples

    reports = reports_from_samples(all_samples, expected)
    seen = {(r.paramset, r.scenario) for r in reports}
    for ps, sc in pairs:
        if (ps, sc.name) not in seen:  # no sample at all: keep the row as an explicit gap
            reports.append(SessionReport(ps, sc.name, {}, gaps=[f"{m.value}/{r.value}" for m, r in expected]))
    reports = sort_reports(reports)
    for r in reports:
        st = status[(r.paramset, r.scenario)]
        r.raw_files = st["files"]
        r.failures = st["failures"]
        r.handshakes = st["handshakes"]
        r.rest_clean = st["rest_clean"]
        if st["aborted"] or r.handshakes == 0:
            r.status = "failed"
        elif st["failures"]:
            r.status = "partial"
    write_reports(reports, out)
    return reports


def write_reports(reports: Sequence[SessionReport], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    aggregated = [r for r in reports if r.aggregates]
    if aggregated:
        for fmt, name in (("table", "report.txt"), ("csv", "report.csv"), ("json", "report.json")):
            (out / name).write_text(render_report(aggregated, fmt), encoding="utf-8")
    (out / "sessions.json").write_text(json.dumps([
        {"paramset": r.paramset, "scenario": r.scenario, "status": r.status, "handshakes": r.handshakes,
         "failures": r.failures, "gaps": r.gaps, "rest_clean": r.rest_clean, "raw_files": r.raw_files}
        for r in reports], indent=2) + "\n", encoding="utf-8")


def status_table(reports: Sequence[SessionReport]) -> str:
    lines = [f"{'paramset':<11} {'scenario':<12} {'status':<8} {'handshakes':>10} {'failures':>8}"]
    for r in reports:
        lines.append(f"{r.paramset:<11} {r.scenario:<12} {r.status:<8} {r.handshakes:>10} {r.failures:>8}")
    return "\n".join(lines) + "\n"
