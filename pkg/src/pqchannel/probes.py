"""System-metric probes: temperature, resident memory, power.

File formats:

* thermal file: ASCII integer in millidegrees Celsius (Linux thermal zones)
* process status: ``/proc/<pid>/status``; the ``VmRSS:`` line, in kB
* power file: ASCII real, watts
* meter CSV: ``epoch_seconds,watts`` rows, header optional

Parsing is locale-independent: only ``.`` is accepted as decimal separator.
"""

from __future__ import annotations

import bisect
import csv
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .errors import ParseError, ProbeIOError

log = logging.getLogger(__name__)

DEFAULT_THERMAL_PATH = "/sys/class/thermal/thermal_zone0/temp"
DEFAULT_PERIOD = 1.0

_REAL = re.compile(r"^[+]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_INT = re.compile(r"^[+-]?\d+$")


class Metric(str, Enum):
    EXEC_TIME = "ExecTime"
    POWER_W = "PowerW"
    MEMORY_KB = "MemoryKB"
    TEMP_C = "TempC"


class Role(str, Enum):
    CLIENT = "client"
    SERVER = "server"


class ProbeKind(str, Enum):
    THERMAL_FILE = "thermal_file"
    MEMINFO_PROCESS = "meminfo_process"
    POWER_FILE = "power_file"
    POWER_CSV_IMPORT = "power_csv_import"
    NULL = "null"


PROBE_METRIC = {
    ProbeKind.THERMAL_FILE: Metric.TEMP_C,
    ProbeKind.MEMINFO_PROCESS: Metric.MEMORY_KB,
    ProbeKind.POWER_FILE: Metric.POWER_W,
    ProbeKind.POWER_CSV_IMPORT: Metric.POWER_W,
    ProbeKind.NULL: None,
}


@dataclass(frozen=True)
class MetricSample:
    timestamp: float
    metric: Metric
    value: float
    source: str
    role: Role


@dataclass(frozen=True)
class ProbeConfig:
    kind: ProbeKind
    path: str | None = None
    period: float = DEFAULT_PERIOD
    pid: int | None = None  # meminfo_process only; default is this process

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProbeKind(self.kind))
        if not self.period > 0:
            raise ValueError("probe period must be positive")
        if self.kind in (ProbeKind.THERMAL_FILE, ProbeKind.POWER_FILE, ProbeKind.POWER_CSV_IMPORT) and not self.path:
            raise ValueError(f"{self.kind.value} probe needs a path")

    @property
    def metric(self) -> Metric | None:
        return PROBE_METRIC[self.kind]

    @property
    def source(self) -> str:
        return f"{self.kind.value}:{self.path or self.pid or 'self'}"


def _read_text(path: str | os.PathLike) -> str:
    try:
        return Path(path).read_text(encoding="ascii", errors="replace")
    except OSError as exc:
        raise ProbeIOError(f"cannot read {path}: {exc}") from exc


def _parse_real(text: str, what: str) -> float:
    s = text.strip()
    if not _REAL.match(s):
        raise ParseError(f"{what}: not a real number: {s[:40]!r}")
    return float(s)


def read_temperature(path: str | os.PathLike = DEFAULT_THERMAL_PATH) -> float:
    """Degrees Celsius from a millidegree thermal-zone file."""
    s = _read_text(path).strip()
    if not _INT.match(s):
        raise ParseError(f"{path}: expected integer millidegrees, got {s[:40]!r}")
    value = int(s) / 1000.0
    if value < 0:
        raise ParseError(f"{path}: negative temperature {value}")
    return value


def read_memory_kb(pid: int | None = None, status_path: str | os.PathLike | None = None) -> int:
    """Resident set size in kB from the process status file."""
    path = status_path or f"/proc/{pid if pid is not None else os.getpid()}/status"
    for line in _read_text(path).splitlines():
        if line.startswith("VmRSS:"):
            parts = line.split()
            if len(parts) < 2 or not parts[1].isdigit():
                raise ParseError(f"{path}: malformed VmRSS line {line!r}")
            return int(parts[1])
    raise ParseError(f"{path}: no VmRSS line")


class PowerLog:
    """Externally logged meter readings, queried by nearest timestamp."""

    def __init__(self, rows: Iterable[tuple[float, float]]) -> None:
        pairs = sorted(rows)
        if not pairs:
            raise ParseError("power log has no readings")
        self.times = [t for t, _ in pairs]
        self.watts = [w for _, w in pairs]

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PowerLog":
        rows = []
        try:
            with open(path, newline="", encoding="ascii") as fh:
                for lineno, rec in enumerate(csv.reader(fh), 1):
                    if not rec or not "".join(rec).strip():
                        continue
                    if len(rec) != 2:
                        raise ParseError(f"{path}:{lineno}: expected 'epoch_seconds,watts'")
                    try:
                        rows.append((_parse_real(rec[0], f"{path}:{lineno}"), _parse_real(rec[1], f"{path}:{lineno}")))
                    except ParseError:
                        if lineno == 1:  # header
                            continue
                        raise
        except OSError as exc:
            raise ProbeIOError(f"cannot read {path}: {exc}") from exc
        return cls(rows)

    def at(self, t: float) -> float:
        i = bisect.bisect_left(self.times, t)
        if i == 0:
            return self.watts[0]
        if i == len(self.times):
            return self.watts[-1]
        before, after = self.times[i - 1], self.times[i]
        # ties go to the earlier reading
        return self.watts[i - 1] if t - before <= after - t else self.watts[i]


_power_logs: dict[str, PowerLog] = {}
_power_lock = threading.Lock()


def read_power_w(config: ProbeConfig, at: float | None = None) -> float | None:
    """Watts, or None when the probe is the null probe (no meter attached)."""
    if config.kind is ProbeKind.NULL:
        return None
    if config.kind is ProbeKind.POWER_FILE:
        return _parse_real(_read_text(config.path), str(config.path))
    if config.kind is ProbeKind.POWER_CSV_IMPORT:
        with _power_lock:
            plog = _power_logs.get(config.path)
            if plog is None:
                plog = _power_logs[config.path] = PowerLog.load(config.path)
        return plog.at(time.time() if at is None else at)
    raise ValueError(f"{config.kind.value} is not a power probe")


def read_probe(config: ProbeConfig, wall_time: float | None = None) -> float | None:
    if config.kind is ProbeKind.THERMAL_FILE:
        return read_temperature(config.path)
    if config.kind is ProbeKind.MEMINFO_PROCESS:
        if config.path:
            return float(read_memory_kb(status_path=config.path))
        return float(read_memory_kb(config.pid))
    return read_power_w(config, wall_time)


@dataclass(frozen=True)
class ProbeFailure:
    timestamp: float
    source: str
    error: Exception


def sample_loop(probes: list[ProbeConfig], sink: Callable[[MetricSample], None], stop: threading.Event,
                role: Role = Role.CLIENT, on_error: Callable[[ProbeFailure], None] | None = None,
                clock: Callable[[], float] = time.time) -> dict[str, int]:
    """Sample every probe on its own period until ``stop`` is set.

    Ticks are scheduled on absolute deadlines so jitter does not accumulate.
    Timestamps come from ``clock`` (wall time, so client and server streams
    can be merged). A failing probe is reported to ``on_error`` and retried
    next tick. Returns samples emitted per probe source.
    """
    active = [p for p in probes if p.kind is not ProbeKind.NULL]
    counts = {p.source: 0 for p in probes}
    if not active or stop.is_set():
        return counts
    start = time.monotonic()
    next_due = [start] * len(active)
    ticks = [0] * len(active)
    while not stop.is_set():
        now = time.monotonic()
        for i, p in enumerate(active):
            if now < next_due[i]:
                continue
            ts = clock()
            try:
                value = read_probe(p, ts)
            except Exception as exc:
                failure = ProbeFailure(ts, p.source, exc)
                if on_error is not None:
                    on_error(failure)
                else:
                    log.warning("probe %s failed: %s", p.source, exc)
            else:
                if value is not None:
                    sink(MetricSample(ts, p.metric, value, p.source, role))
                    counts[p.source] += 1
            ticks[i] += 1
            next_due[i] = start + ticks[i] * p.period
            if next_due[i] <= now:  # fell behind; skip missed ticks instead of bursting
                ticks[i] = int((now - start) / p.period) + 1
                next_due[i] = start + ticks[i] * p.period
        stop.wait(max(0.0, min(next_due) - time.monotonic()))
    return counts


class Sampler:
    """Runs ``sample_loop`` on a background thread, collecting samples in memory."""

    def __init__(self, probes: list[ProbeConfig], role: Role = Role.CLIENT,
                 maxlen: int | None = None, on_sample: Callable[[MetricSample], None] | None = None) -> None:
        self.probes = probes
        self.role = role
        self.samples: deque[MetricSample] = deque(maxlen=maxlen)
        self._on_sample = on_sample
        self.failures: list[ProbeFailure] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _sink(self, s: MetricSample) -> None:
        with self._lock:
            self.samples.append(s)
        if self._on_sample is not None:
            self._on_sample(s)

    def _fail(self, f: ProbeFailure) -> None:
        log.warning("probe %s failed: %s", f.source, f.error)
        with self._lock:
            self.failures.append(f)

    def start(self) -> "Sampler":
        self._stop.clear()
        self._thread = threading.Thread(
            target=sample_loop, args=(self.probes, self._sink, self._stop, self.role, self._fail),
            name="probe-sampler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def drain(self, since: float | None = None) -> list[MetricSample]:
        with self._lock:
            if since is None:
                return list(self.samples)
            return [s for s in self.samples if s.timestamp >= since]

    def take(self) -> list[MetricSample]:
        with self._lock:
            out = list(self.samples)
            self.samples.clear()
            return out


def parse_probe_spec(spec: str, period: float = DEFAULT_PERIOD) -> list[ProbeConfig]:
    """Parse ``temp=PATH,mem=self|PID|PATH,power=PATH,powercsv=PATH,null``."""
    out = []
    for item in filter(None, (s.strip() for s in spec.split(","))):
        key, _, val = item.partition("=")
        key = key.strip().lower()
        if key in ("temp", "thermal"):
            out.append(ProbeConfig(ProbeKind.THERMAL_FILE, val or DEFAULT_THERMAL_PATH, period))
        elif key in ("mem", "memory"):
            if not val or val == "self":
                out.append(ProbeConfig(ProbeKind.MEMINFO_PROCESS, None, period))
            elif val.isdigit():
                out.append(ProbeConfig(ProbeKind.MEMINFO_PROCESS, None, period, pid=int(val)))
            else:
                out.append(ProbeConfig(ProbeKind.MEMINFO_PROCESS, val, period))
        elif key == "power":
            out.append(ProbeConfig(ProbeKind.POWER_FILE, val, period))
        elif key in ("powercsv", "power_csv"):
            out.append(ProbeConfig(ProbeKind.POWER_CSV_IMPORT, val, period))
        elif key in ("null", "none"):
            out.append(ProbeConfig(ProbeKind.NULL, None, period))
        else:
            raise ValueError(f"unknown probe {key!r}")
    return out
