"""The server process: KEM listener plus optional server-role probe sampler."""

from __future__ import annotations

import csv
import logging
import threading
from pathlib import Path

from ..kem import KemRegistry, default_registry
from ..probes import MetricSample, ProbeConfig, Role, Sampler
from ..protocol import DEFAULT_TIMEOUT, KemServer, ServerEvent

log = logging.getLogger(__name__)

SERVER_CSV_FIELDS = ("timestamp", "role", "metric", "value", "source")
SAMPLE_BUFFER = 100_000  # about a day of 1 Hz samples for four probes


class ServerSampleWriter:
    """Appends server samples to a CSV file as they arrive."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._lock = threading.Lock()
        if new:
            self._w.writerow(SERVER_CSV_FIELDS)
            self._fh.flush()

    def __call__(self, s: MetricSample) -> None:
        with self._lock:
            self._w.writerow((repr(s.timestamp), s.role.value, s.metric.value, repr(s.value), s.source))
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class Agent:
    """Owns the KEM server and the server-side sampler for one process."""

    def __init__(self, host: str = "0.0.0.0", port: int = 4433, *, registry: KemRegistry | None = None,
                 probes: list[ProbeConfig] | None = None, samples_csv: str | Path | None = None,
                 allowed: list[str] | None = None, timeout: float = DEFAULT_TIMEOUT,
                 mock_seed_fn=None, on_event=None) -> None:
        self.registry = registry or default_registry()
        self.writer = ServerSampleWriter(samples_csv) if samples_csv else None
        self.sampler = (Sampler(list(probes), Role.SERVER, maxlen=SAMPLE_BUFFER, on_sample=self.writer)
                        if probes else None)
        # binding happens here, so a busy port fails before anything starts
        self.server = KemServer(host, port, registry=self.registry, timeout=timeout, allowed=allowed,
                                mock_seed_fn=mock_seed_fn, on_event=on_event)

    @property
    def address(self) -> tuple[str, int]:
        return self.server.address

    def samples(self, since: float | None = None, until: float | None = None) -> list[MetricSample]:
        if self.sampler is None:
            return []
        out = self.sampler.drain(since)
        if until is not None:
            out = [s for s in out if s.timestamp <= until]
        return out

    def start(self) -> "Agent":
        if self.sampler is not None:
            self.sampler.start()
        self.server.start()
        return self

    def stop(self) -> None:
        self.server.shutdown()
        if self.sampler is not None:
            self.sampler.stop()
        if self.writer is not None:
            self.writer.close()

    def __enter__(self) -> "Agent":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


__all__ = ["Agent", "ServerEvent", "ServerSampleWriter", "SERVER_CSV_FIELDS"]
