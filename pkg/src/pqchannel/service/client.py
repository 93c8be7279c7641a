"""Thin HTTP client for the agent API, used by ``bench --agent`` and ``status``."""

from __future__ import annotations

import httpx

from ..probes import Metric, MetricSample, Role


class AgentClient:
    def __init__(self, base_url: str, timeout: float = 5.0, transport: httpx.BaseTransport | None = None) -> None:
        if "://" not in base_url:
            base_url = "http://" + base_url
        self._http = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def _get(self, path: str, **params) -> dict | list:
        r = self._http.get(path, params={k: v for k, v in params.items() if v is not None})
        r.raise_for_status()
        return r.json()

    def health(self) -> dict:
        return self._get("/health")

    def sessions(self) -> dict:
        return self._get("/sessions")

    def session_count(self) -> int:
        return int(self.sessions()["started"])

    def samples(self, since: float | None = None, until: float | None = None) -> list[MetricSample]:
        data = self._get("/samples", since=since, until=until)
        return [MetricSample(s["timestamp"], Metric(s["metric"]), s["value"], s["source"], Role(s["role"]))
                for s in data["samples"]]

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "AgentClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
