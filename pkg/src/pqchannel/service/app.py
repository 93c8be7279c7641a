"""FastAPI control plane for a running server.

The KEM channel itself stays on raw TCP; this API only exposes counters,
server-side probe samples and the offline tools (report, pcapscan) so a
benchmark client on another host can collect everything over HTTP.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__, bench, pcapscan
from ..errors import BenchError, PcapError
from ..kem import KemRegistry, default_registry
from ..probes import Metric, Role
from . import schemas
from .agent import Agent


def create_app(agent: Agent | None = None, registry: KemRegistry | None = None) -> FastAPI:
    reg = registry or (agent.registry if agent is not None else None)
    app = FastAPI(title="pqchannel agent", version=__version__)

    def _registry() -> KemRegistry:
        return reg or default_registry()

    def _agent() -> Agent:
        if agent is None:
            raise HTTPException(status_code=404, detail="no KEM server attached")
        return agent

    @app.get("/health", response_model=schemas.Health)
    def health():
        r = _registry()
        listen = None
        if agent is not None:
            host, port = agent.address
            listen = f"{host}:{port}"
        return schemas.Health(version=__version__, provider=getattr(r.provider, "name", None), kem_listen=listen)

    @app.get("/registry", response_model=list[schemas.ParamSet])
    def registry_view():
        return [schemas.ParamSet(id=ps.id, wire_id=ps.wire_id, nist_level=ps.nist_level.value,
                                 pk_len=ps.pk_len, ct_len=ps.ct_len, ss_len=ps.ss_len,
                                 lengths_source=ps.lengths_source, enabled=ps.enabled)
                for ps in _registry()]

    @app.get("/sessions", response_model=schemas.SessionCounters)
    def sessions():
        return schemas.SessionCounters(**_agent().server.stats.snapshot())

    @app.get("/samples", response_model=schemas.Samples)
    def samples(since: Optional[float] = None, until: Optional[float] = None):
        got = _agent().samples(since, until)
        return schemas.Samples(samples=[
            schemas.Sample(timestamp=s.timestamp, metric=s.metric.value, value=s.value,
                           source=s.source, role=s.role.value) for s in got])

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        raw = [bench.RawSample(s.timestamp, Role(s.role), Metric(s.metric), s.value,
                               _registry().lookup(s.paramset).id, s.scenario) for s in req.samples]
        try:
            text = bench.render_report(bench.reports_from_samples(raw), req.format)
        except BenchError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.ReportResponse(format=req.format, text=text)

    @app.post("/pcapscan", response_model=schemas.ScanResponse)
    async def scan(request: Request):
        body = await request.body()
        try:
            cap = pcapscan.parse_pcap(body)
        except PcapError as exc:
            raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}") from exc
        matches = pcapscan.classify(cap.records, _registry())
        summary = pcapscan.scan_summary(matches, cap.records)
        return schemas.ScanResponse(packets=len(cap.records), skipped=cap.skipped,
                                    truncated=cap.truncated, **summary)

    @app.exception_handler(KeyError)
    async def _unknown(request: Request, exc: KeyError):
        return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})

    return app
