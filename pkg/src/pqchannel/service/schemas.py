"""Request/response models for the control-plane API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"
    version: str
    provider: Optional[str] = None
    kem_listen: Optional[str] = None


class ParamSet(BaseModel):
    id: str
    wire_id: int
    nist_level: str
    pk_len: int
    ct_len: int
    ss_len: int
    lengths_source: str
    enabled: bool


class SessionCounters(BaseModel):
    started: int
    established: int
    failed: int
    payloads: int


class Sample(BaseModel):
    timestamp: float
    metric: Literal["ExecTime", "PowerW", "MemoryKB", "TempC"]
    value: float = Field(ge=0)
    source: str = ""
    role: Literal["client", "server"] = "server"


class Samples(BaseModel):
    samples: list[Sample]


class RawSample(BaseModel):
    timestamp: float
    role: Literal["client", "server"]
    metric: Literal["ExecTime", "PowerW", "MemoryKB", "TempC"]
    value: float = Field(ge=0)
    paramset: str
    scenario: str


class ReportRequest(BaseModel):
    samples: list[RawSample] = Field(min_length=1)
    format: Literal["table", "csv", "json"] = "table"


class ReportResponse(BaseModel):
    format: str
    text: str


class Candidate(BaseModel):
    paramset: str
    artifact_kind: str


class Match(BaseModel):
    packet_index: int
    tcp_payload_len: int
    candidates: list[Candidate]


class Flow(BaseModel):
    flow: str
    paramsets: list[str]
    probable_pqc_handshake: bool
    handshake_paramsets: list[str]


class ScanResponse(BaseModel):
    packets: int
    skipped: int
    truncated: bool
    matches: list[Match]
    paramset_counts: dict[str, int]
    flows: list[Flow]


class ErrorResponse(BaseModel):
    error: str
    detail: str
