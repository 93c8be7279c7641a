"""Config file loading (TOML or JSON).

The file is taken from ``--config`` or the ``PQCHANNEL_CONFIG`` environment
variable. Command-line flags override anything set here. Example::

    [kem]
    provider = "auto"           # auto | liboqs | pqcrypto | none

    [server]
    listen = "0.0.0.0:4433"
    http = "127.0.0.1:8080"     # optional control-plane API

    [plan]
    paramsets = ["Kyber-512", "Kyber-768"]
    scenarios = ["networkSim1", "networkSim2"]
    session_secs = 300
    rest_secs = 300
    repetitions = 1

    [probes]
    period = 1.0
    spec = "temp=/sys/class/thermal/thermal_zone0/temp,mem=self"

    [output]
    dir = "bench-out"
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_VAR = "PQCHANNEL_CONFIG"


def load_config(path: str | os.PathLike | None = None) -> dict[str, Any]:
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return {}
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"{p}: top level must be a table/object")
    return data


def get(cfg: dict[str, Any], dotted: str, default: Any = None) -> Any:
    node: Any = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def parse_address(text: str, default_port: int) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host.strip("[]") or "0.0.0.0", int(port)
