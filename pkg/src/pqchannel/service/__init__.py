"""Server-side control plane: the probe agent and its HTTP API.

``agent`` has no web dependencies. ``app`` (FastAPI) and ``client`` (httpx)
are imported on demand.
"""

from .agent import Agent, ServerSampleWriter

__all__ = ["Agent", "ServerSampleWriter"]
