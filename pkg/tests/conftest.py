import os

import pytest
from hypothesis import settings

from pqchannel.kem import KemRegistry, load_provider, set_default_registry
from pqchannel.protocol import KemServer

settings.register_profile("ci", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def mock_registry():
    return KemRegistry(None)


@pytest.fixture(scope="session")
def real_registry():
    return KemRegistry(load_provider("auto"))


@pytest.fixture(scope="session")
def provider_registry(real_registry):
    if real_registry.provider is None:
        pytest.skip("no PQC provider installed")
    return real_registry


@pytest.fixture(autouse=True)
def _reset_default_registry():
    yield
    set_default_registry(None)


@pytest.fixture
def kem_server(real_registry):
    servers = []

    def start(**kw):
        kw.setdefault("registry", real_registry)
        kw.setdefault("timeout", 5.0)
        srv = KemServer("127.0.0.1", 0, **kw).start()
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.shutdown()


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self, results: dict, number: int, title: str) -> None:
        self.results, self.number, self.title = results, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.detail = str(exc)
        else:
            status = "FAIL"
            self.detail = f"{self.detail}; {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        self.results[self.number] = (status, self.title, self.detail.strip("; "))
        return False


@pytest.fixture
def criterion(request):
    results = request.config.stash.setdefault(_ACCEPTANCE, {})
    return lambda number, title: _Criterion(results, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
