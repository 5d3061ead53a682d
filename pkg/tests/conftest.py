"""Shared fixtures: anyio backend, loopback web server, fixture world."""

import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_world import PAGES, build_world  # noqa: E402


@pytest.fixture(scope="session")
def anyio_backend():
    return "asyncio"


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(criterion, title): groups tests under an acceptance criterion"
    )


_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        criterion, title = marker.args
        entry = _ACCEPTANCE.setdefault(criterion, {"title": title, "failed": [], "count": 0})
        entry["count"] += 1
        if report.failed:
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[criterion]
        status = "FAIL" if entry["failed"] else "PASS"
        line = f"criterion {criterion}: {status} - {entry['title']} ({entry['count']} checks)"
        if entry["failed"]:
            line += f" [failed: {', '.join(entry['failed'])}]"
        terminalreporter.write_line(line)


class FixtureWebServer:
    """Serves a per-instance {path: (status, body)} map on a loopback port."""

    def __init__(self, pages=None):
        self.pages = dict(pages or {})
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                entry = server.pages.get(self.path)
                if entry is None:
                    self.send_response(404)
                    self.send_header("Content-Type", "text/html")
                    self.end_headers()
                    self.wfile.write(b"<html><body>not found</body></html>")
                    return
                status, body = entry
                if isinstance(body, str):
                    body = body.encode("utf-8")
                if status in (301, 302):
                    self.send_response(status)
                    self.send_header("Location", body.decode("utf-8"))
                    self.end_headers()
                    return
                self.send_response(status)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def url(self, path: str, host: str = "localhost") -> str:
        return f"http://{host}:{self.port}{path}"

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def web_server():
    server = FixtureWebServer()
    yield server
    server.close()


@pytest.fixture(scope="session")
def world_server():
    """Session-wide server preloaded with the standard fixture pages."""
    server = FixtureWebServer({path: (200, html) for path, html in PAGES.items()})
    yield server
    server.close()


@pytest.fixture
def world(world_server):
    return build_world(world_server.port)
