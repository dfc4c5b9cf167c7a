import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class _EmbedHandler(BaseHTTPRequestHandler):
    """Answers with ``[len(text), 1, -1]`` for every text; ``/fail`` always returns 500."""

    def do_POST(self):
        if self.path == "/fail":
            self.send_response(500)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        out = json.dumps({"vectors": [[float(len(t)), 1.0, -1.0] for t in body["texts"]]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_endpoint():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/embed"
    server.shutdown()
    server.server_close()


@pytest.fixture
def record_acceptance(request):
    """Store one summary line per acceptance criterion, printed after the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, ok, detail, seconds):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f} s)  {detail}"
    return record


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
