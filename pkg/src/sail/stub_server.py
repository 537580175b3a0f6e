"""Minimal HTTP stub implementing the remote-policy protocol.

POST /propose with `{"prompt": ..., "images": [...]}` returns
`{"text": <next scripted response>}`. Used by the adapter conformance tests
and runnable standalone:

    python -m sail.stub_server --port 8765 --respond-file reply.txt
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    """Serves a fixed sequence of responses (the last one repeats)."""

    def __init__(self, responses: list[str], port: int = 0):
        if not responses:
            raise ValueError("need at least one response")
        self.responses = list(responses)
        self.request_count = 0
        self.last_body: dict | None = None
        self.last_headers: dict[str, str] = {}
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                with outer._lock:
                    outer.last_body = json.loads(raw) if raw else None
                    outer.last_headers = dict(self.headers)
                    index = min(outer.request_count, len(outer.responses) - 1)
                    outer.request_count += 1
                if self.path != "/propose":
                    self.send_error(404)
                    return
                payload = json.dumps({"text": outer.responses[index]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, fmt: str, *args) -> None:
                pass  # keep test output quiet

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main() -> None:
    parser = argparse.ArgumentParser(description="Serve one canned /propose response.")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--respond-file", required=True)
    args = parser.parse_args()
    with open(args.respond_file) as fh:
        text = fh.read()
    server = StubServer([text], port=args.port).start()
    print(f"stub server on {server.endpoint}, Ctrl-C to stop")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
