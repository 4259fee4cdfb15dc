"""Shared test helpers: a tiny controllable local HTTP server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

# handler(method, path, body) -> (status, payload); dict/list payloads are JSON-encoded
Handler = Callable[[str, str, bytes], tuple[int, object]]


class LocalHttpServer:
    """Serves a handler function on an ephemeral localhost port."""

    def __init__(self, handler: Handler):
        self.handler = handler
        self.requests: list[tuple[str, str, bytes]] = []
        outer = self

        class _RequestHandler(BaseHTTPRequestHandler):
            def _serve(self, method: str) -> None:
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                outer.requests.append((method, self.path, body))
                status, payload = outer.handler(method, self.path, body)
                if isinstance(payload, (dict, list)):
                    data = json.dumps(payload).encode("utf-8")
                    ctype = "application/json"
                elif isinstance(payload, str):
                    data = payload.encode("utf-8")
                    ctype = "text/plain"
                else:
                    data = payload
                    ctype = "application/octet-stream"
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self) -> None:
                self._serve("GET")

            def do_POST(self) -> None:
                self._serve("POST")

            def log_message(self, *args) -> None:  # keep pytest output clean
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _RequestHandler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "LocalHttpServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
