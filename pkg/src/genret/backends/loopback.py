"""In-process HTTP test double serving any ScorerBackend over the wire.

Not a production server: it exists so the remote client can be exercised
end-to-end against a local backend without leaving the process.  Runs a
threaded stdlib HTTP server on an ephemeral localhost port.

    with LoopbackServer(backend) as url:
        remote = RemoteBackend(url, capabilities=backend.capabilities)
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import GenretError


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # keep test output clean
        pass

    def _reply(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
            request = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "unparseable request body"})
            return
        backend = self.server.backend  # type: ignore[attr-defined]
        request_id = request.get("request_id")
        region = tuple(request["region"]) if request.get("region") is not None else None
        try:
            if self.path == "/v1/logprobs":
                results = []
                for q in request.get("queries", []):
                    dist = backend.next_token_distribution(
                        request.get("image_id"), region, tuple(q.get("prefix", ()))
                    )
                    res = {"probs": dist.probs}
                    if dist.terminal_p is not None:
                        res["terminal_p"] = dist.terminal_p
                    results.append(res)
                self._reply(200, {"request_id": request_id, "results": results})
            elif self.path == "/v1/embed":
                if request.get("text") is not None:
                    vec = backend.embed_text(tuple(request["text"]))
                else:
                    vec = backend.embed_image(request.get("image_id"), region)
                self._reply(200, {"request_id": request_id, "vector": vec.tolist()})
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})
        except GenretError as exc:
            self._reply(400, {"error": str(exc)})


class LoopbackServer:
    def __init__(self, backend, handler=_Handler):
        self._backend = backend
        self._handler = handler
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self.url: str | None = None

    def start(self) -> str:
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler)
        self._server.backend = self._backend  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        host, port = self._server.server_address[:2]
        self.url = f"http://{host}:{port}"
        return self.url

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> str:
        return self.start()

    def __exit__(self, *exc_info):
        self.stop()
