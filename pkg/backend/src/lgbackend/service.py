"""HTTP service wrapping a model directory.

POST /next_dist takes newline-delimited JSON request objects
(``{"linearized_context": [...], "tail": [...], "k": 50}``) and answers one
response line per request, in order.  GET /health reports the loaded model.
Requests are stateless; handling is threaded and the weights are read-only
after load.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .model import ModelBundle, ModelError, RequestError

DEFAULT_K = 50


class BackendHandler(BaseHTTPRequestHandler):
    server: "BackendServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default; tests run many requests
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _send(self, code: int, payload: bytes, content_type="application/x-ndjson"):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_json(self, code: int, obj: dict):
        self._send(code, (json.dumps(obj) + "\n").encode(), "application/json")

    def do_GET(self):
        if self.path != "/health":
            self._send_json(404, {"error": f"unknown path {self.path}"})
            return
        cfg = self.server.bundle.config
        self._send_json(
            200,
            {
                "status": "ok",
                "llg": cfg["llg"],
                "vocab_size": cfg["vocab_size"],
                "vocab_hash": cfg["vocab_hash"],
                "n": cfg["n"],
                "g": cfg["g"],
            },
        )

    def do_POST(self):
        if self.path != "/next_dist":
            self._send_json(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
        except (TypeError, ValueError):
            self._send_json(400, {"error": "missing or bad Content-Length"})
            return
        lines = [ln for ln in body.split(b"\n") if ln.strip()]
        if not lines:
            self._send_json(400, {"error": "empty request body"})
            return
        out = []
        for idx, line in enumerate(lines):
            try:
                req = json.loads(line)
                context = [int(x) for x in req.get("linearized_context", [])]
                tail = [int(x) for x in req["tail"]]
                k = int(req.get("k", self.server.default_k))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                self._send_json(400, {"error": f"line {idx}: malformed request: {exc}"})
                return
            try:
                entries, log_norm = self.server.bundle.next_entries(context, tail, k)
            except RequestError as exc:
                self._send_json(400, {"error": f"line {idx}: {exc}"})
                return
            out.append(
                json.dumps(
                    {
                        "entries": [[tok, lp] for tok, lp in entries],
                        "debug": {"log_norm": log_norm},
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
        self._send(200, ("\n".join(out) + "\n").encode())


class BackendServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, bundle: ModelBundle, default_k: int = DEFAULT_K, verbose=False):
        super().__init__(address, BackendHandler)
        self.bundle = bundle
        self.default_k = default_k
        self.verbose = verbose

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    @property
    def url(self) -> str:
        host, port = self.server_address
        return f"http://{host}:{port}"


def serve_backend(
    model_dir: str | Path,
    port: int = 7610,
    host: str = "127.0.0.1",
    k: int = DEFAULT_K,
    device: str = "cpu",
    verbose: bool = False,
) -> BackendServer:
    """Load a model directory and return a ready (unstarted) server.

    Raises ModelError when the model cannot be loaded; the CLI turns that
    into a non-zero exit.
    """
    bundle = ModelBundle.load(model_dir, device=device)
    return BackendServer((host, port), bundle, default_k=k, verbose=verbose)
