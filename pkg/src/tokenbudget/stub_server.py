"""In-process stub for the line-delimited streaming completion protocol.

The wire format matches what ``HttpStreamBackend`` speaks: a POST with
{context, max_tokens, stop, temperature, top_p, seed}, answered by one JSON
object per line — token events ``{"token": ...}`` followed by a terminal
``{"done": true, "stop_reason": ...}`` line. Behaviors can be scripted per
request to exercise caps, stop-reason mapping, and mid-stream disconnects.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass
class StubBehavior:
    """What the stub does for one request.

    ``tokens`` is a filler count or an explicit token list. With
    ``honor_cap`` the stub respects the request's max_tokens like a real
    server; without it, it streams everything to let clients prove they
    truncate. ``drop_after`` closes the connection after that many token
    lines with no terminal event, simulating a mid-stream failure.
    """

    tokens: int | list[str] = 5
    stop_reason: str = "end_of_sequence"
    honor_cap: bool = True
    drop_after: int | None = None
    status: int = 200
    malformed_line: bool = False

    def token_list(self) -> list[str]:
        if isinstance(self.tokens, int):
            return [f"s{i + 1}" for i in range(self.tokens)]
        return list(self.tokens)


class _StubHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args) -> None:  # keep test output clean
        pass

    def do_POST(self) -> None:
        server: "StreamingStubServer" = self.server.stub  # type: ignore[attr-defined]
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length) or b"{}")
        behavior = server._next_behavior(payload)

        if behavior.status != 200:
            body = json.dumps({"error": f"stub status {behavior.status}"}).encode()
            self.send_response(behavior.status)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Connection", "close")
            self.end_headers()
            self.wfile.write(body)
            return

        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Connection", "close")
        self.end_headers()

        tokens = behavior.token_list()
        cap = int(payload.get("max_tokens", len(tokens)))
        stop_reason = behavior.stop_reason
        if behavior.honor_cap and len(tokens) >= cap:
            tokens = tokens[:cap]
            stop_reason = "cap_reached"

        try:
            for i, token in enumerate(tokens):
                if behavior.drop_after is not None and i == behavior.drop_after:
                    # Abrupt close without a terminal event.
                    self.wfile.flush()
                    self.connection.close()
                    return
                if behavior.malformed_line and i == len(tokens) // 2:
                    self.wfile.write(b"this is not json\n")
                self.wfile.write(json.dumps({"token": token}).encode() + b"\n")
                self.wfile.flush()
            if behavior.drop_after is not None and behavior.drop_after >= len(tokens):
                self.wfile.flush()
                self.connection.close()
                return
            self.wfile.write(
                json.dumps({"done": True, "stop_reason": stop_reason}).encode() + b"\n"
            )
            self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass  # client stopped reading (e.g. cap truncation); fine


class StreamingStubServer:
    """Context-managed stub server bound to an ephemeral local port."""

    def __init__(
        self,
        default: StubBehavior | None = None,
        script: list[StubBehavior] | None = None,
    ) -> None:
        self.default = default or StubBehavior()
        self.script = list(script or [])
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._httpd.stub = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def _next_behavior(self, payload: dict) -> StubBehavior:
        with self._lock:
            self.requests.append(payload)
            if self.script:
                return self.script.pop(0)
            return self.default

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def attempt_count(self) -> int:
        with self._lock:
            return len(self.requests)

    def start(self) -> "StreamingStubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "StreamingStubServer":
        return self.start()

    def __exit__(self, *exc_info: object) -> None:
        self.stop()
