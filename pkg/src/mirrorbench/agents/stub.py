"""Local chat-completions server used by the tests and for dry runs."""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

from ..protocol import AgentStep, dump_agent_step, CUBE_SELECTION, EXPLORATION, EXPLORATION_SYSTEM_PROMPT


def default_responder(payload: dict) -> str:
    """Always answer with a valid "turn left" step for the prompt family."""
    system = payload["messages"][0]["content"]
    family = EXPLORATION if system == EXPLORATION_SYSTEM_PROMPT else CUBE_SELECTION
    return dump_agent_step(AgentStep(action="a", summary="turning"), family)


class StubChatServer:
    """Threaded HTTP server speaking the chat-completions wire shape.

    ``fail_first`` requests answer with ``fail_status``; ``always_fail`` never
    succeeds.  ``max_concurrent`` records the peak number of requests being
    handled at once.
    """

    def __init__(self, responder: Optional[Callable[[dict], str]] = None, *, fail_first: int = 0,
                 always_fail: bool = False, fail_status: int = 500, delay: float = 0.0,
                 api_key: Optional[str] = None, host: str = "127.0.0.1", port: int = 0):
        self.responder = responder or default_responder
        self.fail_first = fail_first
        self.always_fail = always_fail
        self.fail_status = fail_status
        self.delay = delay
        self.api_key = api_key
        self.requests = 0
        self.failures = 0
        self.unauthorized = 0
        self.in_flight = 0
        self.max_concurrent = 0
        self.payloads: list[dict] = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer((host, port), self._handler())
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "StubChatServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _admit(self, payload: dict) -> bool:
        with self._lock:
            self.requests += 1
            self.in_flight += 1
            self.max_concurrent = max(self.max_concurrent, self.in_flight)
            self.payloads.append(payload)
            fail = self.always_fail or self.requests <= self.fail_first
            if fail:
                self.failures += 1
            return not fail

    def _release(self):
        with self._lock:
            self.in_flight -= 1

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def _send(self, status: int, body: dict):
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                if not self.path.rstrip("/").endswith("/chat/completions"):
                    self._send(404, {"error": {"message": "not found"}})
                    return
                if stub.api_key is not None and self.headers.get("Authorization") != f"Bearer {stub.api_key}":
                    with stub._lock:
                        stub.unauthorized += 1
                    self._send(401, {"error": {"message": "bad credentials"}})
                    return
                length = int(self.headers.get("Content-Length", 0))
                try:
                    payload = json.loads(self.rfile.read(length))
                except json.JSONDecodeError:
                    self._send(400, {"error": {"message": "body is not JSON"}})
                    return
                ok = stub._admit(payload)
                # leave the in-flight count before any byte goes out, so the
                # client can never start a new request inside our window
                try:
                    if stub.delay:
                        time.sleep(stub.delay)
                    if ok:
                        status, body = 200, {
                            "id": f"stub-{stub.requests}",
                            "object": "chat.completion",
                            "model": payload.get("model", ""),
                            "choices": [{
                                "index": 0,
                                "message": {"role": "assistant", "content": stub.responder(payload)},
                                "finish_reason": "stop",
                            }],
                        }
                    else:
                        status, body = stub.fail_status, {"error": {"message": "injected failure"}}
                finally:
                    stub._release()
                self._send(status, body)

        return Handler
