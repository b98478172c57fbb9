"""Chat-completions client for real vision-language models."""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

import httpx

from ..errors import BackendUnavailable, ConfigurationError

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "MIRRORBENCH_API_KEY"
RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RemoteEndpointConfig:
    base_url: str
    model_id: str
    temperature: float = 0.2
    max_retries: int = 3
    timeout: float = 60.0
    max_in_flight: int = 4
    api_key_env: str = DEFAULT_API_KEY_ENV
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    max_tokens: Optional[int] = None

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        if self.timeout <= 0:
            raise ConfigurationError("timeout must be positive")

    def snapshot(self) -> dict:
        # never includes the credential itself
        return {"kind": "remote", **asdict(self)}


def build_payload(cfg: RemoteEndpointConfig, system_text: str, user_text: str, png: bytes) -> dict:
    image_url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
    payload = {
        "model": cfg.model_id,
        "temperature": cfg.temperature,
        "messages": [
            {"role": "system", "content": system_text},
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": user_text},
                    {"type": "image_url", "image_url": {"url": image_url}},
                ],
            },
        ],
    }
    if cfg.max_tokens is not None:
        payload["max_tokens"] = cfg.max_tokens
    return payload


def extract_text(body) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):  # some servers return content parts
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise TypeError("message content is not text")
    return content


class RemoteClient:
    """Thread-safe client shared by all episodes of a run.

    The semaphore bounds requests in flight across every thread using the client.
    """

    def __init__(self, cfg: RemoteEndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._http = httpx.Client(
            base_url=cfg.base_url,
            timeout=cfg.timeout,
            headers={"Authorization": f"Bearer {key}"},
            limits=httpx.Limits(max_connections=cfg.max_in_flight,
                                max_keepalive_connections=cfg.max_in_flight),
            transport=transport,
        )

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _delay(self, attempt: int) -> float:
        return min(self.cfg.backoff_max, self.cfg.backoff_base * 2 ** attempt)

    def complete(self, system_text: str, user_text: str, png: bytes) -> str:
        payload = build_payload(self.cfg, system_text, user_text, png)
        attempts = 0
        last = ""
        for attempt in range(self.cfg.max_retries + 1):
            attempts += 1
            try:
                with self._slots:
                    resp = self._http.post("/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        return extract_text(resp.json())
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        last = f"malformed response body ({exc})"
                elif resp.status_code in RETRYABLE_STATUS:
                    last = f"HTTP {resp.status_code}"
                else:
                    raise BackendUnavailable(f"HTTP {resp.status_code} from {self.cfg.base_url}", attempts)
            if attempt < self.cfg.max_retries:
                delay = self._delay(attempt)
                log.warning("request failed (%s); retrying in %.2fs", last, delay)
                time.sleep(delay)
        raise BackendUnavailable(f"{self.cfg.base_url} unavailable after {attempts} attempts: {last}", attempts)


class RemoteBackend:
    def __init__(self, client: RemoteClient):
        self.client = client

    @property
    def id(self) -> str:
        return f"remote:{self.client.cfg.model_id}"

    @property
    def config(self) -> dict:
        return self.client.cfg.snapshot()

    def act(self, ctx) -> str:
        return self.client.complete(ctx.system_text, ctx.user_text, ctx.frame.to_png())
