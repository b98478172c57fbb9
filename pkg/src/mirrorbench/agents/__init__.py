"""Agent backends.

Every backend exposes ``id``, ``config`` and ``act(ctx) -> str``, where the
returned string is the raw reply that the protocol module then validates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import ConfigurationError
from ..protocol import StepInput
from ..render import Frame, VisibilityReport
from ..world import ScenarioConfig, WorldState
from .remote import RemoteBackend, RemoteClient, RemoteEndpointConfig
from .scripted import SCRIPTED, plan_turn_toward

BACKEND_KINDS = tuple(SCRIPTED) + ("remote",)


@dataclass(frozen=True)
class StepContext:
    """What a backend sees at one step.

    Remote backends only read the prompts and the frame; ``scenario``, ``state``
    and ``visibility`` form the privileged channel of the scripted policies.
    """

    t: int
    system_text: str
    user_text: str
    frame: Frame
    step_input: StepInput
    scenario: ScenarioConfig
    state: WorldState
    visibility: VisibilityReport


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}; expected one of {', '.join(BACKEND_KINDS)}")

    @property
    def is_remote(self) -> bool:
        return self.kind == "remote"

    def endpoint(self) -> RemoteEndpointConfig:
        if not self.is_remote:
            raise ConfigurationError(f"backend {self.kind!r} has no endpoint")
        try:
            return RemoteEndpointConfig(**self.params)
        except TypeError as exc:
            raise ConfigurationError(f"bad remote backend parameters: {exc}") from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


class BackendFactory:
    """Builds a fresh backend per episode; remote backends share one client."""

    def __init__(self, spec: BackendSpec, client: Optional[RemoteClient] = None):
        self.spec = spec
        self._client = client
        if spec.is_remote and client is None:
            self._client = RemoteClient(spec.endpoint())

    @property
    def id(self) -> str:
        if self.spec.is_remote:
            return f"remote:{self._client.cfg.model_id}"
        return self.spec.kind

    def snapshot(self) -> dict:
        if self.spec.is_remote:
            return self._client.cfg.snapshot()
        return {"kind": self.spec.kind, **self.spec.params}

    def new_episode(self, scenario: ScenarioConfig):
        if self.spec.is_remote:
            return RemoteBackend(self._client)
        cls = SCRIPTED[self.spec.kind]
        try:
            return cls(scenario, scenario.seed, **self.spec.params)
        except TypeError as exc:
            raise ConfigurationError(f"bad parameters for {self.spec.kind}: {exc}") from None

    def close(self):
        if self._client is not None:
            self._client.close()


def make_backend(spec: BackendSpec, scenario: ScenarioConfig):
    return BackendFactory(spec).new_episode(scenario)


__all__ = [
    "BACKEND_KINDS",
    "BackendFactory",
    "BackendSpec",
    "RemoteBackend",
    "RemoteClient",
    "RemoteEndpointConfig",
    "SCRIPTED",
    "StepContext",
    "make_backend",
    "plan_turn_toward",
]
