"""Simulated mirror self-recognition benchmark for embodied vision-language agents."""

from .agents import BackendSpec, RemoteEndpointConfig, make_backend, plan_turn_toward
from .errors import (
    BackendUnavailable,
    ConfigurationError,
    MirrorBenchError,
    SchemaVersionError,
    TraceValidationError,
    UsageError,
)
from .harness import EpisodeRecord, RunConfig, replay, run_episode, run_experiment
from .metrics import EpisodeMetrics, EpisodeTrace, aggregate, chance_baseline, episode_metrics
from .protocol import parse_agent_output
from .render import ego_reflection_visibility, render_frame, render_scene
from .report import report
from .world import Condition, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "BackendSpec", "BackendUnavailable", "Condition", "ConfigurationError", "EpisodeMetrics",
    "EpisodeRecord", "EpisodeTrace", "MirrorBenchError", "RemoteEndpointConfig", "RunConfig",
    "SchemaVersionError", "TraceValidationError", "UsageError", "aggregate", "chance_baseline",
    "ego_reflection_visibility", "episode_metrics", "generate_scenario", "make_backend",
    "parse_agent_output", "plan_turn_toward", "render_frame", "render_scene", "replay", "report",
    "run_episode", "run_experiment",
]
