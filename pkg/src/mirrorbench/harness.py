"""Episode engine, experiment runner, trace persistence and replay."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

from .agents import BackendFactory, BackendSpec, StepContext
from .errors import BackendUnavailable, SchemaVersionError, TraceValidationError, UsageError
from .metrics import AggregateMetrics, EpisodeTrace, StepRecord, aggregate, chance_baseline, episode_metrics
from .protocol import (
    EXPLORATION,
    NO_HISTORY,
    UNKNOWN,
    ProtocolError,
    build_prompts,
    format_history,
    format_rejected_history,
    make_step_input,
    parse_agent_output,
    reprompt_text,
)
from .render import DEFAULT_CAMERA, CameraSpec, ego_reflection_visibility, render_scene
from .world import (
    MAX_STEPS,
    Condition,
    ScenarioConfig,
    apply_action,
    cube_within_reach,
    generate_scenario,
    initial_state,
    step_distractors,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RECOVERY_POLICY = "reprompt_once_then_noop"
NOOP_FLAG = "noop"
REPROMPT_FLAG = "reprompted"


@dataclass(frozen=True)
class RunConfig:
    conditions: tuple[str, ...] = ("E1",)
    backend: BackendSpec = field(default_factory=lambda: BackendSpec("perfect_oracle"))
    base_seed: int = 0
    seeds_per_condition: int = 3
    runs_per_seed: int = 7
    max_steps: int = MAX_STEPS
    output_dir: Path = Path("results")
    save_frames: bool = False
    parallel: int = 1

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(Condition.parse(c).value for c in self.conditions))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if not 0 <= self.base_seed < 2**64:
            raise UsageError("base_seed must be an unsigned 64-bit integer")
        if self.seeds_per_condition < 1 or self.runs_per_seed < 1:
            raise UsageError("seeds and runs must be positive")
        if not 1 <= self.max_steps <= MAX_STEPS:
            raise UsageError(f"max_steps must be in 1..{MAX_STEPS}")

    def to_dict(self) -> dict:
        return {
            "conditions": list(self.conditions),
            "backend": self.backend.to_dict(),
            "base_seed": self.base_seed,
            "seeds_per_condition": self.seeds_per_condition,
            "runs_per_seed": self.runs_per_seed,
            "max_steps": self.max_steps,
            "save_frames": self.save_frames,
        }


@dataclass(frozen=True)
class EpisodeRecord:
    trace: EpisodeTrace
    scenario: ScenarioConfig
    frame_digests: tuple[str, ...]
    prompts_hash: str
    backend_config: dict
    episode_id: str = ""
    seed_index: int = 0
    run_index: int = 0
    recovery_policy: str = RECOVERY_POLICY

    def to_dict(self) -> dict:
        return {
            "type": "episode",
            "episode_id": self.episode_id,
            "seed_index": self.seed_index,
            "run_index": self.run_index,
            "scenario": self.scenario.to_dict(),
            "backend_config": self.backend_config,
            "recovery_policy": self.recovery_policy,
            "prompts_hash": self.prompts_hash,
            "frame_digests": list(self.frame_digests),
            "trace": self.trace.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        try:
            return cls(
                trace=EpisodeTrace.from_dict(d["trace"]),
                scenario=ScenarioConfig.from_dict(d["scenario"]),
                frame_digests=tuple(d["frame_digests"]),
                prompts_hash=d["prompts_hash"],
                backend_config=d["backend_config"],
                episode_id=d.get("episode_id", ""),
                seed_index=d.get("seed_index", 0),
                run_index=d.get("run_index", 0),
                recovery_policy=d.get("recovery_policy", RECOVERY_POLICY),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceValidationError(f"malformed episode record: {exc}") from None


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# --------------------------------------------------------------------------
# episode loop


def _final_decision(scenario: ScenarioConfig, step) -> Optional[str]:
    if scenario.family == EXPLORATION:
        return None if step.identification == UNKNOWN else step.identification
    return step.selected_cube


def run_episode(scenario: ScenarioConfig, backend: Union[BackendSpec, object], *,
                cam: CameraSpec = DEFAULT_CAMERA, frames_dir: Optional[Path] = None,
                backend_config: Optional[dict] = None) -> EpisodeRecord:
    """Run one episode to ``done`` or the step cap.

    ``backend`` is a BackendSpec or an already constructed per-episode backend.
    Raises BackendUnavailable when a remote backend gives up.
    """
    if isinstance(backend, BackendSpec):
        factory = BackendFactory(backend)
        backend_config = factory.snapshot()
        backend = factory.new_episode(scenario)
    if backend_config is None:
        backend_config = dict(getattr(backend, "config", {}))
    family = scenario.family
    state = initial_state(scenario)
    history = NO_HISTORY
    digests: list[str] = []
    prompts = hashlib.sha256()
    steps: list[StepRecord] = []
    terminated = False
    final = None
    proximity_violation = False
    if frames_dir is not None:
        frames_dir.mkdir(parents=True, exist_ok=True)

    for t in range(1, scenario.max_steps + 1):
        rendered = render_scene(state, scenario, cam)
        vis = ego_reflection_visibility(state, scenario, cam)
        frame = rendered.frame
        digests.append(frame.digest())
        if frames_dir is not None:
            (frames_dir / f"t{t:03d}.png").write_bytes(frame.to_png())

        step_input = make_step_input(scenario, state, None, frame, history_text=history)
        system_text, user_text = build_prompts(scenario, step_input)
        ctx = StepContext(t, system_text, user_text, frame, step_input, scenario, state, vis)
        flags: list[str] = []
        parsed = None
        raw = backend.act(ctx)
        prompts.update(_dumps([system_text, user_text]).encode())
        try:
            parsed = parse_agent_output(raw, family, t)
        except ProtocolError as first:
            flags.append(f"protocol_error:{first.kind}")
            retry_text = reprompt_text(user_text, first)
            raw = backend.act(replace(ctx, user_text=retry_text))
            prompts.update(_dumps([system_text, retry_text]).encode())
            try:
                parsed = parse_agent_output(raw, family, t)
                flags.append(REPROMPT_FLAG)
            except ProtocolError as second:
                flags.append(f"protocol_error:{second.kind}")
                flags.append(NOOP_FLAG)
                error_kind = second.kind

        common = dict(t=t, m=vis.m, visible_fraction=vis.visible_fraction,
                      mirror_surface_in_view=rendered.mirror_in_view,
                      pose=(state.ego.x, state.ego.y, state.ego.heading))

        if parsed is None:
            steps.append(StepRecord(action=None, protocol_flags=tuple(flags), **common))
            state = step_distractors(replace(state, t=t + 1, bumped_last=False), scenario)
            history = format_rejected_history(error_kind)
            continue

        if parsed.fenced:
            flags.append("fenced_output")
        if parsed.action == "done":
            steps.append(StepRecord(action="done", identification=parsed.identification,
                                    selected_cube=parsed.selected_cube, protocol_flags=tuple(flags), **common))
            terminated = True
            final = _final_decision(scenario, parsed)
            if family != EXPLORATION and final is not None:
                cube = scenario.cube_of_color(final)
                proximity_violation = cube is None or not cube_within_reach(state, cube)
            break

        new_state, bumped = apply_action(state, parsed.action, scenario.room)
        steps.append(StepRecord(action=parsed.action, identification=parsed.identification,
                                selected_cube=parsed.selected_cube, bumped=bumped,
                                protocol_flags=tuple(flags), **common))
        state = step_distractors(new_state, scenario)
        history = format_history(parsed)

    T = len(steps)
    trace = EpisodeTrace(
        condition=scenario.condition.value,
        c_star=scenario.ego_color,
        T=T,
        terminated=terminated,
        tau=T,
        steps=tuple(steps),
        final_decision=final,
        scenario_seed=scenario.seed,
        backend=getattr(backend, "id", str(type(backend).__name__)),
        proximity_violation=proximity_violation,
    ).validate()
    return EpisodeRecord(trace=trace, scenario=scenario, frame_digests=tuple(digests),
                         prompts_hash=prompts.hexdigest(), backend_config=backend_config)


# --------------------------------------------------------------------------
# experiments


def episode_seed(base_seed: int, condition, seed_index: int, run_index: int) -> int:
    """Stable 64-bit seed from the declared indices only."""
    cond = Condition.parse(condition).value.encode()
    h = hashlib.blake2b(digest_size=8, person=b"mirrorbench")
    h.update(struct.pack(">Q", base_seed) + cond + struct.pack(">II", seed_index, run_index))
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class _Job:
    condition: str
    seed_index: int
    run_index: int
    seed: int
    max_steps: int
    frames_dir: Optional[Path]

    @property
    def episode_id(self) -> str:
        return f"{self.condition}-s{self.seed_index}-r{self.run_index}"


def _run_job(job: _Job, factory: BackendFactory):
    scenario = generate_scenario(job.condition, job.seed, job.max_steps)
    frames = job.frames_dir / job.episode_id if job.frames_dir is not None else None
    try:
        rec = run_episode(scenario, factory.new_episode(scenario), frames_dir=frames,
                          backend_config=factory.snapshot())
    except BackendUnavailable as exc:
        return {"episode_id": job.episode_id, "error": str(exc), "attempts": exc.attempts}
    return replace(rec, episode_id=job.episode_id, seed_index=job.seed_index, run_index=job.run_index)


_WORKER_FACTORY: Optional[BackendFactory] = None


def _process_job(args):
    global _WORKER_FACTORY
    job, spec = args
    if _WORKER_FACTORY is None or _WORKER_FACTORY.spec != spec:
        _WORKER_FACTORY = BackendFactory(spec)
    return _run_job(job, _WORKER_FACTORY)


@dataclass(frozen=True)
class ExperimentResult:
    output_dir: Path
    traces: dict[str, Path]
    aggregates: dict[str, Path]
    infrastructure_failures: int


def run_experiment(cfg: RunConfig, factory: Optional[BackendFactory] = None) -> ExperimentResult:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    own_factory = factory is None
    factory = factory or BackendFactory(cfg.backend)
    traces, aggregates = {}, {}
    failures_total = 0
    try:
        for cond in cfg.conditions:
            jobs = [
                _Job(cond, s, r, episode_seed(cfg.base_seed, cond, s, r), cfg.max_steps,
                     out / "frames" if cfg.save_frames else None)
                for s in range(cfg.seeds_per_condition)
                for r in range(cfg.runs_per_seed)
            ]
            results = _execute(jobs, cfg, factory)
            records = [r for r in results if isinstance(r, EpisodeRecord)]
            failures = [r for r in results if not isinstance(r, EpisodeRecord)]
            failures_total += len(failures)

            trace_path = out / f"{cond}.jsonl"
            header = {
                "type": "header",
                "schema_version": SCHEMA_VERSION,
                "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "condition": cond,
                "backend": factory.id,
                "run_config": cfg.to_dict(),
            }
            with trace_path.open("w", encoding="utf-8") as fh:
                fh.write(_dumps(header) + "\n")
                for rec in records:
                    fh.write(_dumps(rec.to_dict()) + "\n")
            traces[cond] = trace_path

            summary = {
                "schema_version": SCHEMA_VERSION,
                "condition": cond,
                "backend": factory.id,
                "n_episodes": len(records),
                "n_excluded": len(failures),
                "excluded": failures,
                "aggregate": aggregate([episode_metrics(r.trace) for r in records]).to_dict() if records else None,
                "chance_baseline": _baseline_dict(cond),
                "proximity_violations": sum(r.trace.proximity_violation for r in records),
                "protocol_noops": sum(NOOP_FLAG in s.protocol_flags for r in records for s in r.trace.steps),
            }
            agg_path = out / f"{cond}.aggregate.json"
            agg_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            aggregates[cond] = agg_path
            log.info("%s: %d episodes, %d excluded", cond, len(records), len(failures))
    finally:
        if own_factory:
            factory.close()
    return ExperimentResult(out, traces, aggregates, failures_total)


def _baseline_dict(cond: str) -> dict:
    b = chance_baseline(cond)
    return {"value": b.value, "reference_points": list(b.reference_points)}


def _execute(jobs: Sequence[_Job], cfg: RunConfig, factory: BackendFactory) -> list:
    if cfg.parallel <= 1:
        return [_run_job(job, factory) for job in jobs]
    if cfg.backend.is_remote:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            return list(pool.map(lambda j: _run_job(j, factory), jobs))
    with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
        return list(pool.map(_process_job, [(j, cfg.backend) for j in jobs]))


# --------------------------------------------------------------------------
# replay


def load_records(trace_file) -> list[EpisodeRecord]:
    path = Path(trace_file)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise TraceValidationError(f"{path}: first line is not JSON") from None
    if not isinstance(header, dict) or header.get("type") != "header":
        raise TraceValidationError(f"{path}: missing header line")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(header.get("schema_version"), SCHEMA_VERSION)
    records = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise TraceValidationError(f"{path}:{n}: not JSON") from None
        records.append(EpisodeRecord.from_dict(obj))
    return records


def replay(trace_file) -> AggregateMetrics:
    records = load_records(trace_file)
    if not records:
        raise UsageError(f"{trace_file} holds no episodes")
    return aggregate([episode_metrics(r.trace) for r in records])
