"""Episode metrics and their aggregation.

Undefined per-episode values are ``None`` and are left out of the mean and
SEM rather than counted as zeros.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

from .errors import TraceValidationError, UsageError
from .protocol import UNKNOWN
from .world import ACTIONS, COLOR_NAMES, MAX_STEPS, Condition

SENTINEL = "--"

CORE_METRICS = ("tsa", "ttd", "mcr", "mtato", "caal", "cr")
EXTENDED_METRICS = ("tsa", "tsa_c", "mcr", "mgd", "caal", "sc", "ar_sc")
AGGREGATED = ("tsa", "ttd", "mcr", "mtato", "caal", "cr", "mgd", "sc", "ar_sc", "tsa_c")
LABELS = {
    "tsa": "TSA", "ttd": "TTD", "mcr": "MCR", "mtato": "MTATO", "caal": "CAAL", "cr": "CR",
    "mgd": "MGD", "sc": "SC", "ar_sc": "AR_SC", "tsa_c": "TSA-C",
}


@dataclass(frozen=True)
class StepRecord:
    t: int
    action: Optional[str]  # None marks a no-op after a rejected reply
    m: bool
    visible_fraction: float = 0.0
    mirror_surface_in_view: bool = False
    identification: str = UNKNOWN
    selected_cube: Optional[str] = None
    pose: tuple[float, float, int] = (0.0, 0.0, 0)
    bumped: bool = False
    protocol_flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pose"] = list(self.pose)
        d["protocol_flags"] = list(self.protocol_flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        d = dict(d)
        d["pose"] = tuple(d.get("pose", (0.0, 0.0, 0)))
        d["protocol_flags"] = tuple(d.get("protocol_flags", ()))
        return cls(**d)


@dataclass(frozen=True)
class EpisodeTrace:
    condition: str
    c_star: str
    T: int
    terminated: bool
    tau: int
    steps: tuple[StepRecord, ...]
    final_decision: Optional[str] = None
    scenario_seed: int = 0
    backend: str = ""
    proximity_violation: bool = False

    def validate(self) -> "EpisodeTrace":
        def bad(msg):
            raise TraceValidationError(f"invalid trace ({self.condition}, seed {self.scenario_seed}): {msg}")

        try:
            Condition.parse(self.condition)
        except Exception:
            bad(f"unknown condition {self.condition!r}")
        if self.c_star not in COLOR_NAMES:
            bad(f"c_star {self.c_star!r} is not a palette color")
        if not 1 <= self.T <= MAX_STEPS:
            bad(f"T={self.T} outside 1..{MAX_STEPS}")
        if [s.t for s in self.steps] != list(range(1, self.T + 1)):
            bad("step indices are not 1..T")
        for s in self.steps:
            if s.action is not None and s.action not in ACTIONS:
                bad(f"unknown action {s.action!r} at t={s.t}")
            if s.identification != UNKNOWN and s.identification not in COLOR_NAMES:
                bad(f"identification {s.identification!r} at t={s.t}")
        done_at = [s.t for s in self.steps if s.action == "done"]
        if self.terminated:
            if not done_at or done_at[0] != self.tau:
                bad("tau is not the first done step")
            if self.tau != self.T:
                bad("steps continue after done")
        else:
            if done_at:
                bad("done present in a non-terminated trace")
            if self.tau != self.T:
                bad("tau must equal T when not terminated")
            if self.final_decision is not None:
                bad("final decision without done")
        if self.final_decision is not None and self.final_decision not in COLOR_NAMES:
            bad(f"final decision {self.final_decision!r} is not a palette color")
        if self.terminated:
            last = self.steps[-1]
            if Condition.parse(self.condition) is Condition.E5:
                expected = None if last.identification == UNKNOWN else last.identification
            else:
                expected = last.selected_cube
            if self.final_decision != expected:
                bad("final decision disagrees with the done step")
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["steps"] = [s.to_dict() for s in self.steps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeTrace":
        try:
            d = dict(d)
            d["steps"] = tuple(StepRecord.from_dict(s) for s in d["steps"])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise TraceValidationError(f"malformed trace record: {exc}") from None


@dataclass(frozen=True)
class EpisodeMetrics:
    tsa: int
    ttd: int
    mcr: int
    mtato: Optional[int]
    caal: int
    cr: int
    mgd: int
    sc: Optional[int]
    ar_sc_applicable: int
    completed: int

    def to_dict(self) -> dict:
        return asdict(self)


def episode_metrics(trace: EpisodeTrace) -> EpisodeMetrics:
    trace.validate()
    c_star, tau = trace.c_star, trace.tau
    steps = trace.steps
    before = [s for s in steps if s.t < tau]

    tsa = int(trace.final_decision is not None and trace.final_decision == c_star)
    mcr = int(any(s.m for s in before))
    caal = int(any(s.identification == c_star for s in before))

    t_claim = next((s.t for s in before if s.identification != UNKNOWN), None)
    t_seen = next((s.t for s in before if s.m), None)
    cr = int(t_claim is not None and (t_seen is None or t_claim < t_seen))

    mgd = sum(1 for s in steps if s.m)

    # self-correction uses the whole trajectory, not only t < tau
    t_mirror = next((s.t for s in steps if s.m), None)
    guess = None
    if t_mirror is not None:
        guess = next((s for s in steps if s.t < t_mirror and s.identification != UNKNOWN), None)
    applicable = int(guess is not None and guess.identification != c_star)
    sc = None
    if applicable:
        horizon = tau if trace.terminated else trace.T
        sc = int(any(s.identification == c_star for s in steps if t_mirror <= s.t <= horizon))

    return EpisodeMetrics(
        tsa=tsa, ttd=tau, mcr=mcr, mtato=mcr if tsa else None, caal=caal, cr=cr,
        mgd=mgd, sc=sc, ar_sc_applicable=applicable, completed=int(trace.terminated),
    )


# --------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class MetricSummary:
    mean: Optional[float]
    sem: Optional[float]
    n_defined: int

    def format(self, precision: int = 2, with_sem: bool = True) -> str:
        if self.mean is None:
            return SENTINEL
        mean = f"{self.mean:.{precision}f}"
        if not with_sem:
            return mean
        sem = SENTINEL if self.sem is None else f"{self.sem:.{precision}f}"
        return f"{mean} ± {sem}"

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values: Iterable[Optional[float]]) -> MetricSummary:
    defined = [float(v) for v in values if v is not None]
    n = len(defined)
    if n == 0:
        return MetricSummary(None, None, 0)
    mean = math.fsum(defined) / n
    if n == 1:
        return MetricSummary(mean, None, 1)
    var = math.fsum((v - mean) ** 2 for v in defined) / (n - 1)
    return MetricSummary(mean, math.sqrt(var) / math.sqrt(n), n)


@dataclass(frozen=True)
class AggregateMetrics:
    n_episodes: int
    metrics: dict[str, MetricSummary] = field(default_factory=dict)
    completion_gap: Optional[float] = None

    def __getitem__(self, name: str) -> MetricSummary:
        return self.metrics[name]

    @property
    def tsa_c(self) -> MetricSummary:
        return self.metrics["tsa_c"]

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "completion_gap": self.completion_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateMetrics":
        return cls(
            n_episodes=d["n_episodes"],
            metrics={k: MetricSummary(**v) for k, v in d["metrics"].items()},
            completion_gap=d.get("completion_gap"),
        )


def aggregate(episodes: Sequence[EpisodeMetrics]) -> AggregateMetrics:
    if not episodes:
        raise UsageError("cannot aggregate an empty set of episodes")
    col = {name: [getattr(e, name) for e in episodes]
           for name in ("tsa", "ttd", "mcr", "mtato", "caal", "cr", "mgd", "sc")}
    col["ar_sc"] = [e.ar_sc_applicable for e in episodes]
    col["tsa_c"] = [e.tsa for e in episodes if e.completed]
    metrics = {name: summarize(col[name]) for name in AGGREGATED}
    tsa_c = metrics["tsa_c"].mean
    gap = None if tsa_c is None else tsa_c - metrics["tsa"].mean
    return AggregateMetrics(n_episodes=len(episodes), metrics=metrics, completion_gap=gap)


@dataclass(frozen=True)
class BaselineReport:
    condition: str
    value: Optional[float]
    reference_points: tuple[float, ...]

    def describe(self, precision: int = 4) -> str:
        if self.value is not None:
            return f"chance TSA = 1/3 ({self.value:.{precision}f})"
        pts = ", ".join(f"{p:.{precision}f}" for p in self.reference_points)
        return f"chance TSA reference points: {{{pts}}} (1/10, 1/11); no single baseline"


def chance_baseline(condition) -> BaselineReport:
    cond = Condition.parse(condition)
    if cond is Condition.E5:
        return BaselineReport(cond.value, None, (1 / 10, 1 / 11))
    return BaselineReport(cond.value, 1 / 3, (1 / 3,))
