"""Deterministic scripted policies.

They read the ground truth (scenario, world state, visibility bit) through
the step context, which real models never see, so that every metric regime
can be produced on demand and checked exactly.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..protocol import EXPLORATION, UNKNOWN, AgentStep, dump_agent_step
from ..world import COLOR_NAMES, STEP_LEN, Pose, ScenarioConfig, cube_within_reach

BEARING_TOLERANCE = 15.0
ARRIVAL_RADIUS = STEP_LEN
VIEW_DISTANCES = (2.0, 1.0)  # metres in front of the mirror centre, tried in order
VIEW_PATIENCE = 4


def plan_turn_toward(ego: Pose, target) -> str:
    """Greedy waypoint step: turn until the target is within +-15 degrees, then walk."""
    dx, dy = target[0] - ego.x, target[1] - ego.y
    if dx == 0 and dy == 0:
        return "w"
    bearing = (math.degrees(math.atan2(dy, dx)) - ego.heading + 180.0) % 360.0 - 180.0
    bearing = round(bearing, 9)
    if bearing > BEARING_TOLERANCE:
        return "a"
    if bearing < -BEARING_TOLERANCE:
        return "d"
    return "w"


def turn_toward_heading(current: int, target: int) -> str:
    return "a" if (target - current) % 360 <= 180 else "d"


class ScriptedPolicy:
    kind = "scripted"
    _salt = 0

    def __init__(self, scenario: ScenarioConfig, seed: int):
        self.scenario = scenario
        self.rng = np.random.default_rng([int(seed), self._salt])

    @property
    def id(self) -> str:
        return self.kind

    @property
    def config(self) -> dict:
        return {"kind": self.kind}

    def step(self, ctx) -> AgentStep:
        raise NotImplementedError

    def act(self, ctx) -> str:
        return dump_agent_step(self.step(ctx), self.scenario.family)

    def _random_color(self, exclude: Optional[str] = None) -> str:
        choices = [c for c in COLOR_NAMES if c != exclude]
        return choices[int(self.rng.integers(len(choices)))]

    def _random_candidate(self) -> Optional[str]:
        cands = self.scenario.candidates
        if not cands:
            return None
        return cands[int(self.rng.integers(len(cands)))].color


class PerfectOracle(ScriptedPolicy):
    """Walk to the mirror until the own reflection has been seen, then go to the matching cube."""

    kind = "perfect_oracle"
    _salt = 1

    def __init__(self, scenario: ScenarioConfig, seed: int):
        super().__init__(scenario, seed)
        self.mirror_seen = False
        self.gave_up = scenario.room.mirror is None
        self._spot = 0
        self._waited = 0

    def pre_mirror_identification(self, ctx) -> str:
        return UNKNOWN

    def identification(self, ctx) -> str:
        return self.scenario.ego_color if self.mirror_seen else self.pre_mirror_identification(ctx)

    def step(self, ctx) -> AgentStep:
        seen_before = self.mirror_seen
        if ctx.visibility.m:
            self.mirror_seen = True
        ident = self.identification(ctx)
        if not seen_before and not self.gave_up:
            action = self.seek_mirror(ctx)
            if action is not None:
                return AgentStep(action=action, identification=ident, summary="looking for the mirror")
        return self.after_mirror(ctx, ident)

    def seek_mirror(self, ctx) -> Optional[str]:
        mirror = self.scenario.room.mirror
        ego = ctx.state.ego
        cx, cy = mirror.center
        nx, ny, _ = mirror.normal
        dist = VIEW_DISTANCES[self._spot]
        spot = (cx + dist * nx, cy + dist * ny)
        if math.hypot(spot[0] - ego.x, spot[1] - ego.y) > ARRIVAL_RADIUS:
            return plan_turn_toward(ego, spot)
        if ego.heading != mirror.facing_heading:
            return turn_toward_heading(ego.heading, mirror.facing_heading)
        # facing the mirror but the reflection is blocked: wiggle, then try the next spot
        self._waited += 1
        if self._waited >= VIEW_PATIENCE:
            self._waited = 0
            self._spot += 1
            if self._spot >= len(VIEW_DISTANCES):
                self.gave_up = True
                return None
        return "a"

    def after_mirror(self, ctx, ident: str) -> AgentStep:
        if self.scenario.family == EXPLORATION:
            return AgentStep(action="done", identification=ident, summary="identified own color")
        cube = self.scenario.cube_of_color(self.scenario.ego_color)
        if cube_within_reach(ctx.state, cube):
            return AgentStep(action="done", identification=ident, selected_cube=cube.color,
                             reasoning="the reflection shows my body color", summary="selecting cube")
        return AgentStep(action=plan_turn_toward(ctx.state.ego, cube.center), identification=ident,
                         summary="walking to the matching cube")


class Confabulator(PerfectOracle):
    """Claims a colour at t=1 before any evidence, then behaves like the oracle."""

    kind = "confabulator"
    _salt = 2

    def __init__(self, scenario: ScenarioConfig, seed: int, force_wrong: bool = True):
        super().__init__(scenario, seed)
        self.force_wrong = bool(force_wrong)
        self.claim = self._random_color(exclude=scenario.ego_color if self.force_wrong else None)

    @property
    def config(self) -> dict:
        return {"kind": self.kind, "force_wrong": self.force_wrong}

    def pre_mirror_identification(self, ctx) -> str:
        return self.claim


class MirrorStarer(PerfectOracle):
    """Reaches the mirror, then turns back and forth in front of it until the step cap."""

    kind = "mirror_starer"
    _salt = 3

    def __init__(self, scenario: ScenarioConfig, seed: int):
        super().__init__(scenario, seed)
        self._swing = 0

    def identification(self, ctx) -> str:
        return UNKNOWN

    def after_mirror(self, ctx, ident: str) -> AgentStep:
        action = "a" if self._swing % 2 == 0 else "d"
        self._swing += 1
        return AgentStep(action=action, identification=UNKNOWN, summary="watching the mirror")


class BlindGuesser(ScriptedPolicy):
    """Commits at t=1 to a uniformly random cube and a random self colour."""

    kind = "blind_guesser"
    _salt = 4

    def step(self, ctx) -> AgentStep:
        ident = self._random_color()
        return AgentStep(action="done", identification=ident, selected_cube=self._random_candidate(),
                         summary="guessing")


class RandomWalker(ScriptedPolicy):
    kind = "random_walker"
    _salt = 5
    done_probability = 0.05

    def step(self, ctx) -> AgentStep:
        if self.rng.random() < self.done_probability:
            ident = self._random_color() if self.scenario.family == EXPLORATION else UNKNOWN
            return AgentStep(action="done", identification=ident, selected_cube=self._random_candidate())
        action = ("w", "a", "s", "d")[int(self.rng.integers(4))]
        return AgentStep(action=action, identification=UNKNOWN)


SCRIPTED = {
    cls.kind: cls for cls in (PerfectOracle, Confabulator, MirrorStarer, BlindGuesser, RandomWalker)
}
