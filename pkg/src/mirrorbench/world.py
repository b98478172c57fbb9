"""Mirror-room geometry, scenario generation and discrete kinematics.

Coordinates: x points east, y points north, z up, origin at the room
centre on the floor.  Heading 0 faces +x and grows counter-clockwise, so
``a`` (turn left) adds 30 degrees and ``d`` subtracts 30.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Optional

import numpy as np

from .errors import ConfigurationError

ROOM_WIDTH = 10.0
ROOM_DEPTH = 10.0
WALL_HEIGHT = 3.0
STEP_LEN = 0.5
TURN_DEG = 30
BODY_RADIUS = 0.3
BODY_HEIGHT = 1.6
HEAD_BAND = 0.1
CUBE_EDGE = 0.6
EYE_HEIGHT = 1.4
MAX_STEPS = 100

MIRROR_Z_MIN = 0.3
MIRROR_HEIGHT = 2.2
OCCLUDER_HEIGHT = 1.8
OCCLUDER_THICKNESS = 0.05

# Pairwise Euclidean distance >= 100 in RGB space, and >= 100 from the greys.
PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (235, 20, 40),
    "green": (30, 190, 40),
    "blue": (30, 60, 230),
    "yellow": (240, 230, 30),
    "orange": (250, 130, 0),
    "purple": (120, 20, 170),
    "cyan": (0, 220, 230),
    "magenta": (230, 30, 200),
    "brown": (150, 75, 0),
    "pink": (255, 160, 210),
}
COLOR_NAMES: tuple[str, ...] = tuple(PALETTE)

FLOOR_GREY = (60, 60, 60)
WALL_GREY = (110, 110, 110)
CEILING_GREY = (160, 160, 160)

ACTIONS = ("w", "a", "s", "d", "done")
MOVE_ACTIONS = ("w", "a", "s", "d")

# Distractor random walk: forward-biased so they stay visibly mobile.
DISTRACTOR_ACTIONS = ("w", "a", "d", "s")
DISTRACTOR_WEIGHTS = (0.5, 0.2, 0.2, 0.1)

_POS_DECIMALS = 9


class Condition(str, Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"
    E4 = "E4"
    E5 = "E5"

    @classmethod
    def parse(cls, value) -> "Condition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"unknown condition {value!r}; expected one of E1..E5") from None

    @property
    def index(self) -> int:
        return int(self.value[1])

    @property
    def family(self) -> str:
        return "exploration" if self is Condition.E5 else "cube_selection"


# wall id -> (axis index of the plane normal, plane coordinate, inward normal)
WALLS: dict[str, tuple[int, float, tuple[float, float]]] = {
    "east": (0, ROOM_WIDTH / 2, (-1.0, 0.0)),
    "north": (1, ROOM_DEPTH / 2, (0.0, -1.0)),
    "west": (0, -ROOM_WIDTH / 2, (1.0, 0.0)),
    "south": (1, -ROOM_DEPTH / 2, (0.0, 1.0)),
}
# heading that looks straight at each wall
WALL_FACING = {"east": 0, "north": 90, "west": 180, "south": 270}


def _snap(v: float) -> float:
    # Positions live on a 1e-9 lattice so w followed by s restores a pose exactly.
    return round(float(v), _POS_DECIMALS) + 0.0


def heading_vector(heading: int) -> tuple[float, float]:
    rad = math.radians(heading)
    return math.cos(rad), math.sin(rad)


def angle_diff(a: float, b: float) -> float:
    """Smallest absolute difference between two headings, in degrees."""
    d = abs(a - b) % 360
    return min(d, 360 - d)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: int = 0

    def __post_init__(self):
        object.__setattr__(self, "heading", int(self.heading) % 360)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class MirrorSpec:
    wall_id: str
    u_min: float
    u_max: float
    z_min: float = MIRROR_Z_MIN
    height: float = MIRROR_HEIGHT
    frame_color: str = "wall"

    @property
    def axis(self) -> int:
        return WALLS[self.wall_id][0]

    @property
    def plane(self) -> float:
        return WALLS[self.wall_id][1]

    @property
    def normal(self) -> tuple[float, float, float]:
        nx, ny = WALLS[self.wall_id][2]
        return (nx, ny, 0.0)

    @property
    def facing_heading(self) -> int:
        return WALL_FACING[self.wall_id]

    @property
    def center(self) -> tuple[float, float]:
        u = 0.5 * (self.u_min + self.u_max)
        return (self.plane, u) if self.axis == 0 else (u, self.plane)

    def contains(self, u: float, z: float) -> bool:
        return self.u_min <= u <= self.u_max and self.z_min <= z <= self.z_min + self.height


@dataclass(frozen=True)
class OccluderSpec:
    """Opaque floor-standing panel, parallel to the mirror wall."""

    center: tuple[float, float]
    half_width: float
    wall_id: str
    thickness: float = OCCLUDER_THICKNESS
    height: float = OCCLUDER_HEIGHT

    def bounds(self):
        cx, cy = self.center
        if WALLS[self.wall_id][0] == 0:
            hx, hy = self.thickness / 2, self.half_width
        else:
            hx, hy = self.half_width, self.thickness / 2
        return (cx - hx, cy - hy, 0.0), (cx + hx, cy + hy, self.height)


@dataclass(frozen=True)
class CubeSpec:
    color: str
    center: tuple[float, float]
    edge: float = CUBE_EDGE
    role: str = "candidate"

    def bounds(self):
        cx, cy = self.center
        h = self.edge / 2
        return (cx - h, cy - h, 0.0), (cx + h, cy + h, self.edge)


@dataclass(frozen=True)
class DistractorSpec:
    color: str
    initial_pose: Pose
    motion_seed: int


@dataclass(frozen=True)
class RoomSpec:
    width: float = ROOM_WIDTH
    depth: float = ROOM_DEPTH
    wall_height: float = WALL_HEIGHT
    mirror: Optional[MirrorSpec] = None
    occluders: tuple[OccluderSpec, ...] = ()

    def inside(self, x: float, y: float, radius: float = BODY_RADIUS) -> bool:
        return abs(x) < self.width / 2 - radius and abs(y) < self.depth / 2 - radius


@dataclass(frozen=True)
class ScenarioConfig:
    condition: Condition
    seed: int
    room: RoomSpec
    ego_color: str
    ego_start: Pose
    cubes: tuple[CubeSpec, ...] = ()
    distractors: tuple[DistractorSpec, ...] = ()
    wrong_color: Optional[str] = None
    max_steps: int = MAX_STEPS

    @property
    def family(self) -> str:
        return self.condition.family

    @property
    def candidates(self) -> tuple[CubeSpec, ...]:
        return tuple(c for c in self.cubes if c.role == "candidate")

    def cube_of_color(self, color: str) -> Optional[CubeSpec]:
        for cube in self.candidates:
            if cube.color == color:
                return cube
        return None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["condition"] = self.condition.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        room = d["room"]
        mirror = MirrorSpec(**room["mirror"]) if room.get("mirror") else None
        occluders = tuple(
            OccluderSpec(center=tuple(o["center"]), half_width=o["half_width"], wall_id=o["wall_id"],
                         thickness=o["thickness"], height=o["height"])
            for o in room.get("occluders", ())
        )
        return cls(
            condition=Condition.parse(d["condition"]),
            seed=int(d["seed"]),
            room=RoomSpec(width=room["width"], depth=room["depth"], wall_height=room["wall_height"],
                          mirror=mirror, occluders=occluders),
            ego_color=d["ego_color"],
            ego_start=Pose(**d["ego_start"]),
            cubes=tuple(CubeSpec(color=c["color"], center=tuple(c["center"]), edge=c["edge"], role=c["role"])
                        for c in d["cubes"]),
            distractors=tuple(DistractorSpec(color=s["color"], initial_pose=Pose(**s["initial_pose"]),
                                             motion_seed=int(s["motion_seed"]))
                              for s in d["distractors"]),
            wrong_color=d.get("wrong_color"),
            max_steps=int(d.get("max_steps", MAX_STEPS)),
        )


@dataclass(frozen=True)
class WorldState:
    t: int
    ego: Pose
    distractors: tuple[Pose, ...] = field(default_factory=tuple)
    bumped_last: bool = False


def initial_state(scenario: ScenarioConfig) -> WorldState:
    return WorldState(
        t=1,
        ego=scenario.ego_start,
        distractors=tuple(d.initial_pose for d in scenario.distractors),
    )


# --------------------------------------------------------------------------
# dynamics


def move_pose(pose: Pose, action: str, room: RoomSpec) -> tuple[Pose, bool]:
    """One kinematic action for any body; blocked translations leave the pose unchanged."""
    if action == "a":
        return replace(pose, heading=pose.heading + TURN_DEG), False
    if action == "d":
        return replace(pose, heading=pose.heading - TURN_DEG), False
    if action not in ("w", "s"):
        raise ValueError(f"not a movement action: {action!r}")
    sign = 1.0 if action == "w" else -1.0
    cx, cy = heading_vector(pose.heading)
    x = _snap(pose.x + sign * STEP_LEN * cx)
    y = _snap(pose.y + sign * STEP_LEN * cy)
    if not room.inside(x, y):
        return pose, True
    return Pose(x, y, pose.heading), False


def apply_action(state: WorldState, action: str, room: RoomSpec) -> tuple[WorldState, bool]:
    ego, bumped = move_pose(state.ego, action, room)
    return replace(state, t=state.t + 1, ego=ego, bumped_last=bumped), bumped


def distractor_action(motion_seed: int, t: int) -> str:
    rng = np.random.default_rng([motion_seed, t])
    return DISTRACTOR_ACTIONS[int(rng.choice(len(DISTRACTOR_ACTIONS), p=DISTRACTOR_WEIGHTS))]


def step_distractors(state: WorldState, scenario: ScenarioConfig) -> WorldState:
    if not scenario.distractors:
        return state
    poses = []
    for spec, pose in zip(scenario.distractors, state.distractors):
        new_pose, _ = move_pose(pose, distractor_action(spec.motion_seed, state.t), scenario.room)
        poses.append(new_pose)
    return replace(state, distractors=tuple(poses))


def reach_threshold(cube: CubeSpec) -> float:
    return STEP_LEN + cube.edge / 2 + BODY_RADIUS


def cube_within_reach(state: WorldState, cube: CubeSpec) -> bool:
    dist = math.hypot(state.ego.x - cube.center[0], state.ego.y - cube.center[1])
    return dist <= reach_threshold(cube)


# --------------------------------------------------------------------------
# scenario generation


def _uniform_point(rng, margin: float, room: RoomSpec) -> tuple[float, float]:
    hx = room.width / 2 - margin
    hy = room.depth / 2 - margin
    return (round(float(rng.uniform(-hx, hx)), 6), round(float(rng.uniform(-hy, hy)), 6))


def _dist_to_wall(p: tuple[float, float], wall_id: str) -> float:
    axis, plane, _ = WALLS[wall_id]
    return abs(plane - p[axis])


def _place(rng, n, *, margin, min_sep, avoid=(), avoid_sep=0.0, ok=lambda p: True, room):
    points: list[tuple[float, float]] = []
    for _ in range(100_000):
        if len(points) == n:
            return points
        p = _uniform_point(rng, margin, room)
        if not ok(p):
            continue
        if any(math.dist(p, q) < min_sep for q in points):
            continue
        if any(math.dist(p, q) < avoid_sep for q in avoid):
            continue
        points.append(p)
    raise RuntimeError("placement did not converge")  # pragma: no cover


def _sample_mirror(rng, room: RoomSpec) -> MirrorSpec:
    wall_id = ("east", "north", "west", "south")[int(rng.integers(4))]
    half = (room.depth if WALLS[wall_id][0] == 0 else room.width) / 2
    width = float(rng.uniform(2.5, 4.0))
    lo = -half + 0.75 + width / 2
    center = float(rng.uniform(lo, -lo))
    return MirrorSpec(wall_id, round(center - width / 2, 6), round(center + width / 2, 6))


def _sample_occluders(rng, mirror: MirrorSpec) -> tuple[OccluderSpec, ...]:
    # Seen from the room centre, panel k hides a disjoint slice of the mirror;
    # total hidden width is 30-70% of the mirror.
    k = int(rng.integers(1, 4))
    frac = float(rng.uniform(0.3, 0.7))
    width = mirror.u_max - mirror.u_min
    slot = width / k
    piece = frac * width / k
    axis, plane, _ = WALLS[mirror.wall_id]
    panels = []
    for i in range(k):
        lo = mirror.u_min + i * slot + float(rng.uniform(0.0, slot - piece))
        mid = lo + piece / 2
        depth = float(rng.uniform(0.35, 0.75))  # fraction of the way from centre to wall
        normal_coord = round(depth * plane, 6)
        tangent = round(depth * mid, 6)
        center = (normal_coord, tangent) if axis == 0 else (tangent, normal_coord)
        panels.append(OccluderSpec(center=center, half_width=round(depth * piece / 2, 6),
                                   wall_id=mirror.wall_id))
    return tuple(panels)


def _start_heading(rng, mirror_facing: int) -> int:
    allowed = [h for h in range(0, 360, TURN_DEG) if angle_diff(h, mirror_facing) >= 90]
    return allowed[int(rng.integers(len(allowed)))]


def _distractors(rng, n, colors, room) -> tuple[DistractorSpec, ...]:
    out = []
    for color in colors[:n]:
        x, y = _uniform_point(rng, 0.6, room)
        heading = int(rng.integers(12)) * TURN_DEG
        out.append(DistractorSpec(color, Pose(x, y, heading), int(rng.integers(0, 2**63 - 1))))
    return tuple(out)


def generate_scenario(condition, seed: int, max_steps: int = MAX_STEPS) -> ScenarioConfig:
    cond = Condition.parse(condition)
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    rng = np.random.default_rng([seed, cond.index])
    room = RoomSpec()
    mirror = _sample_mirror(rng, room)
    ego_color = COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))]
    others = [c for c in COLOR_NAMES if c != ego_color]

    cubes: tuple[CubeSpec, ...] = ()
    distractors: tuple[DistractorSpec, ...] = ()
    occluders: tuple[OccluderSpec, ...] = ()
    wrong_color = None

    if cond is not Condition.E5:
        picks = rng.choice(len(others), size=2, replace=False)
        colors = [ego_color] + [others[int(i)] for i in picks]
        colors = [colors[int(i)] for i in rng.permutation(3)]
        centers = _place(rng, 3, margin=0.9, min_sep=2.0, room=room,
                         ok=lambda p: _dist_to_wall(p, mirror.wall_id) >= 1.5)
        cubes = tuple(CubeSpec(c, p) for c, p in zip(colors, centers))
        if cond is Condition.E3:
            wrong_color = others[int(rng.integers(len(others)))]
        if cond is Condition.E4:
            n = int(rng.integers(1, 7))
            dcolors = [others[int(i)] for i in rng.integers(len(others), size=n)]
            if rng.random() < 0.5:
                dcolors[int(rng.integers(n))] = ego_color
            distractors = _distractors(rng, n, dcolors, room)
    else:
        n = int(rng.integers(1, 7))
        dcolors = [COLOR_NAMES[int(i)] for i in rng.integers(len(COLOR_NAMES), size=n)]
        distractors = _distractors(rng, n, dcolors, room)
        n_clutter = int(rng.integers(2, 6))
        centers = _place(rng, n_clutter, margin=0.9, min_sep=1.2, room=room,
                         ok=lambda p: _dist_to_wall(p, mirror.wall_id) >= 1.0)
        cubes = tuple(CubeSpec(COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))], p, role="clutter")
                      for p in centers)
        occluders = _sample_occluders(rng, mirror)

    (sx, sy), = _place(rng, 1, margin=1.0, min_sep=0.0, room=room,
                       avoid=[c.center for c in cubes if c.role == "candidate"], avoid_sep=1.5)
    ego_start = Pose(sx, sy, _start_heading(rng, mirror.facing_heading))

    room = replace(room, mirror=None if cond is Condition.E2 else mirror, occluders=occluders)
    return ScenarioConfig(
        condition=cond,
        seed=seed,
        room=room,
        ego_color=ego_color,
        ego_start=ego_start,
        cubes=cubes,
        distractors=distractors,
        wrong_color=wrong_color,
        max_steps=max_steps,
    )
