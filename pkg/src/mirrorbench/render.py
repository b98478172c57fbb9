"""First-person raycaster with a single planar-mirror bounce.

Every surface is flat shaded: ``colour / (1 + 0.15 * path_length)``, where the
path length of a mirrored pixel is eye-to-mirror plus mirror-to-hit.  The
ego body is invisible to primary rays and only shows up after a bounce.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .world import (
    BODY_HEIGHT,
    BODY_RADIUS,
    CEILING_GREY,
    EYE_HEIGHT,
    FLOOR_GREY,
    HEAD_BAND,
    PALETTE,
    WALL_GREY,
    MirrorSpec,
    ScenarioConfig,
    WorldState,
    heading_vector,
)

ATTENUATION = 0.15
VIS_THRESHOLD = 0.2
VIS_SAMPLES = 64
_EPS = 1e-9
_INF = np.inf

# object ids in the id buffer
FLOOR, CEILING, WALL = 0, 1, 2
MIRROR = 6
EGO = 7
CUBE_BASE = 10
OCCLUDER_BASE = 30
DISTRACTOR_BASE = 50


@dataclass(frozen=True)
class CameraSpec:
    width: int = 640
    height: int = 480
    vertical_fov: float = 110.0
    eye_height: float = EYE_HEIGHT

    @property
    def tan_v(self) -> float:
        return math.tan(math.radians(self.vertical_fov) / 2)

    @property
    def tan_h(self) -> float:
        return self.tan_v * self.width / self.height

    @property
    def horizontal_fov(self) -> float:
        return math.degrees(2 * math.atan(self.tan_h))


DEFAULT_CAMERA = CameraSpec()


@dataclass(frozen=True, eq=False)
class Frame:
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def digest(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()

    def to_png(self) -> bytes:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class RenderResult:
    frame: Frame
    object_ids: np.ndarray  # (H, W) int16, id of the surface that coloured the pixel
    bounced: np.ndarray  # (H, W) bool, pixel coloured through the mirror

    @property
    def mirror_in_view(self) -> bool:
        return bool(self.bounced.any())

    def ego_reflection_pixels(self) -> int:
        return int(np.count_nonzero(self.bounced & (self.object_ids == EGO)))


@dataclass(frozen=True)
class VisibilityReport:
    visible_fraction: float
    m: bool
    rays_cast: int


# --------------------------------------------------------------------------
# geometry primitives


def reflect_point(p, mirror: MirrorSpec) -> tuple[float, float, float]:
    """Mirror image of ``p`` across the mirror's plane."""
    q = [float(p[0]), float(p[1]), float(p[2])]
    q[mirror.axis] = 2.0 * mirror.plane - q[mirror.axis]
    return (q[0], q[1], q[2])


def reflect_direction(d, normal):
    """``d - 2 (d.n) n``; works on (3,) or (N, 3) arrays."""
    d = np.asarray(d, dtype=float)
    n = np.asarray(normal, dtype=float)
    return d - 2.0 * (d @ n)[..., None] * n if d.ndim > 1 else d - 2.0 * float(d @ n) * n


def _ray_box(ox, oy, oz, dx, dy, dz, lo, hi):
    """Entry distance of rays into an axis-aligned box, inf on a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ix, iy, iz = 1.0 / dx, 1.0 / dy, 1.0 / dz
        tx1 = (lo[0] - ox) * ix
        tx2 = (hi[0] - ox) * ix
        ty1 = (lo[1] - oy) * iy
        ty2 = (hi[1] - oy) * iy
        tz1 = (lo[2] - oz) * iz
        tz2 = (hi[2] - oz) * iz
        tnear = np.maximum(np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2)), np.minimum(tz1, tz2))
        tfar = np.minimum(np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2)), np.maximum(tz1, tz2))
    hit = (tnear <= tfar) & (tnear > _EPS)
    return np.where(hit, tnear, _INF)


def _ray_cylinder(ox, oy, oz, dx, dy, dz, cx, cy, radius, height):
    """Entry distance into an upright cylinder standing on the floor (side or top cap)."""
    px = ox - cx
    py = oy - cy
    a = dx * dx + dy * dy
    b = px * dx + py * dy
    c = px * px + py * py - radius * radius
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        t_side = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
        z = oz + t_side * dz
        side_ok = (disc >= 0) & (a > 0) & (t_side > _EPS) & (z >= 0.0) & (z <= height)
        t_cap = (height - oz) / dz
        qx = px + t_cap * dx
        qy = py + t_cap * dy
        cap_ok = (dz < 0) & (t_cap > _EPS) & (qx * qx + qy * qy <= radius * radius)
    t = np.minimum(np.where(side_ok, t_side, _INF), np.where(cap_ok, t_cap, _INF))
    # origin inside the body sees through it
    inside = (c < 0) & (oz < height)
    return np.where(inside, _INF, t)


def _room_exit(ox, oy, oz, dx, dy, dz, room):
    """Distance to the room boundary and whether it is floor, ceiling or a wall."""
    hx, hy = room.width / 2, room.depth / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx >= 0, hx - ox, hx + ox)
        tx /= np.abs(dx)
        ty = np.where(dy >= 0, hy - oy, hy + oy)
        ty /= np.abs(dy)
        up = dz >= 0
        tz = np.where(up, room.wall_height - oz, oz)
        tz /= np.abs(dz)
    tw = np.minimum(tx, ty, out=tx)
    on_z = tz < tw
    t = np.where(on_z, tz, tw)
    ids = np.where(on_z, np.where(up, CEILING, FLOOR), WALL).astype(np.int16)
    return t, ids


def _mirror_hit(ox, oy, oz, dx, dy, dz, mirror: MirrorSpec):
    """Mask of rays (from inside the room) whose boundary exit lies on the mirror."""
    o_axis, d_axis = (ox, dx) if mirror.axis == 0 else (oy, dy)
    o_u, d_u = (oy, dy) if mirror.axis == 0 else (ox, dx)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (mirror.plane - o_axis) / d_axis
    u = o_u + t * d_u
    z = oz + t * dz
    return (t > 0) & (u >= mirror.u_min) & (u <= mirror.u_max) \
        & (z >= mirror.z_min) & (z <= mirror.z_min + mirror.height)


def _mirror_corners(mirror: MirrorSpec):
    pts = []
    for u in (mirror.u_min, mirror.u_max):
        for z in (mirror.z_min, mirror.z_min + mirror.height):
            pts.append((mirror.plane, u, z) if mirror.axis == 0 else (u, mirror.plane, z))
    return np.array(pts)


# --------------------------------------------------------------------------
# scene assembly


@dataclass(frozen=True)
class _Body:
    id: int
    x: float
    y: float
    color: tuple[int, int, int]


def _scene(state: WorldState, scenario: ScenarioConfig):
    boxes = []
    for k, cube in enumerate(scenario.cubes):
        lo, hi = cube.bounds()
        boxes.append((CUBE_BASE + k, lo, hi))
    for k, occ in enumerate(scenario.room.occluders):
        lo, hi = occ.bounds()
        boxes.append((OCCLUDER_BASE + k, lo, hi))
    bodies = [
        _Body(DISTRACTOR_BASE + k, p.x, p.y, PALETTE[spec.color])
        for k, (spec, p) in enumerate(zip(scenario.distractors, state.distractors))
    ]
    return boxes, bodies


_GREYS = (FLOOR_GREY, WALL_GREY, CEILING_GREY)
_N_BASE = len(_GREYS) + len(PALETTE)
SHADE_COLORS = np.array(
    list(_GREYS) + list(PALETTE.values()) + [tuple(0.5 * c for c in rgb) for rgb in PALETTE.values()],
    dtype=float,
)
_PALETTE_INDEX = {name: len(_GREYS) + k for k, name in enumerate(PALETTE)}
_PATH_RESOLUTION = 1000  # path lengths are quantised to 1 mm
_MAX_PATH = 60.0


def shade(color, path_length):
    """Attenuated colour ``rint(color / (1 + 0.15 L))`` with ``L`` rounded to the nearest mm.

    Equal path lengths therefore always shade to identical bytes, whichever
    way (direct or through the mirror) the light travelled.
    """
    length = np.rint(np.asarray(path_length, dtype=float) * _PATH_RESOLUTION) / _PATH_RESOLUTION
    atten = 1.0 / (1.0 + ATTENUATION * length)
    value = np.asarray(color, dtype=float) * atten[..., None]
    return np.rint(value).astype(np.uint8)


@lru_cache(maxsize=1)
def _shade_lut():
    lengths = np.arange(int(_MAX_PATH * _PATH_RESOLUTION) + 1) / _PATH_RESOLUTION
    lut = np.stack([shade(c, lengths) for c in SHADE_COLORS])
    lut.flags.writeable = False
    return lut


def _color_index(scenario: ScenarioConfig):
    """Object id -> row of SHADE_COLORS."""
    table = np.zeros(DISTRACTOR_BASE + len(scenario.distractors) + 1, dtype=np.intp)
    table[FLOOR], table[WALL], table[CEILING] = 0, 1, 2
    table[MIRROR] = 1
    table[EGO] = _PALETTE_INDEX[scenario.ego_color]
    for k, cube in enumerate(scenario.cubes):
        table[CUBE_BASE + k] = _PALETTE_INDEX[cube.color]
    for k in range(len(scenario.room.occluders)):
        table[OCCLUDER_BASE + k] = 1
    for k, spec in enumerate(scenario.distractors):
        table[DISTRACTOR_BASE + k] = _PALETTE_INDEX[spec.color]
    return table


@lru_cache(maxsize=8)
def _screen(cam: CameraSpec):
    # camera-space unit rays: forward, right and up components
    sx = ((np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0) * cam.tan_h
    sy = (1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0) * cam.tan_v
    fwd = 1.0 / np.sqrt(1.0 + sx[None, :] ** 2 + sy[:, None] ** 2)
    right = sx[None, :] * fwd
    up = sy[:, None] * fwd
    for a in (fwd, right, up):
        a.flags.writeable = False
    return fwd, right, up


def camera_basis(heading: int):
    fx, fy = heading_vector(heading)
    return (fx, fy, 0.0), (fy, -fx, 0.0)  # forward, right


def primary_directions(heading: int, cam: CameraSpec = DEFAULT_CAMERA):
    """Unit ray directions for every pixel, each shaped (H, W)."""
    fwd, right, up = _screen(cam)
    (fx, fy, _), (rx, ry, _) = camera_basis(heading)
    dx = fwd * fx
    dx += right * rx
    dy = fwd * fy
    dy += right * ry
    return dx, dy, up


def _screen_rect(corners, eye, heading, cam: CameraSpec):
    """Pixel bounding rectangle of a convex object given its bounding-box corners."""
    full = (slice(0, cam.height), slice(0, cam.width))
    (fx, fy, _), (rx, ry, _) = camera_basis(heading)
    vx = corners[:, 0] - eye[0]
    vy = corners[:, 1] - eye[1]
    vz = corners[:, 2] - eye[2]
    fwd = vx * fx + vy * fy
    if np.any(fwd <= 1e-6):
        return full if np.any(fwd > 0) else None
    px = (vx * rx + vy * ry) / fwd
    py = vz / fwd
    cols = (px / cam.tan_h + 1.0) * cam.width / 2 - 0.5
    rows = (1.0 - py / cam.tan_v) * cam.height / 2 - 0.5
    j0 = max(int(math.floor(cols.min())) - 1, 0)
    j1 = min(int(math.ceil(cols.max())) + 2, cam.width)
    i0 = max(int(math.floor(rows.min())) - 1, 0)
    i1 = min(int(math.ceil(rows.max())) + 2, cam.height)
    if j0 >= j1 or i0 >= i1:
        return None
    return (slice(i0, i1), slice(j0, j1))


def _reflect_corners(corners, mirror: MirrorSpec):
    out = corners.copy()
    out[:, mirror.axis] = 2.0 * mirror.plane - out[:, mirror.axis]
    return out


def _box_corners(lo, hi):
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def _nearest(t, ids, t_obj, obj_id, region=None):
    if region is None:
        closer = t_obj < t
        t[closer] = t_obj[closer]
        ids[closer] = obj_id
        return
    tv, iv = t[region], ids[region]
    closer = t_obj < tv
    np.copyto(tv, t_obj, where=closer)
    np.copyto(iv, np.int16(obj_id), where=closer)


def render_scene(state: WorldState, scenario: ScenarioConfig, cam: CameraSpec = DEFAULT_CAMERA) -> RenderResult:
    room = scenario.room
    mirror = room.mirror
    ex, ey, ez = state.ego.x, state.ego.y, cam.eye_height
    eye = (ex, ey, ez)
    dx, dy, dz = primary_directions(state.ego.heading, cam)
    boxes, bodies = _scene(state, scenario)

    t, ids = _room_exit(ex, ey, ez, dx, dy, dz, room)
    if mirror is not None:
        region = _screen_rect(_mirror_corners(mirror), eye, state.ego.heading, cam)
        if region is not None:
            hit = _mirror_hit(ex, ey, ez, dx[region], dy[region], dz[region], mirror)
            np.copyto(ids[region], np.int16(MIRROR), where=hit)
    z_hit = None

    for obj_id, lo, hi in boxes:
        region = _screen_rect(_box_corners(lo, hi), eye, state.ego.heading, cam)
        if region is None:
            continue
        _nearest(t, ids, _ray_box(ex, ey, ez, dx[region], dy[region], dz[region], lo, hi), obj_id, region)
    for body in bodies:
        lo = (body.x - BODY_RADIUS, body.y - BODY_RADIUS, 0.0)
        hi = (body.x + BODY_RADIUS, body.y + BODY_RADIUS, BODY_HEIGHT)
        region = _screen_rect(_box_corners(lo, hi), eye, state.ego.heading, cam)
        if region is None:
            continue
        t_b = _ray_cylinder(ex, ey, ez, dx[region], dy[region], dz[region], body.x, body.y,
                            BODY_RADIUS, BODY_HEIGHT)
        _nearest(t, ids, t_b, body.id, region)

    path = t
    bounced = np.zeros(ids.shape, dtype=bool)
    band_sel = None

    if mirror is not None:
        sel = np.nonzero(ids == MIRROR)
        if sel[0].size:
            bounced[sel] = True
            d1x, d1y, d1z, t1 = dx[sel], dy[sel], dz[sel], t[sel]
            ox, oy, oz = ex + t1 * d1x, ey + t1 * d1y, ez + t1 * d1z
            n = mirror.normal
            dot = d1x * n[0] + d1y * n[1]
            d2x, d2y, d2z = d1x - 2 * dot * n[0], d1y - 2 * dot * n[1], d1z
            t2, ids2 = _room_exit(ox, oy, oz, d2x, d2y, d2z, room)
            rows, cols = sel
            heading = state.ego.heading
            ego_body = _Body(EGO, ex, ey, PALETTE[scenario.ego_color])
            for obj_id, lo, hi, body in [(i, lo, hi, None) for i, lo, hi in boxes] + [
                (b.id, (b.x - BODY_RADIUS, b.y - BODY_RADIUS, 0.0), (b.x + BODY_RADIUS, b.y + BODY_RADIUS, BODY_HEIGHT), b)
                for b in bodies + [ego_body]
            ]:
                # a bounced ray can only hit an object inside the footprint of its mirror image
                region = _screen_rect(_reflect_corners(_box_corners(lo, hi), mirror), eye, heading, cam)
                if region is None:
                    continue
                k = np.nonzero((rows >= region[0].start) & (rows < region[0].stop)
                               & (cols >= region[1].start) & (cols < region[1].stop))[0]
                if not k.size:
                    continue
                if body is None:
                    t_o = _ray_box(ox[k], oy[k], oz[k], d2x[k], d2y[k], d2z[k], lo, hi)
                else:
                    t_o = _ray_cylinder(ox[k], oy[k], oz[k], d2x[k], d2y[k], d2z[k], body.x, body.y,
                                        BODY_RADIUS, BODY_HEIGHT)
                closer = t_o < t2[k]
                t2[k[closer]] = t_o[closer]
                ids2[k[closer]] = obj_id
            ids[sel] = ids2
            path[sel] = t1 + t2
            on_body = (ids2 >= DISTRACTOR_BASE) | (ids2 == EGO)
            if on_body.any():
                in_band = (oz + t2 * d2z)[on_body] >= BODY_HEIGHT - HEAD_BAND
                band_sel = (sel[0][on_body][in_band], sel[1][on_body][in_band])

    cidx = _color_index(scenario)[ids]
    direct_body = np.nonzero((ids >= DISTRACTOR_BASE) & ~bounced)
    if direct_body[0].size:
        z = ez + t[direct_body] * dz[direct_body]
        in_band = z >= BODY_HEIGHT - HEAD_BAND
        cidx[direct_body[0][in_band], direct_body[1][in_band]] += len(PALETTE)
    if band_sel is not None:
        cidx[band_sel] += len(PALETTE)

    q = np.rint(path * _PATH_RESOLUTION)
    np.minimum(q, _MAX_PATH * _PATH_RESOLUTION, out=q)
    pixels = _shade_lut()[cidx, q.astype(np.intp)]
    return RenderResult(Frame(pixels), ids, bounced)


def render_frame(state: WorldState, scenario: ScenarioConfig, cam: CameraSpec = DEFAULT_CAMERA) -> Frame:
    return render_scene(state, scenario, cam).frame


# --------------------------------------------------------------------------
# mirror-evidence visibility


def _segment_blocked(ox, oy, oz, dx, dy, dz, length, boxes, bodies):
    blocked = np.zeros(np.shape(dx), dtype=bool)
    for _, lo, hi in boxes:
        blocked |= _ray_box(ox, oy, oz, dx, dy, dz, lo, hi) < length
    for body in bodies:
        blocked |= _ray_cylinder(ox, oy, oz, dx, dy, dz, body.x, body.y, BODY_RADIUS, BODY_HEIGHT) < length
    return blocked


def reflected_silhouette(state: WorldState, mirror: MirrorSpec, k: int = VIS_SAMPLES) -> np.ndarray:
    """Grid of points on the part of the reflected body surface that faces the eye. Shape (k, 3).

    Columns run tangent to tangent across the visible arc, evenly spaced in
    projection, so the samples span the whole silhouette.  Most occluding
    edges are vertical, hence four times more columns than rows.
    """
    rows = max(1, int(round(math.sqrt(k / 4))))
    cols = k // rows
    bx, by, _ = reflect_point((state.ego.x, state.ego.y, 0.0), mirror)
    ux, uy = state.ego.x - bx, state.ego.y - by
    dist = math.hypot(ux, uy)
    ux, uy = ux / dist, uy / dist
    wx, wy = -uy, ux
    half_arc = math.acos(min(1.0, BODY_RADIUS / dist)) * (1 - 1e-6)
    phi = np.arcsin(np.linspace(-1.0, 1.0, cols) * math.sin(half_arc))
    z = np.linspace(0.0, BODY_HEIGHT, rows) * (1 - 1e-6) + 1e-6 * BODY_HEIGHT / 2
    pp, zz = np.meshgrid(phi, z, indexing="ij")
    pp = pp.ravel()
    px = bx + BODY_RADIUS * (np.cos(pp) * ux + np.sin(pp) * wx)
    py = by + BODY_RADIUS * (np.cos(pp) * uy + np.sin(pp) * wy)
    return np.stack([px, py, zz.ravel()], axis=1)


def ego_reflection_visibility(
    state: WorldState, scenario: ScenarioConfig, cam: CameraSpec = DEFAULT_CAMERA
) -> VisibilityReport:
    mirror = scenario.room.mirror
    if mirror is None:
        return VisibilityReport(0.0, False, 0)
    pts = reflected_silhouette(state, mirror)
    k = len(pts)
    ex, ey, ez = state.ego.x, state.ego.y, cam.eye_height
    vx, vy, vz = pts[:, 0] - ex, pts[:, 1] - ey, pts[:, 2] - ez
    dist = np.sqrt(vx * vx + vy * vy + vz * vz)
    dx, dy, dz = vx / dist, vy / dist, vz / dist

    (fx, fy, _), (rx, ry, _) = camera_basis(state.ego.heading)
    fwd = dx * fx + dy * fy
    with np.errstate(divide="ignore", invalid="ignore"):
        in_frustum = (fwd > 0) & (np.abs((dx * rx + dy * ry) / fwd) <= cam.tan_h) & (np.abs(dz / fwd) <= cam.tan_v)

    axis, plane = mirror.axis, mirror.plane
    o_axis = (ex, ey)[axis]
    d_axis = (dx, dy)[axis]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_m = (plane - o_axis) / d_axis
    mx, my, mz = ex + t_m * dx, ey + t_m * dy, ez + t_m * dz
    u = my if axis == 0 else mx
    through = (t_m > 0) & (t_m < dist) & (u >= mirror.u_min) & (u <= mirror.u_max) \
        & (mz >= mirror.z_min) & (mz <= mirror.z_min + mirror.height)

    boxes, bodies = _scene(state, scenario)
    first_leg = _segment_blocked(ex, ey, ez, dx, dy, dz, t_m, boxes, bodies)
    n = mirror.normal
    dot = dx * n[0] + dy * n[1]
    r_x, r_y, r_z = dx - 2 * dot * n[0], dy - 2 * dot * n[1], dz
    second_leg = _segment_blocked(mx, my, mz, r_x, r_y, r_z, dist - t_m, boxes, bodies)

    visible = in_frustum & through & ~first_leg & ~second_leg
    fraction = float(np.count_nonzero(visible)) / k
    return VisibilityReport(fraction, fraction >= VIS_THRESHOLD, k)
