"""Procedural 2.5D terrain: course generation, exteroceptive queries, binary export.

Terrain is a regular height grid (forward axis x, lateral axis y) plus a
structural edge list used by the reduced-order dynamics for climb checks.
Courses are corridors bounded by high side walls, with box obstacles whose
heights scale with a 10-level curriculum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

EDGE_THRESHOLD = 0.1  # min 8-neighbor height delta marking a cell as an edge
WALL_HEIGHT = 0.9     # corridor border walls, taller than max clearance intent
NOISE_LATTICE = 0.5   # coarse lattice pitch for smooth terrain noise, meters

HFLD_MAGIC = b"HFLD"
HFLD_VERSION = 1


@dataclass
class TerrainSpec:
    """Sampling ranges for procedural course generation."""

    stair_height_max: float = 0.65
    stairs_per_env: tuple[int, int] = (0, 6)
    stair_width: tuple[float, float] = (0.8, 3.0)
    stair_length: tuple[float, float] = (1.5, 2.0)
    goal_y_range: tuple[float, float] = (-0.1, 0.1)
    noise_amplitude: tuple[float, float] = (0.02, 0.06)
    friction_range: tuple[float, float] = (0.2, 2.0)
    n_levels: int = 10
    cell_size: float = 0.05
    env_length: float = 14.0
    env_width: float = 3.6

    def __post_init__(self):
        if self.n_levels != 10:
            raise ValueError("n_levels is fixed at 10")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")


@dataclass
class Box:
    """Axis-aligned raised block: [x0,x1] x [y0,y1] at height h above ground."""

    x0: float
    x1: float
    y0: float
    y1: float
    h: float


@dataclass
class HeightField:
    """Generated course: grids, waypoints, goal and structural climb edges.

    ``edges`` rows are (axis, coord, lo, hi, dz): crossing the plane
    ``axis``= coord (axis 0: x-plane, axis 1: y-plane) in the +axis direction
    while the other coordinate lies in [lo, hi] changes ground height by dz.
    """

    heights: np.ndarray
    friction: np.ndarray
    waypoints: list[tuple[float, float]]
    goal: tuple[float, float]
    total_length: float
    edge_mask: np.ndarray
    cell_size: float
    spawn: tuple[float, float]
    edges: np.ndarray
    boxes: list[Box] = field(default_factory=list)
    interior_y: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def x_max(self) -> float:
        return (self.heights.shape[0] - 1) * self.cell_size

    @property
    def y_max(self) -> float:
        return (self.heights.shape[1] - 1) * self.cell_size


@dataclass
class DepthImage:
    """Range-clipped depth frame from the front camera."""

    pixels: np.ndarray
    timestamp: float


@dataclass
class CameraConfig:
    """Front camera mount: top-front of the base, pitched down."""

    forward: float = 0.15
    height: float = 0.35
    mount_pitch_deg: float = 30.0
    fov_deg: float = 70.0
    res: int = 64
    clip_near: float = 0.05
    clip_far: float = 3.0


def heights_at(heights: np.ndarray, cell: float, x, y):
    """Bilinear terrain height lookup, clamped to the grid border.

    Accepts scalars or arrays; broadcasting follows numpy rules.
    """
    rows, cols = heights.shape[-2], heights.shape[-1]
    fx = np.clip(np.asarray(x, dtype=np.float64) / cell, 0.0, rows - 1 - 1e-9)
    fy = np.clip(np.asarray(y, dtype=np.float64) / cell, 0.0, cols - 1 - 1e-9)
    i0 = fx.astype(np.int64)
    j0 = fy.astype(np.int64)
    ax = fx - i0
    ay = fy - j0
    if heights.ndim == 2:
        h00 = heights[i0, j0]
        h10 = heights[i0 + 1, j0]
        h01 = heights[i0, j0 + 1]
        h11 = heights[i0 + 1, j0 + 1]
    else:
        # leading env axis: x/y carry matching leading index arrays
        env = np.arange(heights.shape[0]).reshape((-1,) + (1,) * (i0.ndim - 1))
        h00 = heights[env, i0, j0]
        h10 = heights[env, i0 + 1, j0]
        h01 = heights[env, i0, j0 + 1]
        h11 = heights[env, i0 + 1, j0 + 1]
    return (
        h00 * (1 - ax) * (1 - ay)
        + h10 * ax * (1 - ay)
        + h01 * (1 - ax) * ay
        + h11 * ax * ay
    )


def compute_edge_mask(heights: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    """Cells whose max height difference to any 8-neighbor exceeds threshold."""
    padded = np.pad(heights, 1, mode="edge")
    diff = np.zeros_like(heights)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbor = padded[1 + di : 1 + di + heights.shape[0], 1 + dj : 1 + dj + heights.shape[1]]
            diff = np.maximum(diff, np.abs(heights - neighbor))
    return diff > threshold


def _smooth_noise(rng: np.random.Generator, rows: int, cols: int, cell: float, amplitude: float) -> np.ndarray:
    """Low-frequency height noise: coarse uniform lattice, bilinear upsample."""
    stride = max(2, int(round(NOISE_LATTICE / cell)))
    cr = rows // stride + 2
    cc = cols // stride + 2
    coarse = rng.uniform(-amplitude, amplitude, size=(cr, cc))
    xi = np.arange(rows) / stride
    yi = np.arange(cols) / stride
    i0 = xi.astype(int)
    j0 = yi.astype(int)
    ax = (xi - i0)[:, None]
    ay = (yi - j0)[None, :]
    i0 = i0[:, None]
    j0 = j0[None, :]
    return (
        coarse[i0, j0] * (1 - ax) * (1 - ay)
        + coarse[i0 + 1, j0] * ax * (1 - ay)
        + coarse[i0, j0 + 1] * (1 - ax) * ay
        + coarse[i0 + 1, j0 + 1] * ax * ay
    )


def build_course(
    spec: TerrainSpec,
    boxes: list[Box],
    noise_amp: float,
    friction: float,
    goal_y_off: float,
    rng: np.random.Generator,
) -> HeightField:
    """Assemble a corridor course from explicit obstacle boxes.

    Shared by curriculum generation and the fixed eval courses. Side and end
    walls bound the corridor; waypoints go at the start, before and after each
    box, and at the goal.
    """
    cell = spec.cell_size
    rows = int(round(spec.env_length / cell)) + 1
    cols = int(round(spec.env_width / cell)) + 1
    wall = 0.3
    y_lo, y_hi = wall, spec.env_width - wall
    yc = 0.5 * (y_lo + y_hi)
    spawn = (1.0, yc)
    goal_x = spec.env_length - 1.0
    goal = (goal_x, yc + goal_y_off)

    heights = _smooth_noise(rng, rows, cols, cell, noise_amp)
    xs = np.arange(rows) * cell
    ys = np.arange(cols) * cell

    edges = [
        (1, y_lo, 0.0, spec.env_length, -WALL_HEIGHT),
        (1, y_hi, 0.0, spec.env_length, WALL_HEIGHT),
        (0, wall, 0.0, spec.env_width, -WALL_HEIGHT),
        (0, spec.env_length - wall, 0.0, spec.env_width, WALL_HEIGHT),
    ]
    heights[:, ys <= y_lo] += WALL_HEIGHT
    heights[:, ys >= y_hi] += WALL_HEIGHT
    heights[xs <= wall, :] += WALL_HEIGHT
    heights[xs >= spec.env_length - wall, :] += WALL_HEIGHT

    waypoints = [(spawn[0] + 0.8, yc)]
    for b in boxes:
        sel = (xs[:, None] >= b.x0) & (xs[:, None] < b.x1) & (ys[None, :] >= b.y0) & (ys[None, :] < b.y1)
        heights[sel] += b.h
        my = 0.5 * (b.y0 + b.y1)
        edges.append((0, b.x0, b.y0, b.y1, b.h))
        edges.append((0, b.x1, b.y0, b.y1, -b.h))
        edges.append((1, b.y0, b.x0, b.x1, b.h))
        edges.append((1, b.y1, b.x0, b.x1, -b.h))
        waypoints.append((b.x0 - 0.6, my))
        waypoints.append((b.x1 + 0.6, my))
    waypoints.append(goal)

    # enforce strictly increasing forward coordinates
    waypoints.sort(key=lambda w: w[0])
    cleaned: list[tuple[float, float]] = []
    for w in waypoints:
        if cleaned and w[0] - cleaned[-1][0] < 0.2:
            continue
        cleaned.append(w)
    if cleaned[-1] != goal:
        cleaned.append(goal)

    fric = np.clip(
        friction + _smooth_noise(rng, rows, cols, cell, 0.1),
        spec.friction_range[0],
        spec.friction_range[1],
    )
    return HeightField(
        heights=heights.astype(np.float32),
        friction=fric.astype(np.float32),
        waypoints=cleaned,
        goal=goal,
        total_length=goal_x - spawn[0],
        edge_mask=compute_edge_mask(heights),
        cell_size=cell,
        spawn=spawn,
        edges=np.array(edges, dtype=np.float64).reshape(-1, 5),
        boxes=boxes,
        interior_y=(y_lo, y_hi),
    )


def generate_terrain(spec: TerrainSpec, level: int, seed: int) -> HeightField:
    """Generate one course at the given curriculum level.

    Box heights are uniform in [0, stair_height_max*(level+1)/10]; count,
    tread length, width, noise and friction are sampled from the spec ranges.
    Pure function of (spec, level, seed).
    """
    if not 0 <= level <= spec.n_levels - 1:
        raise ValueError(f"level must be in [0, {spec.n_levels - 1}], got {level}")
    # level scales heights only; the draw stream is level-independent so that
    # difficulty is monotone in level for a fixed seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF1E1D]))
    cap = spec.stair_height_max * (level + 1) / spec.n_levels

    # draw the full complement up front so difficulty is monotone in level
    unit_heights = rng.random(spec.stairs_per_env[1])
    lengths = rng.uniform(*spec.stair_length, size=spec.stairs_per_env[1])
    widths = rng.uniform(*spec.stair_width, size=spec.stairs_per_env[1])
    gaps = rng.uniform(0.6, 1.4, size=spec.stairs_per_env[1])
    count = int(rng.integers(spec.stairs_per_env[0], spec.stairs_per_env[1] + 1))
    noise_amp = rng.uniform(*spec.noise_amplitude)
    friction = rng.uniform(*spec.friction_range)
    goal_y = rng.uniform(*spec.goal_y_range)

    wall = 0.3
    y_lo, y_hi = wall, spec.env_width - wall
    corridor = y_hi - y_lo
    region_end = spec.env_length - 2.5
    cursor = 3.0 + rng.uniform(0.0, 0.5)
    boxes = []
    for k in range(count):
        if cursor + lengths[k] > region_end:
            break  # course full: realized count <= sampled count
        w = min(widths[k], corridor)
        slack = corridor - w
        y0 = y_lo + rng.uniform(0.0, 1.0) * slack
        boxes.append(Box(cursor, cursor + lengths[k], y0, y0 + w, unit_heights[k] * cap))
        cursor += lengths[k] + gaps[k]

    return build_course(spec, boxes, noise_amp, friction, goal_y, rng)


def build_room(
    length: float,
    width: float,
    platform: Box | None,
    cell: float = 0.05,
    seed: int = 0,
    noise_amp: float = 0.0,
) -> HeightField:
    """Flat room bounded by walls, optionally with one raised platform.

    Used by mission scenarios (furniture modeled as a box) and the FSM
    closed-loop property tests.
    """
    spec = TerrainSpec(env_length=length, env_width=width, cell_size=cell)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB00]))
    boxes = [platform] if platform is not None else []
    hf = build_course(spec, boxes, noise_amp, 1.0, 0.0, rng)
    hf.waypoints = []
    return hf


def sample_scandots(hf: HeightField, base_xy, yaw) -> np.ndarray:
    """Privileged terrain heights on a 17x11 body-frame grid.

    Forward span [-0.3, +1.3] m, lateral span [-0.5, +0.5] m, 0.1 m pitch,
    bilinear interpolation, each sample minus the ground height under the
    base. Supports batched input: base_xy [N,2], yaw [N] -> [N,187].
    """
    base_xy = np.asarray(base_xy, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    single = base_xy.ndim == 1
    if single:
        base_xy = base_xy[None]
        yaw = yaw.reshape(1)
    fx = np.linspace(-0.3, 1.3, 17)
    ly = np.linspace(-0.5, 0.5, 11)
    gx, gy = np.meshgrid(fx, ly, indexing="ij")
    offs = np.stack([gx.ravel(), gy.ravel()], axis=-1)  # [187,2]
    c, s = np.cos(yaw), np.sin(yaw)
    wx = base_xy[:, 0:1] + offs[None, :, 0] * c[:, None] - offs[None, :, 1] * s[:, None]
    wy = base_xy[:, 1:2] + offs[None, :, 0] * s[:, None] + offs[None, :, 1] * c[:, None]
    dots = heights_at(hf.heights, hf.cell_size, wx, wy)
    ground = heights_at(hf.heights, hf.cell_size, base_xy[:, 0], base_xy[:, 1])
    out = dots - ground[:, None]
    return out[0] if single else out


def camera_rays(cam: CameraConfig) -> np.ndarray:
    """Unit ray directions in the camera frame (x fwd, y left, z up), [res*res, 3].

    Row 0 is the top of the image; pixel centers span the square FOV.
    """
    half = np.deg2rad(cam.fov_deg) / 2
    r = (np.arange(cam.res) + 0.5) / cam.res
    elev = half - r * 2 * half           # top row looks up
    azim = -half + r * 2 * half          # left column looks left... (see below)
    az, el = np.meshgrid(-azim, elev)    # image col 0 = leftmost = +azimuth (y left)
    ce = np.cos(el)
    d = np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)
    return d.reshape(-1, 3)


def render_depth_batch(
    heights: np.ndarray,
    cell: float,
    pos: np.ndarray,
    yaw: np.ndarray,
    pitch: np.ndarray,
    cam: CameraConfig,
    t: float = 0.0,
    coarse_step: float = 0.04,
    refine_iters: int = 8,
    mount_deg=None,
    fwd_off=None,
    ht_off=None,
) -> np.ndarray:
    """Ray-march depth for N robots at once -> [N, res, res] float32.

    Coarse fixed-step march followed by bisection refinement against the
    bilinear surface. Rays that never dip under the terrain within clip_far
    return clip_far. mount_deg/fwd_off/ht_off optionally override the mount
    per robot (camera randomization).
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    yaw = np.atleast_1d(np.asarray(yaw, dtype=np.float64))
    pitch = np.atleast_1d(np.asarray(pitch, dtype=np.float64))
    n = pos.shape[0]
    rays = camera_rays(cam)  # [P,3]
    mount = np.deg2rad(cam.mount_pitch_deg if mount_deg is None else np.asarray(mount_deg, dtype=np.float64))
    cam_fwd = cam.forward if fwd_off is None else cam.forward + np.asarray(fwd_off, dtype=np.float64)
    cam_ht = cam.height if ht_off is None else cam.height + np.asarray(ht_off, dtype=np.float64)
    theta = pitch - mount  # net camera pitch (+ up)
    ct, st = np.cos(theta), np.sin(theta)
    cy, sy = np.cos(yaw), np.sin(yaw)
    # camera frame -> world: pitch about y-left, then yaw about z
    dx = rays[None, :, 0] * ct[:, None] - rays[None, :, 2] * st[:, None]
    dz = rays[None, :, 0] * st[:, None] + rays[None, :, 2] * ct[:, None]
    dy = np.broadcast_to(rays[None, :, 1], dx.shape).copy()
    wx = dx * cy[:, None] - dy * sy[:, None]
    wy = dx * sy[:, None] + dy * cy[:, None]
    wz = dz
    # camera origin: base + forward along pitched body x + height along pitched body z
    bx = np.cos(pitch) * cy
    by = np.cos(pitch) * sy
    bz = np.sin(pitch)
    ux = -np.sin(pitch) * cy
    uy = -np.sin(pitch) * sy
    uz = np.cos(pitch)
    ox = pos[:, 0] + cam_fwd * bx + cam_ht * ux
    oy = pos[:, 1] + cam_fwd * by + cam_ht * uy
    oz = pos[:, 2] + cam_fwd * bz + cam_ht * uz

    ts = np.arange(cam.clip_near, cam.clip_far + coarse_step, coarse_step)
    hit_t = np.full((n, rays.shape[0]), cam.clip_far, dtype=np.float64)
    lo = np.full_like(hit_t, cam.clip_near)
    hi = np.full_like(hit_t, cam.clip_far)
    found = np.zeros(hit_t.shape, dtype=bool)
    prev_t = np.full_like(hit_t, cam.clip_near)
    if heights.ndim == 2:
        hgrid = heights[None]
        env_of = np.zeros(n, dtype=np.int64)
    else:
        hgrid = heights
        env_of = np.arange(n)
    for tv in ts:
        px = ox[:, None] + wx * tv
        py = oy[:, None] + wy * tv
        pz = oz[:, None] + wz * tv
        hterr = heights_at(hgrid, cell, px, py) if hgrid.shape[0] > 1 else heights_at(hgrid[0], cell, px, py)
        under = (pz <= hterr) & ~found
        lo[under] = prev_t[under]
        hi[under] = tv
        found |= under
        prev_t = np.where(found, prev_t, tv)
        if found.all():
            break
    for _ in range(refine_iters):
        mid = 0.5 * (lo + hi)
        px = ox[:, None] + wx * mid
        py = oy[:, None] + wy * mid
        pz = oz[:, None] + wz * mid
        hterr = heights_at(hgrid, cell, px, py) if hgrid.shape[0] > 1 else heights_at(hgrid[0], cell, px, py)
        under = pz <= hterr
        hi = np.where(under & found, mid, hi)
        lo = np.where(~under & found, mid, lo)
    hit_t = np.where(found, 0.5 * (lo + hi), cam.clip_far)
    out = np.clip(hit_t, cam.clip_near, cam.clip_far).astype(np.float32)
    return out.reshape(n, cam.res, cam.res)


def render_depth(hf: HeightField, robot_state, cam: CameraConfig | None = None) -> DepthImage:
    """Single-robot depth render at the robot's current pose."""
    cam = cam or CameraConfig()
    px = render_depth_batch(
        hf.heights,
        hf.cell_size,
        np.array([robot_state.position]),
        np.array([robot_state.yaw]),
        np.array([robot_state.pitch]),
        cam,
    )[0]
    return DepthImage(pixels=px, timestamp=robot_state.time)


def feet_on_edge(hf: HeightField, feet_positions: np.ndarray, contacts: np.ndarray) -> np.ndarray:
    """Flags feet standing on edge-mask cells; airborne feet are never flagged."""
    feet = np.asarray(feet_positions, dtype=np.float64).reshape(-1, feet_positions.shape[-1])
    i = np.clip((feet[:, 0] / hf.cell_size + 0.5).astype(int), 0, hf.heights.shape[0] - 1)
    j = np.clip((feet[:, 1] / hf.cell_size + 0.5).astype(int), 0, hf.heights.shape[1] - 1)
    flags = hf.edge_mask[i, j] & np.asarray(contacts, dtype=bool).ravel()
    return flags.reshape(np.asarray(contacts).shape)


def export_hfld(hf: HeightField) -> bytes:
    """Serialize grids to the HFLD wire blob (shipped once per episode)."""
    rows, cols = hf.heights.shape
    head = HFLD_MAGIC + struct.pack("<IIIf", HFLD_VERSION, rows, cols, hf.cell_size)
    body = hf.heights.astype("<f4").tobytes() + hf.friction.astype("<f4").tobytes()
    return head + body


def parse_hfld(blob: bytes) -> tuple[np.ndarray, np.ndarray, float]:
    """Inverse of export_hfld; raises ValueError on malformed input."""
    if blob[:4] != HFLD_MAGIC:
        raise ValueError("bad magic")
    version, rows, cols, cell = struct.unpack("<IIIf", blob[4:20])
    if version != HFLD_VERSION:
        raise ValueError(f"unsupported version {version}")
    expect = 20 + 2 * rows * cols * 4
    if len(blob) != expect:
        raise ValueError("truncated HFLD blob")
    h = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=20).reshape(rows, cols)
    f = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=20 + rows * cols * 4).reshape(rows, cols)
    return h.copy(), f.copy(), float(cell)
