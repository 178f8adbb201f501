"""Reduced-order quadruped model.

Joint proxies run a PD loop at 500 Hz; body motion follows first-order lags
toward intents decoded linearly from the joint targets (forward speed, yaw
rate, pitch rate, clearance height). Step edges are crossed only when the
clearance intent matches the rise and the body is pitched into the move,
otherwise forward progress is blocked and a stumble is latched.

The batched ``Sim`` steps N robots at once (one terrain each); the
module-level ``step``/``apply_push``/``check_termination`` functions are the
single-robot surface over the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domainrand import DynRand
from .heightfield import HeightField, heights_at

PHYSICS_DT = 0.002
CONTROL_DECIMATION = 10          # action held for 10 physics steps (50 Hz control)
CONTROL_DT = PHYSICS_DT * CONTROL_DECIMATION

KP = 20.0
KD = 0.5
JOINT_INERTIA = 0.00625          # Kd^2/(2 Kp): near-critically damped proxies

VEL_LAG_T = 0.15                 # body velocity first-order lag, seconds
PITCH_RATE_LAG_T = 0.10
PITCH_RELAX_T = 2.0              # slow relaxation toward the com-bias equilibrium
Z_LAG_T = 0.08
MAX_VZ = 3.0

STAND_HEIGHT = 0.30
MASS = 15.0
GRAVITY = 9.81

ACTION_CLIP = 1.5
A_DEFAULT = np.zeros(12)
HIP_IDX = np.array([0, 3, 6, 9])
THIGH_IDX = np.array([1, 4, 7, 10])
CALF_IDX = np.array([2, 5, 8, 11])

# fixed 4x12 decoder from joint-target deviations to body intents:
# rows = (forward speed m/s, yaw rate rad/s, pitch rate rad/s, clearance m)
GAIT_DECODER = np.zeros((4, 12))
GAIT_DECODER[0, THIGH_IDX] = 0.25
GAIT_DECODER[1, HIP_IDX] = [1.0, -1.0, 1.0, -1.0]
GAIT_DECODER[2, THIGH_IDX] = [0.5, 0.5, -0.5, -0.5]
GAIT_DECODER[3, CALF_IDX] = 0.25
GAIT_DECODER.setflags(write=False)
GAIT_DECODER_PINV = np.linalg.pinv(GAIT_DECODER)
GAIT_DECODER_PINV.setflags(write=False)

INTENT_LO = np.array([-0.5, -2.0, -2.0, 0.0])
INTENT_HI = np.array([1.5, 2.0, 2.0, 0.8])

CLEARANCE_TOL = 0.05             # |clearance - rise| window for a successful climb
PITCH_REQ = 0.25                 # required pitch = PITCH_REQ * (|rise| / 0.65), into the move
H_FREE = 0.05                    # rises below this are plain walking
REARM_DIST = 0.3                 # back off this far before a blocked edge re-evaluates

FEET_OFFSETS = np.array([[0.19, 0.13], [0.19, -0.13], [-0.19, 0.13], [-0.19, -0.13]])
FOOT_CONTACT_TOL = 0.05

MOUTH_OFFSET = np.array([0.25, 0.0, -0.05])  # gripper root in body frame


def mouth_world(pos, yaw, pitch):
    """World position of the gripper root for given base pose(s)."""
    pos = np.asarray(pos, dtype=float)
    yaw = np.asarray(yaw, dtype=float)
    pitch = np.asarray(pitch, dtype=float)
    cy, sy, cp, sp = np.cos(yaw), np.sin(yaw), np.cos(pitch), np.sin(pitch)
    bx = np.stack([cp * cy, cp * sy, sp], axis=-1)
    bz = np.stack([-sp * cy, -sp * sy, cp], axis=-1)
    return pos + MOUTH_OFFSET[0] * bx + MOUTH_OFFSET[2] * bz

GRIPPER_OPEN, GRIPPER_CLOSED, GRIPPER_HOLDING = 0, 1, 2
GRIPPER_NAMES = ("open", "closed", "holding")


@dataclass
class Action:
    """Policy output: 12 joint position targets about the nominal pose."""

    joint_targets: np.ndarray

    def clipped(self) -> np.ndarray:
        return np.clip(self.joint_targets, -ACTION_CLIP, ACTION_CLIP)


@dataclass
class RobotState:
    """Single-robot snapshot of the reduced-order state."""

    position: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.8, STAND_HEIGHT]))
    yaw: float = 0.0
    pitch: float = 0.0
    base_lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v_z: float = 0.0
    omega_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega_z: float = 0.0
    q: np.ndarray = field(default_factory=lambda: np.zeros(12))
    q_dot: np.ndarray = field(default_factory=lambda: np.zeros(12))
    tau: np.ndarray = field(default_factory=lambda: np.zeros(12))
    feet_contact_force: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    feet_pos: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))
    feet_contact: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=bool))
    gripper: str = "open"
    time: float = 0.0
    stumble: bool = False


class EpisodeConfig:
    timeout: float = 20.0
    fall_pitch: float = 1.0
    fall_depth: float = 0.1
    goal_radius: float = 0.3


def _pad_edges(hfs: list[HeightField]) -> np.ndarray:
    emax = max(hf.edges.shape[0] for hf in hfs)
    out = np.zeros((len(hfs), emax, 5))
    out[:, :, 0] = -1.0  # axis -1 marks padding
    for i, hf in enumerate(hfs):
        out[i, : hf.edges.shape[0]] = hf.edges
    return out


class Sim:
    """Vectorized simulation of N robots, one heightfield each."""

    def __init__(self, hfs: list[HeightField], rand: DynRand | list[DynRand] | None = None):
        self.n = len(hfs)
        self.set_terrains(hfs)
        n = self.n
        self.pos = np.zeros((n, 3))
        self.yaw = np.zeros(n)
        self.pitch = np.zeros(n)
        self.lin_vel = np.zeros((n, 2))
        self.v_z = np.zeros(n)
        self.v_z_push = np.zeros(n)
        self.omega_p = np.zeros(n)
        self.omega_z = np.zeros(n)
        self.q = np.zeros((n, 12))
        self.qd = np.zeros((n, 12))
        self.tau = np.zeros((n, 12))
        self.time = np.zeros(n)
        self.gripper = np.zeros(n, dtype=np.int64)
        self.prev_action = np.zeros((n, 12))
        self.cur_action = np.zeros((n, 12))
        self.block_axis = np.full(n, -1, dtype=np.int64)
        self.block_coord = np.zeros(n)
        self.blocked_now = np.zeros(n, dtype=bool)
        self.stumble_latch = np.zeros(n, dtype=bool)
        self.last_intents = np.zeros((n, 4))
        self.set_rand(rand)
        for i, hf in enumerate(hfs):
            self.pos[i] = [hf.spawn[0], hf.spawn[1], STAND_HEIGHT]
        self.pos[:, 2] += heights_at(self.heights, self.cell, self.pos[:, 0], self.pos[:, 1]) - STAND_HEIGHT + STAND_HEIGHT
        self._refresh_ground()

    def set_terrains(self, hfs: list[HeightField]):
        self.hfs = hfs
        self.cell = hfs[0].cell_size
        self.heights = np.stack([hf.heights for hf in hfs]).astype(np.float64)
        self.friction = np.stack([hf.friction for hf in hfs]).astype(np.float64)
        self.edges = _pad_edges(hfs)

    def set_terrain(self, i: int, hf: HeightField):
        self.hfs[i] = hf
        if hf.heights.shape != self.heights.shape[1:]:
            raise ValueError("terrain grids must share one shape per Sim")
        self.heights[i] = hf.heights
        self.friction[i] = hf.friction
        emax = self.edges.shape[1]
        if hf.edges.shape[0] > emax:
            self.edges = _pad_edges(self.hfs)
        else:
            self.edges[i, :, 0] = -1.0
            self.edges[i, : hf.edges.shape[0]] = hf.edges

    def set_rand(self, rand: DynRand | list[DynRand] | None):
        if rand is None:
            rand = DynRand()
        rands = [rand] * self.n if isinstance(rand, DynRand) else list(rand)
        self.motor_strength = np.array([r.motor_strength for r in rands])
        self.delay_substeps = np.array(
            [int(round(r.action_delay / PHYSICS_DT)) for r in rands], dtype=np.int64
        )
        self.lag_t = VEL_LAG_T * (1.0 + np.array([r.added_mass for r in rands]) / 3.0 * 0.3)
        self.pitch_bias = np.array([r.added_com for r in rands]) * 0.15

    def reset_envs(self, mask: np.ndarray, yaw_jitter: np.ndarray | None = None):
        idx = np.flatnonzero(mask)
        for i in idx:
            hf = self.hfs[i]
            self.pos[i, :2] = hf.spawn
            g = heights_at(self.heights[i], self.cell, hf.spawn[0], hf.spawn[1])
            self.pos[i, 2] = g + STAND_HEIGHT
            self.yaw[i] = 0.0 if yaw_jitter is None else yaw_jitter[i]
        self.pitch[idx] = 0.0
        self.lin_vel[idx] = 0.0
        self.v_z[idx] = 0.0
        self.v_z_push[idx] = 0.0
        self.omega_p[idx] = 0.0
        self.omega_z[idx] = 0.0
        self.q[idx] = 0.0
        self.qd[idx] = 0.0
        self.tau[idx] = 0.0
        self.time[idx] = 0.0
        self.gripper[idx] = GRIPPER_OPEN
        self.prev_action[idx] = 0.0
        self.cur_action[idx] = 0.0
        self.block_axis[idx] = -1
        self.blocked_now[idx] = False
        self.stumble_latch[idx] = False

    def _refresh_ground(self):
        self.ground = heights_at(self.heights, self.cell, self.pos[:, 0], self.pos[:, 1])

    def ground_at(self, x, y):
        return heights_at(self.heights, self.cell, x, y)

    def apply_push(self, delta_xy: np.ndarray, delta_z: np.ndarray):
        delta_xy = np.atleast_2d(delta_xy)
        delta_z = np.atleast_1d(delta_z)
        if (np.linalg.norm(delta_xy, axis=-1) > 0.5 + 1e-9).any() or (np.abs(delta_z) > 0.5 + 1e-9).any():
            raise ValueError("push exceeds the 0.5 m/s caps")
        self.lin_vel += delta_xy
        self.v_z_push += delta_z

    def step_control(self, actions: np.ndarray) -> dict:
        """Advance one control period (10 physics substeps) with held actions.

        Returns per-env event flags consumed by the reward pass.
        """
        if np.isnan(actions).any():
            raise FloatingPointError("NaN action")
        self.prev_action = self.cur_action
        self.cur_action = np.clip(actions, -ACTION_CLIP, ACTION_CLIP)
        self.stumble_latch[:] = False
        prev_qd = self.qd.copy()
        self.prev_tau = self.tau.copy()
        for k in range(CONTROL_DECIMATION):
            a_eff = np.where((k >= self.delay_substeps)[:, None], self.cur_action, self.prev_action)
            self._substep(a_eff)
        info = {
            "stumble": self.stumble_latch.copy(),
            "blocked": self.blocked_now.copy(),
            "prev_qd": prev_qd,
            "prev_tau": self.prev_tau,
        }
        return info

    def _substep(self, a_eff: np.ndarray):
        dt = PHYSICS_DT
        # joint proxies: PD torque, semi-implicit integration
        self.tau = self.motor_strength[:, None] * (KP * (a_eff - self.q) - KD * self.qd)
        self.qd = self.qd + (self.tau / JOINT_INERTIA) * dt
        self.q = self.q + self.qd * dt

        u = (a_eff - A_DEFAULT) @ GAIT_DECODER.T
        u = np.clip(u, INTENT_LO, INTENT_HI)
        self.last_intents = u

        self._refresh_ground()
        mu = heights_at(self.friction, self.cell, self.pos[:, 0], self.pos[:, 1])
        traction = np.minimum(mu, 1.0)
        target = u[:, 0:1] * np.stack([np.cos(self.yaw), np.sin(self.yaw)], axis=1)
        self.lin_vel = self.lin_vel + (dt / self.lag_t)[:, None] * traction[:, None] * (target - self.lin_vel)
        self.omega_z = self.omega_z + (dt / VEL_LAG_T) * (u[:, 1] - self.omega_z)
        self.yaw = self.yaw + self.omega_z * dt
        self.omega_p = self.omega_p + (dt / PITCH_RATE_LAG_T) * (u[:, 2] - self.omega_p)
        self.pitch = self.pitch + self.omega_p * dt + (dt / PITCH_RELAX_T) * (self.pitch_bias - self.pitch)
        self.pitch = np.clip(self.pitch, -np.pi / 2, np.pi / 2)

        proposed = self.pos[:, :2] + self.lin_vel * dt
        self._resolve_edges(proposed, u)

        self._refresh_ground()
        # pitching crouches the stance so the mouth gripper can reach low objects
        z_target = self.ground + STAND_HEIGHT * np.cos(self.pitch) ** 2
        v_track = np.clip((z_target - self.pos[:, 2]) / Z_LAG_T, -MAX_VZ, MAX_VZ)
        self.v_z = v_track + self.v_z_push
        self.pos[:, 2] += self.v_z * dt
        self.v_z_push *= np.exp(-dt / 0.1)
        self.time += dt

    def _resolve_edges(self, proposed: np.ndarray, u: np.ndarray):
        axis = self.edges[:, :, 0]
        coord = self.edges[:, :, 1]
        lo = self.edges[:, :, 2]
        hi = self.edges[:, :, 3]
        dz = self.edges[:, :, 4]
        cur = self.pos[:, :2]
        blocked_any = np.zeros(self.n, dtype=bool)

        for ax in (0, 1):
            p0 = cur[:, ax][:, None]
            p1 = proposed[:, ax][:, None]
            other = proposed[:, 1 - ax][:, None]
            crossing = (
                (axis == ax)
                & ((p0 - coord) * (p1 - coord) < 0)
                & (other >= lo)
                & (other <= hi)
            )
            if not crossing.any():
                continue
            direction = np.sign(p1 - p0)
            rise = dz * direction
            needs_rule = crossing & (np.abs(rise) > H_FREE)
            free = crossing & ~needs_rule
            del free  # free crossings need no action
            if not needs_rule.any():
                continue
            clear = u[:, 3][:, None]
            pitch = self.pitch[:, None]
            req = PITCH_REQ * (np.abs(rise) / 0.65)
            pitch_ok = np.where(rise > 0, pitch >= req, pitch <= -req)
            clear_ok = np.abs(clear - np.abs(rise)) <= CLEARANCE_TOL
            # a previously failed edge stays failed until the robot backs off
            locked = (
                (self.block_axis[:, None] == ax)
                & (np.abs(self.block_coord[:, None] - coord) < 1e-9)
            )
            passed = needs_rule & clear_ok & pitch_ok & ~locked
            failed = needs_rule & ~passed

            # successful up-crossings pop the base onto the new level
            up = passed & (rise > 0)
            if up.any():
                env, eidx = np.nonzero(up)
                self.pos[env, 2] += rise[env, eidx]

            if failed.any():
                env = np.unique(np.nonzero(failed)[0])
                for i in env:
                    e = np.nonzero(failed[i])[0][0]
                    c = coord[i, e]
                    side = np.sign(self.pos[i, ax] - c)
                    proposed[i, ax] = c + side * 0.02
                    vel_ax = self.lin_vel[i, ax]
                    if np.sign(vel_ax) == -side:
                        self.lin_vel[i, ax] = 0.0
                    if not (self.block_axis[i] == ax and abs(self.block_coord[i] - c) < 1e-9):
                        self.stumble_latch[i] = True
                    self.block_axis[i] = ax
                    self.block_coord[i] = c
                blocked_any |= failed.any(axis=1)

        self.pos[:, :2] = proposed

        # re-arm blocked edges once the robot has backed away
        armed = self.block_axis >= 0
        if armed.any():
            d = np.abs(
                np.where(self.block_axis == 0, self.pos[:, 0], self.pos[:, 1]) - self.block_coord
            )
            clearaway = armed & (d > REARM_DIST)
            self.block_axis[clearaway] = -1
        # pressing = still shoved against a blocked edge with forward intent
        pressing = np.zeros(self.n, dtype=bool)
        still = self.block_axis >= 0
        if still.any():
            d = np.abs(
                np.where(self.block_axis == 0, self.pos[:, 0], self.pos[:, 1]) - self.block_coord
            )
            heading = np.stack([np.cos(self.yaw), np.sin(self.yaw)], axis=1)
            ax_dir = np.where(self.block_axis == 0, heading[:, 0], heading[:, 1])
            toward = np.sign(self.block_coord - np.where(self.block_axis == 0, self.pos[:, 0], self.pos[:, 1]))
            pressing = still & (d < 0.1) & (self.last_intents[:, 0] * ax_dir * toward > 0.05)
        self.blocked_now = pressing | blocked_any

    # ------------------------------------------------------------------ feet

    def feet_state(self):
        """Foot world positions, contact flags and contact forces.

        Feet ride at fixed body-frame offsets; a foot is in contact when the
        terrain under it is level with the base's support height, otherwise it
        is airborne at the support plane (zero force).
        """
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        fx = self.pos[:, 0:1] + FEET_OFFSETS[None, :, 0] * c[:, None] - FEET_OFFSETS[None, :, 1] * s[:, None]
        fy = self.pos[:, 1:2] + FEET_OFFSETS[None, :, 0] * s[:, None] + FEET_OFFSETS[None, :, 1] * c[:, None]
        terr = heights_at(self.heights, self.cell, fx, fy)
        support = self.ground[:, None]
        contact = np.abs(terr - support) <= FOOT_CONTACT_TOL
        fz = np.where(contact, terr, support)
        feet = np.stack([fx, fy, fz], axis=-1)
        forces = np.zeros((self.n, 4, 3))
        n_contact = np.maximum(contact.sum(axis=1), 1)
        fz_per = MASS * GRAVITY / n_contact
        forces[:, :, 2] = np.where(contact, fz_per[:, None], 0.0)
        # pressing against a riser loads the front feet laterally (stumble signature)
        press = self.blocked_now
        if press.any():
            forces[press, 0, 0] = 5.0 * fz_per[press] * contact[press, 0]
            forces[press, 1, 0] = 5.0 * fz_per[press] * contact[press, 1]
        return feet, contact, forces

    def slip_speed(self, u: np.ndarray | None = None):
        """Horizontal foot-slip magnitude proxy used by the drag penalty."""
        u = self.last_intents if u is None else u
        mu = heights_at(self.friction, self.cell, self.pos[:, 0], self.pos[:, 1])
        traction = np.minimum(mu, 1.0)
        target = u[:, 0:1] * np.stack([np.cos(self.yaw), np.sin(self.yaw)], axis=1)
        slide = np.linalg.norm(target - self.lin_vel, axis=1) * (1.0 - traction)
        return slide + self.blocked_now * np.abs(u[:, 0])

    # ------------------------------------------------------------- snapshots

    def snapshot(self, i: int) -> RobotState:
        feet, contact, forces = self.feet_state()
        return RobotState(
            position=self.pos[i].copy(),
            yaw=float(self.yaw[i]),
            pitch=float(self.pitch[i]),
            base_lin_vel=self.lin_vel[i].copy(),
            v_z=float(self.v_z[i]),
            omega_xy=np.array([0.0, float(self.omega_p[i])]),
            omega_z=float(self.omega_z[i]),
            q=self.q[i].copy(),
            q_dot=self.qd[i].copy(),
            tau=self.tau[i].copy(),
            feet_contact_force=forces[i],
            feet_pos=feet[i],
            feet_contact=contact[i],
            gripper=GRIPPER_NAMES[self.gripper[i]],
            time=float(self.time[i]),
            stumble=bool(self.stumble_latch[i]),
        )

    def load(self, state: RobotState, i: int = 0):
        self.pos[i] = state.position
        self.yaw[i] = state.yaw
        self.pitch[i] = state.pitch
        self.lin_vel[i] = state.base_lin_vel
        self.v_z[i] = state.v_z
        self.omega_p[i] = state.omega_xy[1]
        self.omega_z[i] = state.omega_z
        self.q[i] = state.q
        self.qd[i] = state.q_dot
        self.tau[i] = state.tau
        self.gripper[i] = GRIPPER_NAMES.index(state.gripper)
        self.time[i] = state.time
        self._refresh_ground()


class CommandTracker:
    """Ideal inverse of the gait decoder: commands in, joint targets out.

    Used by the FSM closed-loop property checks and as the teleop fallback
    when no trained policy is loaded.
    """

    def __init__(self, pitch_gain: float = 6.0):
        self.pitch_gain = pitch_gain

    def action(self, v_cmd, omega_cmd, pitch_cmd, pitch_now, clearance=0.0):
        pitch_rate = self.pitch_gain * (pitch_cmd - pitch_now) + pitch_cmd / PITCH_RELAX_T
        u = np.stack(
            np.broadcast_arrays(
                np.asarray(v_cmd, dtype=float),
                np.asarray(omega_cmd, dtype=float),
                np.asarray(pitch_rate, dtype=float),
                np.asarray(clearance, dtype=float),
            ),
            axis=-1,
        )
        u = np.clip(u, INTENT_LO, INTENT_HI)
        return np.clip(u @ GAIT_DECODER_PINV.T, -ACTION_CLIP, ACTION_CLIP)


# ------------------------------------------------------- single-robot surface


def _single_sim(state: RobotState, hf: HeightField, rand: DynRand | None) -> Sim:
    sim = Sim([hf], rand)
    sim.load(state, 0)
    return sim


def step(state: RobotState, action: Action, rand: DynRand, hf: HeightField, dt: float = PHYSICS_DT) -> RobotState:
    """One 500 Hz physics step for a single robot.

    The caller holds each action for CONTROL_DECIMATION steps to realize the
    50 Hz control rate.
    """
    if abs(dt - PHYSICS_DT) > 1e-12:
        raise ValueError("physics step is fixed at 0.002 s")
    targets = action.clipped() if isinstance(action, Action) else np.asarray(action)
    if np.isnan(targets).any():
        raise FloatingPointError("NaN action")
    sim = _single_sim(state, hf, rand)
    sim.cur_action = np.clip(np.atleast_2d(targets), -ACTION_CLIP, ACTION_CLIP)
    sim.prev_action = sim.cur_action.copy()
    sim._substep(sim.cur_action)
    out = sim.snapshot(0)
    return out


def apply_push(state: RobotState, delta_v: np.ndarray) -> RobotState:
    """Instantaneous velocity impulse (xy and z components)."""
    delta_v = np.asarray(delta_v, dtype=float)
    if np.linalg.norm(delta_v[:2]) > 0.5 + 1e-9 or abs(delta_v[2]) > 0.5 + 1e-9:
        raise ValueError("push exceeds the 0.5 m/s caps")
    out = RobotState(**{**state.__dict__})
    out.base_lin_vel = state.base_lin_vel + delta_v[:2]
    out.v_z = state.v_z + delta_v[2]
    return out


def check_termination(state: RobotState, hf: HeightField, cfg: EpisodeConfig | None = None) -> str:
    """Episode status: running, timeout, fallen or goal_reached."""
    cfg = cfg or EpisodeConfig()
    ground = heights_at(hf.heights, hf.cell_size, state.position[0], state.position[1])
    if abs(state.pitch) > cfg.fall_pitch or state.position[2] < ground - cfg.fall_depth:
        return "fallen"
    if np.hypot(state.position[0] - hf.goal[0], state.position[1] - hf.goal[1]) < cfg.goal_radius:
        return "goal_reached"
    if state.time > cfg.timeout:
        return "timeout"
    return "running"
