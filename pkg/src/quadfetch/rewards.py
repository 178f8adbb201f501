"""Reward terms with their published scales, gating and per-term logging.

Every term is a pure function usable on scalars or batched arrays. The
tracking terms use the epsilon form (both branches divided by v_cmd + 1e-5),
and the pitch objective is gated off near obstacles so climbing and tilting
do not fight each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPSILON = 1e-5
PITCH_GATE_HEIGHT = 0.1
PITCH_GATE_BAND = (0.0, 0.6)     # forward band of scandots that arms the gate
PITCH_TRACK_COEF = 3.0


@dataclass
class CommandTriple:
    """(v, omega, pitch, grip) consumed by the low-level policy."""

    v_cmd: float = 0.0
    omega_cmd: float = 0.0
    p_cmd: float = 0.0
    grip: bool = False

    def clamped(self) -> "CommandTriple":
        return CommandTriple(
            v_cmd=float(np.clip(self.v_cmd, 0.0, 1.0)),
            omega_cmd=float(np.clip(self.omega_cmd, -1.0, 1.0)),
            p_cmd=float(np.clip(self.p_cmd, -np.deg2rad(30), np.deg2rad(30))),
            grip=bool(self.grip),
        )


@dataclass
class RewardConfig:
    """Per-term scales; defaults must match the published table bit for bit."""

    tracking_goal_vel: float = 1.5
    tracking_yaw: float = 1.0
    tracking_pitch: float = 1.5
    lin_vel_z: float = -9.0
    ang_vel_xy: float = -0.05
    dof_acc: float = -2.5e-7
    collision: float = -5.0
    action_rate: float = -0.1
    delta_torques: float = -1.0e-7
    torques: float = -0.00001
    hip_pos: float = -1.0
    dof_error: float = -0.2
    feet_stumble: float = -5.0
    feet_edge: float = -1.0
    feet_drag: float = -0.1
    energy: float = -1e-3
    epsilon: float = EPSILON
    pitch_gate_height: float = PITCH_GATE_HEIGHT

    def scales(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in TERM_ORDER}


TERM_ORDER = (
    "tracking_goal_vel",
    "tracking_yaw",
    "tracking_pitch",
    "lin_vel_z",
    "ang_vel_xy",
    "dof_acc",
    "collision",
    "action_rate",
    "delta_torques",
    "torques",
    "hip_pos",
    "dof_error",
    "feet_stumble",
    "feet_edge",
    "feet_drag",
    "energy",
)


@dataclass
class RewardBreakdown:
    """Raw per-term values plus the scaled total."""

    terms: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    gate: bool = False


def tracking_goal_vel(v, d_wp_hat, v_cmd, epsilon: float = EPSILON):
    """Velocity component toward the next waypoint, capped at the command.

    min(<v, d_hat>, v_cmd) / (v_cmd + eps), with both branches sharing the
    epsilon denominator so the cap is preserved up to eps.
    """
    v = np.asarray(v, dtype=float)
    d = np.asarray(d_wp_hat, dtype=float)
    v_cmd = np.asarray(v_cmd, dtype=float)
    if (v_cmd < 0).any():
        raise ValueError("v_cmd must be non-negative")
    norm = np.linalg.norm(d, axis=-1)
    if (np.abs(norm - 1.0) > 1e-6).any():
        raise ValueError("d_wp_hat must be a unit vector")
    proj = (v * d).sum(axis=-1)
    denom = v_cmd + epsilon
    return np.minimum(proj / denom, v_cmd / denom)


def waypoint_direction(x_wp, x):
    """Unit vector from the robot to the next waypoint.

    Returns (d_hat, advance); advance is set when the points coincide and the
    caller should move on to the following waypoint.
    """
    x_wp = np.asarray(x_wp, dtype=float)
    x = np.asarray(x, dtype=float)
    delta = x_wp - x
    dist = np.linalg.norm(delta)
    if dist <= 1e-6:
        return np.zeros_like(delta), True
    return delta / dist, False


def tracking_pitch(p_cmd, p, gate=False):
    """exp(-3 |p_cmd - p|), suppressed entirely while the obstacle gate is on."""
    raw = np.exp(-PITCH_TRACK_COEF * np.abs(np.asarray(p_cmd, dtype=float) - np.asarray(p, dtype=float)))
    return np.where(np.asarray(gate, dtype=bool), 0.0, raw)


def pitch_gate_from_scandots(scandots, gate_height: float = PITCH_GATE_HEIGHT):
    """Obstacle gate: any scandot in the front band far from base ground height.

    Accepts [187] or [N,187]; scandots are already base-relative heights.
    """
    dots = np.asarray(scandots, dtype=float)
    grid = dots.reshape(dots.shape[:-1] + (17, 11))
    fx = np.linspace(-0.3, 1.3, 17)
    band = (fx >= PITCH_GATE_BAND[0]) & (fx <= PITCH_GATE_BAND[1])
    return (np.abs(grid[..., band, :]) > gate_height).any(axis=(-1, -2))


# ------------------------------------------------------------ raw term forms


def yaw_tracking_term(omega_z, omega_cmd):
    return np.exp(-np.abs(np.asarray(omega_z, dtype=float) - np.asarray(omega_cmd, dtype=float)))


def lin_vel_z_term(v_z, gate=False):
    """Vertical velocity penalty, walking mode only (zeroed while climbing)."""
    return np.where(np.asarray(gate, dtype=bool), 0.0, np.asarray(v_z, dtype=float) ** 2)


def ang_vel_xy_term(omega_xy):
    return (np.asarray(omega_xy, dtype=float) ** 2).sum(axis=-1)


def dof_acc_term(qd_prev, qd_cur, dt):
    return (((np.asarray(qd_cur, dtype=float) - np.asarray(qd_prev, dtype=float)) / dt) ** 2).sum(axis=-1)


def collision_term(contact_events):
    return np.asarray(contact_events, dtype=float)


def action_rate_term(a_prev, a_cur):
    return np.linalg.norm(np.asarray(a_cur, dtype=float) - np.asarray(a_prev, dtype=float), axis=-1)


def delta_torques_term(tau_prev, tau_cur):
    return ((np.asarray(tau_cur, dtype=float) - np.asarray(tau_prev, dtype=float)) ** 2).sum(axis=-1)


def torques_term(tau):
    return (np.asarray(tau, dtype=float) ** 2).sum(axis=-1)


def hip_pos_term(q, q_default, hip_idx):
    dq = np.asarray(q, dtype=float) - np.asarray(q_default, dtype=float)
    return (dq[..., hip_idx] ** 2).sum(axis=-1)


def dof_error_term(q, q_default):
    return ((np.asarray(q, dtype=float) - np.asarray(q_default, dtype=float)) ** 2).sum(axis=-1)


def feet_stumble_term(forces):
    """1 if any foot's lateral force exceeds 4x its normal force."""
    f = np.asarray(forces, dtype=float)
    lateral = np.linalg.norm(f[..., :2], axis=-1)
    return (lateral > 4.0 * np.abs(f[..., 2])).any(axis=-1).astype(float)


def feet_edge_term(edge_flags):
    return np.asarray(edge_flags, dtype=float).sum(axis=-1)


def feet_drag_term(contact, foot_speed_xy):
    """Sum of horizontal foot speeds over feet in contact."""
    c = np.asarray(contact, dtype=float)
    s = np.asarray(foot_speed_xy, dtype=float)
    if s.ndim < c.ndim:
        s = s[..., None]
    return (c * s).sum(axis=-1)


def energy_term(tau, qd):
    return np.abs((np.asarray(tau, dtype=float) * np.asarray(qd, dtype=float)).sum(axis=-1))


def regularizer_terms(
    prev,
    cur,
    prev_action,
    cur_action,
    dt: float = 0.02,
    omega_cmd: float = 0.0,
    gate: bool = False,
    edge_flags=None,
    collision_events: float = 0.0,
    drag_speed: float = 0.0,
    q_default=None,
    hip_idx=(0, 3, 6, 9),
) -> dict[str, float]:
    """All non-goal terms for one control step between two robot states."""
    q_default = np.zeros(12) if q_default is None else q_default
    edge_flags = np.zeros(4, dtype=bool) if edge_flags is None else edge_flags
    return {
        "tracking_yaw": float(yaw_tracking_term(cur.omega_z, omega_cmd)),
        "lin_vel_z": float(lin_vel_z_term(cur.v_z, gate)),
        "ang_vel_xy": float(ang_vel_xy_term(cur.omega_xy)),
        "dof_acc": float(dof_acc_term(prev.q_dot, cur.q_dot, dt)),
        "collision": float(collision_term(collision_events)),
        "action_rate": float(action_rate_term(prev_action, cur_action)),
        "delta_torques": float(delta_torques_term(prev.tau, cur.tau)),
        "torques": float(torques_term(cur.tau)),
        "hip_pos": float(hip_pos_term(cur.q, q_default, np.asarray(hip_idx))),
        "dof_error": float(dof_error_term(cur.q, q_default)),
        "feet_stumble": float(feet_stumble_term(cur.feet_contact_force)),
        "feet_edge": float(feet_edge_term(edge_flags)),
        "feet_drag": float(feet_drag_term(cur.feet_contact, drag_speed)),
        "energy": float(energy_term(cur.tau, cur.q_dot)),
    }


def total_reward(breakdown: RewardBreakdown | dict, cfg: RewardConfig) -> float:
    """Scaled sum over all present terms."""
    terms = breakdown.terms if isinstance(breakdown, RewardBreakdown) else breakdown
    return float(sum(cfg.scales()[name] * value for name, value in terms.items()))
