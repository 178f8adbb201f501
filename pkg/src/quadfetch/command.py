"""Deployment command layer: navigate/grasp/return FSM over tracked poses.

Navigation drives at a constant 0.8 m/s with a Kp=0.5 heading controller and
zero pitch; grasping runs per-axis proportional control on the object's
robot-frame coordinates (Kp 0.5 / 0.5 / 1.0) and triggers the gripper once
all three are inside the capture thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .rewards import CommandTriple

NAV_SPEED = 0.8
NAV_KP = 0.5
GRASP_KP_X = 0.5
GRASP_KP_Y = 0.5
GRASP_KP_Z = 1.0
HEAD_KP = 1.0                 # waypoint heading-to-omega gain (training + Return)
OMEGA_CLAMP = 1.0
PITCH_CLAMP = np.deg2rad(30.0)

GRASP_ENTRY_DIST = 1.0        # Navigate -> Grasp distance threshold
GRASP_ENTRY_BEARING = np.deg2rad(30.0)
RETURN_DONE_DIST = 0.3
RETURN_DONE_BEARING = np.deg2rad(30.0)
MISSION_TIMEOUT = 60.0
EGO_LOSS_LIMIT = 2.0          # seconds of invalid ego track before failing
TRACK_HOLD_LIMIT = 0.5        # seconds of invalid global track before v decays


class MissionMode(Enum):
    NAVIGATE = "Navigate"
    GRASP = "Grasp"
    RETURN = "Return"
    DONE = "Done"
    FAILED = "Failed"


ALLOWED_TRANSITIONS = {
    (MissionMode.NAVIGATE, MissionMode.GRASP),
    (MissionMode.GRASP, MissionMode.RETURN),
    (MissionMode.RETURN, MissionMode.DONE),
    (MissionMode.NAVIGATE, MissionMode.FAILED),
    (MissionMode.GRASP, MissionMode.FAILED),
    (MissionMode.RETURN, MissionMode.FAILED),
}


@dataclass
class GraspGeometry:
    """Gripper sweet spot and trigger window in the robot frame."""

    x_star: float = 0.15
    x_tol: float = 0.05
    y_tol: float = 0.03
    z_tol: float = 0.03


@dataclass
class TriggerGrasp:
    """Sentinel command: close the gripper now."""

    cmd: CommandTriple


def wrap_angle(a):
    return (np.asarray(a, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def heading_to_omega(d_hat, yaw):
    """Yaw-rate command from a desired direction: gain 1.0, clamped to +-1."""
    d = np.asarray(d_hat, dtype=float)
    bearing = np.arctan2(d[..., 1], d[..., 0])
    return np.clip(HEAD_KP * wrap_angle(bearing - np.asarray(yaw, dtype=float)), -OMEGA_CLAMP, OMEGA_CLAMP)


def navigate_cmd(robot_xy, heading, target_xy) -> CommandTriple:
    """Constant-speed drive toward the target with proportional heading."""
    delta = np.asarray(target_xy, dtype=float) - np.asarray(robot_xy, dtype=float)
    bearing = np.arctan2(delta[1], delta[0])
    omega = float(np.clip(NAV_KP * wrap_angle(bearing - heading), -OMEGA_CLAMP, OMEGA_CLAMP))
    return CommandTriple(v_cmd=NAV_SPEED, omega_cmd=omega, p_cmd=0.0, grip=False)


def grasp_cmd(ego_xyz, geom: GraspGeometry | None = None):
    """Per-axis P-control toward the sweet spot; TriggerGrasp inside the window."""
    geom = geom or GraspGeometry()
    x, y, z = (float(v) for v in ego_xyz)
    cmd = CommandTriple(
        v_cmd=float(np.clip(GRASP_KP_X * (x - geom.x_star), 0.0, 1.0)),
        omega_cmd=float(np.clip(GRASP_KP_Y * y, -OMEGA_CLAMP, OMEGA_CLAMP)),
        p_cmd=float(np.clip(GRASP_KP_Z * z, -PITCH_CLAMP, PITCH_CLAMP)),
        grip=False,
    )
    if abs(x - geom.x_star) <= geom.x_tol and abs(y) <= geom.y_tol and abs(z) <= geom.z_tol:
        return TriggerGrasp(CommandTriple(0.0, 0.0, cmd.p_cmd, grip=True))
    return cmd


class MissionFsm:
    """Navigate -> Grasp -> Return -> Done, any active mode -> Failed."""

    def __init__(self, termination_xy, termination_yaw: float = np.pi,
                 geom: GraspGeometry | None = None, timeout: float = MISSION_TIMEOUT):
        self.mode = MissionMode.NAVIGATE
        self.termination_xy = np.asarray(termination_xy, dtype=float)
        self.termination_yaw = termination_yaw
        self.geom = geom or GraspGeometry()
        self.timeout = timeout
        self.mode_entry_t = {MissionMode.NAVIGATE: 0.0}
        self.last_cmd = CommandTriple()
        self.last_valid_global_t = 0.0
        self.last_valid_ego_t = 0.0

    def _transition(self, new_mode: MissionMode, t: float):
        if new_mode == self.mode:
            return
        if (self.mode, new_mode) not in ALLOWED_TRANSITIONS:
            raise RuntimeError(f"illegal transition {self.mode} -> {new_mode}")
        self.mode = new_mode
        self.mode_entry_t[new_mode] = t

    def step(self, global_track, ego_track, gripper: str, t: float):
        """One FSM tick -> (mode, CommandTriple or TriggerGrasp)."""
        if self.mode in (MissionMode.DONE, MissionMode.FAILED):
            return self.mode, CommandTriple()
        if t > self.timeout:
            self._transition(MissionMode.FAILED, t)
            return self.mode, CommandTriple()

        if self.mode == MissionMode.NAVIGATE:
            cmd = self._tracked_navigate(global_track, global_track.object_xy, t)
            if global_track.valid:
                delta = np.asarray(global_track.object_xy) - np.asarray(global_track.robot_xy)
                dist = float(np.hypot(*delta))
                bearing_err = abs(wrap_angle(np.arctan2(delta[1], delta[0]) - global_track.heading))
                if dist < GRASP_ENTRY_DIST and bearing_err < GRASP_ENTRY_BEARING:
                    self._transition(MissionMode.GRASP, t)
            return self.mode, cmd

        if self.mode == MissionMode.GRASP:
            if gripper == "holding":
                self._transition(MissionMode.RETURN, t)
                return self.mode, CommandTriple()
            if not ego_track.valid:
                if t - self.last_valid_ego_t > EGO_LOSS_LIMIT:
                    self._transition(MissionMode.FAILED, t)
                    return self.mode, CommandTriple()
                return self.mode, self.last_cmd
            self.last_valid_ego_t = t
            out = grasp_cmd(ego_track.object_xyz, self.geom)
            self.last_cmd = out.cmd if isinstance(out, TriggerGrasp) else out
            return self.mode, out

        # Return: navigate home, then require alignment with the termination point
        cmd = self._tracked_navigate(global_track, self.termination_xy, t)
        if global_track.valid:
            delta = self.termination_xy - np.asarray(global_track.robot_xy)
            dist = float(np.hypot(*delta))
            if dist < RETURN_DONE_DIST:
                bearing_err = abs(wrap_angle(self.termination_yaw - global_track.heading))
                if bearing_err < RETURN_DONE_BEARING:
                    self._transition(MissionMode.DONE, t)
                    return self.mode, CommandTriple()
                cmd = CommandTriple(
                    v_cmd=0.0,
                    omega_cmd=float(np.clip(NAV_KP * wrap_angle(self.termination_yaw - global_track.heading),
                                            -OMEGA_CLAMP, OMEGA_CLAMP)),
                    p_cmd=0.0,
                    grip=True,
                )
        if isinstance(cmd, CommandTriple) and self.mode == MissionMode.RETURN:
            cmd = CommandTriple(cmd.v_cmd, cmd.omega_cmd, cmd.p_cmd, grip=True)
        return self.mode, cmd

    def _tracked_navigate(self, track, target_xy, t: float) -> CommandTriple:
        if track.valid:
            self.last_valid_global_t = t
            self.last_cmd = navigate_cmd(track.robot_xy, track.heading, target_xy)
            return self.last_cmd
        # hold last command; decay speed to zero after half a second dark
        if t - self.last_valid_global_t > TRACK_HOLD_LIMIT:
            self.last_cmd = CommandTriple(0.0, self.last_cmd.omega_cmd, self.last_cmd.p_cmd, self.last_cmd.grip)
        return self.last_cmd


def fsm_step(fsm: MissionFsm, global_track, ego_track, gripper: str, t: float):
    """Functional wrapper over MissionFsm.step."""
    return fsm.step(global_track, ego_track, gripper, t)
