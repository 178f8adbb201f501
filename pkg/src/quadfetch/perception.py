"""Emulated detection and tracking streams.

The ceiling camera becomes a 10 Hz global pose stream with Gaussian noise,
latency and dropout; the onboard pipeline becomes a 10 Hz robot-frame object
stream whose slow drift is reset by 0.2 Hz re-detections. In no-tracking
mode both streams freeze at their first detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import mouth_world

EGO_FOV_HALF = np.deg2rad(45.0)   # 90 degree cone about the snout axis
EGO_RANGE = 2.5


@dataclass
class PerceptionConfig:
    global_track_rate: float = 10.0
    ego_track_rate: float = 10.0
    detection_rate: float = 0.2
    global_noise_sigma: float = 0.03
    ego_noise_sigma: float = 0.01
    latency: float = 0.1
    dropout_prob: float = 0.02
    drift_sigma: float = 0.002
    mode: str = "tracking"        # tracking | no_tracking

    def __post_init__(self):
        if self.global_track_rate <= 0 or self.ego_track_rate <= 0 or self.detection_rate <= 0:
            raise ValueError("rates must be positive")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.mode not in ("tracking", "no_tracking"):
            raise ValueError(f"unknown mode {self.mode}")


@dataclass
class GlobalTrack:
    robot_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    heading: float = 0.0
    object_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    timestamp: float = -1.0
    valid: bool = False


@dataclass
class EgoTrack:
    object_xyz: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = -1.0
    valid: bool = False


def object_in_ego_frame(robot_pos, yaw, pitch, object_pos) -> np.ndarray:
    """Object center relative to the gripper root, in body axes.

    x along the (pitched) snout, y left, z up; the frame pitches with the
    body so driving z to zero points the mouth at the object.
    """
    origin = mouth_world(robot_pos, yaw, pitch)
    rel = np.asarray(object_pos, dtype=float) - origin
    cy, sy = np.cos(yaw), np.sin(yaw)
    # world -> yaw frame
    rx = cy * rel[..., 0] + sy * rel[..., 1]
    ry = -sy * rel[..., 0] + cy * rel[..., 1]
    rz = rel[..., 2]
    cp, sp = np.cos(pitch), np.sin(pitch)
    # yaw frame -> pitched body frame
    bx = cp * rx + sp * rz
    bz = -sp * rx + cp * rz
    return np.stack([bx, ry, bz], axis=-1)


class GlobalTracker:
    """Top-down pose stream at the global-track rate."""

    def __init__(self, cfg: PerceptionConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6107]))
        self.period = 1.0 / cfg.global_track_rate
        self.next_tick = 0.0
        self.pending: list[tuple[float, GlobalTrack]] = []
        self.delivered = GlobalTrack()
        self.frozen: GlobalTrack | None = None

    def step(self, robot_xy, heading: float, object_xy, t: float) -> GlobalTrack:
        cfg = self.cfg
        while t + 1e-9 >= self.next_tick:
            tick_t = self.next_tick
            self.next_tick += self.period
            dropped = self.rng.uniform() < cfg.dropout_prob
            noise = self.rng.normal(0.0, cfg.global_noise_sigma, size=5)
            if dropped:
                continue
            track = GlobalTrack(
                robot_xy=np.asarray(robot_xy, dtype=float) + noise[:2],
                heading=float(heading + noise[2] * 0.5),
                object_xy=np.asarray(object_xy, dtype=float) + noise[3:5],
                timestamp=tick_t,
                valid=True,
            )
            self.pending.append((tick_t + cfg.latency, track))
        while self.pending and self.pending[0][0] <= t + 1e-9:
            self.delivered = self.pending.pop(0)[1]
            if self.frozen is None and self.cfg.mode == "no_tracking":
                self.frozen = self.delivered
        if self.cfg.mode == "no_tracking" and self.frozen is not None:
            return self.frozen
        return self.delivered


class EgoTracker:
    """Robot-frame object stream with drift and periodic re-detection."""

    def __init__(self, cfg: PerceptionConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE60]))
        self.period = 1.0 / cfg.ego_track_rate
        self.detect_period = 1.0 / cfg.detection_rate
        self.next_tick = 0.0
        self.next_detect = 0.0
        self.drift = np.zeros(3)
        self.pending: list[tuple[float, EgoTrack]] = []
        self.delivered = EgoTrack()
        self.frozen: EgoTrack | None = None

    def step(self, robot_pos, yaw: float, pitch: float, object_pos, t: float) -> EgoTrack:
        cfg = self.cfg
        while t + 1e-9 >= self.next_tick:
            tick_t = self.next_tick
            self.next_tick += self.period
            if tick_t + 1e-9 >= self.next_detect:
                self.drift = np.zeros(3)  # fresh detection cancels tracker drift
                self.next_detect += self.detect_period
            else:
                self.drift = self.drift + self.rng.normal(0.0, cfg.drift_sigma, size=3)
            if self.rng.uniform() < cfg.dropout_prob:
                continue
            rel = object_in_ego_frame(np.asarray(robot_pos, dtype=float), yaw, pitch, np.asarray(object_pos, dtype=float))
            dist = float(np.linalg.norm(rel))
            in_cone = dist <= EGO_RANGE and dist > 1e-9 and rel[0] / dist >= np.cos(EGO_FOV_HALF)
            if not in_cone:
                self.pending.append((tick_t + cfg.latency, EgoTrack(np.zeros(3), tick_t, False)))
                continue
            noisy = rel + self.drift + self.rng.normal(0.0, cfg.ego_noise_sigma, size=3)
            self.pending.append((tick_t + cfg.latency, EgoTrack(noisy, tick_t, True)))
        while self.pending and self.pending[0][0] <= t + 1e-9:
            self.delivered = self.pending.pop(0)[1]
            if self.frozen is None and self.cfg.mode == "no_tracking" and self.delivered.valid:
                self.frozen = self.delivered
        if self.cfg.mode == "no_tracking" and self.frozen is not None:
            return self.frozen
        return self.delivered


def global_track(truth: dict, cfg: PerceptionConfig, t: float, tracker: GlobalTracker | None = None) -> GlobalTrack:
    """One-shot functional surface over GlobalTracker for simple callers."""
    tracker = tracker or GlobalTracker(cfg)
    return tracker.step(truth["robot_xy"], truth["heading"], truth["object_xy"], t)


def ego_track(truth: dict, robot_state, cfg: PerceptionConfig, t: float, tracker: EgoTracker | None = None) -> EgoTrack:
    """One-shot functional surface over EgoTracker."""
    tracker = tracker or EgoTracker(cfg)
    return tracker.step(robot_state.position, robot_state.yaw, robot_state.pitch, truth["object_pos"], t)
