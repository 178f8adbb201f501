"""Episode-level randomization of dynamics and perception.

All samplers are uniform over the tabled ranges and deterministic per seed.
In the reduced-order model, added mass stretches the body-velocity lag and
added com offset biases the pitch equilibrium; motor strength multiplies PD
torque and action delay buffers the command stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PUSH_INTERVAL = 8.0
MAX_PUSH_XY = 0.5
MAX_PUSH_Z = 0.5
ADDED_MASS_RANGE = (0.0, 3.0)
ADDED_COM_RANGE = (-0.2, 0.2)
MOTOR_STRENGTH_RANGE = (0.8, 1.2)
ACTION_DELAY_RANGE = (0.0, 0.02)

VISION_DELAY = 0.1
VISION_POS_JITTER = 0.005
VISION_ANGLE_RANGE_DEG = (24.0, 34.0)
VISION_RATE_HZ = 10.0


@dataclass
class DynRand:
    """Per-episode dynamics randomization sample."""

    push_interval: float = PUSH_INTERVAL
    max_push_xy: float = MAX_PUSH_XY
    max_push_z: float = MAX_PUSH_Z
    added_mass: float = 0.0
    added_com: float = 0.0
    motor_strength: float = 1.0
    action_delay: float = 0.0


@dataclass
class VisionRand:
    """Per-episode perception randomization sample."""

    vision_delay: float = VISION_DELAY
    position_jitter: float = VISION_POS_JITTER
    angle_deg: float = 30.0


def sample_dyn(seed: int) -> DynRand:
    """Uniform draw of the dynamics randomization table."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD14]))
    return DynRand(
        added_mass=rng.uniform(*ADDED_MASS_RANGE),
        added_com=rng.uniform(*ADDED_COM_RANGE),
        motor_strength=rng.uniform(*MOTOR_STRENGTH_RANGE),
        action_delay=rng.uniform(*ACTION_DELAY_RANGE),
    )


def sample_vision(seed: int) -> VisionRand:
    """Camera randomization: fixed latency and jitter, mount angle in [24, 34] deg."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
    return VisionRand(angle_deg=rng.uniform(*VISION_ANGLE_RANGE_DEG))


def push_schedule(rand: DynRand, episode_len: float, seed: int) -> list[tuple[float, np.ndarray]]:
    """One velocity impulse every push_interval seconds.

    Direction uniform on the disc with magnitude at most the xy cap; the
    vertical component is uniform within its cap.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0057]))
    pushes = []
    t = rand.push_interval
    while t < episode_len + 1e-9:
        ang = rng.uniform(0.0, 2 * np.pi)
        mag = rand.max_push_xy * np.sqrt(rng.uniform())
        dz = rng.uniform(-rand.max_push_z, rand.max_push_z)
        pushes.append((t, np.array([mag * np.cos(ang), mag * np.sin(ang), dz])))
        t += rand.push_interval
    return pushes


class DepthDelayQueue:
    """Latency and rate contract for delivered depth frames.

    Frames are produced at the vision rate and become visible to the consumer
    vision_delay seconds later; between deliveries the last frame holds.
    """

    def __init__(self, vr: VisionRand, rate_hz: float = VISION_RATE_HZ):
        self.vr = vr
        self.period = 1.0 / rate_hz
        self.pending: list = []
        self.current = None
        self.next_capture = 0.0

    def due_capture(self, t: float) -> bool:
        return t + 1e-9 >= self.next_capture

    def push(self, img, t: float):
        self.pending.append((t + self.vr.vision_delay, img))
        self.next_capture += self.period

    def get(self, t: float):
        while self.pending and self.pending[0][0] <= t + 1e-9:
            self.current = self.pending.pop(0)[1]
        return self.current


def perturb_camera(vr: VisionRand, rng: np.random.Generator, cam):
    """Jittered copy of a camera config per the randomization table."""
    import copy

    out = copy.copy(cam)
    out.mount_pitch_deg = vr.angle_deg
    out.forward = cam.forward + rng.normal(0.0, vr.position_jitter)
    out.height = cam.height + rng.normal(0.0, vr.position_jitter)
    return out
