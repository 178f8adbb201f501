"""Vectorized rollout environment: terrain, commands, rewards, resets.

Commands follow the training protocol: per-episode linear speed in [0, 1],
pitch command resampled every 3 s in [-30, 30] deg, and the heading command
derived from the next waypoint each step. The no-waypoint ablation samples
heading commands instead and scores body-frame velocity tracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import rewards as rw
from ..command import heading_to_omega
from ..domainrand import DepthDelayQueue, DynRand, VisionRand, push_schedule, sample_dyn, sample_vision
from ..dynamics import (
    CONTROL_DT,
    HIP_IDX,
    STAND_HEIGHT,
    A_DEFAULT,
    Sim,
)
from ..heightfield import (
    Box,
    CameraConfig,
    HeightField,
    TerrainSpec,
    build_course,
    generate_terrain,
    heights_at,
    render_depth_batch,
    sample_scandots,
)

P_CMD_MAX = np.deg2rad(30.0)
P_CMD_HOLD = 3.0
WAYPOINT_RADIUS = 0.3
DEPTH_RATE_HZ = 10.0


@dataclass
class EnvConfig:
    n_envs: int = 128
    seed: int = 1
    episode_length: float = 20.0
    spec: TerrainSpec = field(default_factory=TerrainSpec)
    curriculum: bool = True
    init_level: int = 0
    level_mix: bool = False      # resample a uniform level each episode (distillation data)
    waypoint_mode: bool = True
    domain_rand: bool = True
    depth: bool = False
    vision_rand: bool = True
    fixed_v_cmd: float | None = None
    fixed_p_cmd: float | None = None
    eval_boxes: tuple[float, float] | None = None   # ClimbUp: box height range
    eval_task: str | None = None                    # None | walk | climb_up | climb_down


def build_eval_terrain(task: str, spec: TerrainSpec, rng: np.random.Generator,
                       height_range: tuple[float, float] = (0.42, 0.58)) -> HeightField:
    """Fixed course families mirroring the eval table columns.

    walk / walk_pitch: obstacle-free corridor. climb_up: two full-width boxes
    with tall rises. climb_down: one long plateau the robot spawns on and must
    descend from mid-course.
    """
    noise = rng.uniform(*spec.noise_amplitude)
    goal_y = rng.uniform(*spec.goal_y_range)
    wall = 0.3
    full = (wall, spec.env_width - wall)
    if task in ("walk", "walk_pitch_up", "walk_pitch_down"):
        return build_course(spec, [], noise, 1.0, goal_y, rng)
    if task == "climb_up":
        h1 = rng.uniform(*height_range)
        h2 = rng.uniform(*height_range)
        boxes = [Box(4.0, 5.8, full[0], full[1], h1), Box(8.0, 9.8, full[0], full[1], h2)]
        return build_course(spec, boxes, noise, 1.0, goal_y, rng)
    if task == "climb_down":
        h = rng.uniform(*height_range)
        boxes = [Box(0.3, 6.0, full[0], full[1], h)]
        hf = build_course(spec, boxes, noise, 1.0, goal_y, rng)
        return hf
    raise ValueError(f"unknown eval task {task}")


class VecFetchEnv:
    """N parallel course episodes stepped at 50 Hz."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.n = cfg.n_envs
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE5F]))
        self.levels = np.full(self.n, cfg.init_level, dtype=np.int64)
        self.episode_counter = np.arange(self.n, dtype=np.int64)
        self.cam = CameraConfig()
        hfs = [self._make_terrain(i) for i in range(self.n)]
        self.sim = Sim(hfs, self._make_rands())
        self.reward_cfg = rw.RewardConfig()
        self.scales = np.array([self.reward_cfg.scales()[k] for k in rw.TERM_ORDER])
        self.v_cmd = np.zeros(self.n)
        self.p_cmd = np.zeros(self.n)
        self.omega_cmd = np.zeros(self.n)
        self.heading_cmd_nw = np.zeros(self.n)  # no-waypoint sampled yaw-rate command
        self.next_p_resample = np.zeros(self.n)
        self.wp_idx = np.zeros(self.n, dtype=np.int64)
        self.max_x = np.zeros(self.n)
        self.spawn_x = np.zeros(self.n)
        self.pushes: list[list] = [[] for _ in range(self.n)]
        self.push_cursor = np.zeros(self.n, dtype=np.int64)
        self.prev_policy_action = np.zeros((self.n, 12))
        self.term_sums = np.zeros((self.n, len(rw.TERM_ORDER)))
        self.ep_len = np.zeros(self.n, dtype=np.int64)
        self.finished_fraction = np.zeros(self.n)
        self.last_status = np.array(["running"] * self.n, dtype=object)
        if cfg.depth:
            self.vision: list[VisionRand] = [VisionRand() for _ in range(self.n)]
            self.depth_queues = [DepthDelayQueue(self.vision[i], DEPTH_RATE_HZ) for i in range(self.n)]
            self.latest_depth = np.full((self.n, self.cam.res, self.cam.res), self.cam.clip_far, dtype=np.float32)
            self.depth_version = np.zeros(self.n, dtype=np.int64)
            self._last_frame_obj: list = [None] * self.n
        self.reset_all()

    # ------------------------------------------------------------- terrain

    def _terrain_seed(self, i: int) -> int:
        return int(self.cfg.seed * 1_000_003 + self.episode_counter[i])

    def _make_terrain(self, i: int) -> HeightField:
        seed = self._terrain_seed(i)
        if self.cfg.eval_task:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xEA1]))
            hr = self.cfg.eval_boxes or (0.42, 0.58)
            return build_eval_terrain(self.cfg.eval_task, self.cfg.spec, rng, hr)
        return generate_terrain(self.cfg.spec, int(self.levels[i]), seed)

    def _make_rands(self):
        if not self.cfg.domain_rand:
            return DynRand()
        return [sample_dyn(self._terrain_seed(i) + 7) for i in range(self.n)]

    # --------------------------------------------------------------- resets

    def reset_all(self):
        self.reset_envs(np.ones(self.n, dtype=bool))

    def reset_envs(self, mask: np.ndarray):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return
        for i in idx:
            self.episode_counter[i] += self.n
            if self.cfg.level_mix:
                mix_rng = np.random.default_rng(np.random.SeedSequence([self._terrain_seed(i), 0x313]))
                self.levels[i] = int(mix_rng.integers(0, 10))
            hf = self._make_terrain(i)
            self.sim.set_terrain(int(i), hf)
            seed = self._terrain_seed(i)
            if self.cfg.domain_rand:
                dr = sample_dyn(seed + 7)
                self.sim.motor_strength[i] = dr.motor_strength
                self.sim.delay_substeps[i] = int(round(dr.action_delay / 0.002))
                self.sim.lag_t[i] = 0.15 * (1.0 + dr.added_mass / 3.0 * 0.3)
                self.sim.pitch_bias[i] = dr.added_com * 0.15
                self.pushes[i] = push_schedule(dr, self.cfg.episode_length, seed + 11)
            else:
                self.pushes[i] = []
            self.push_cursor[i] = 0
            ep_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
            self.v_cmd[i] = self.cfg.fixed_v_cmd if self.cfg.fixed_v_cmd is not None else ep_rng.uniform(0.0, 1.0)
            self.p_cmd[i] = self.cfg.fixed_p_cmd if self.cfg.fixed_p_cmd is not None else ep_rng.uniform(-P_CMD_MAX, P_CMD_MAX)
            self.heading_cmd_nw[i] = ep_rng.uniform(-1.0, 1.0)
            self.next_p_resample[i] = P_CMD_HOLD
            self.wp_idx[i] = 0
            self.spawn_x[i] = hf.spawn[0]
            self.max_x[i] = hf.spawn[0]
            if self.cfg.depth:
                vr = sample_vision(seed + 13) if self.cfg.vision_rand else VisionRand()
                self.vision[i] = vr
                self.depth_queues[i] = DepthDelayQueue(vr, DEPTH_RATE_HZ)
        self.sim.reset_envs(mask)
        self.prev_policy_action[idx] = 0.0
        self.term_sums[idx] = 0.0
        self.ep_len[idx] = 0
        if self.cfg.depth:
            self._render_due(np.asarray(idx), prime=True)

    # ------------------------------------------------------------- commands

    def _update_commands(self):
        t = self.sim.time
        resample = t >= self.next_p_resample
        if resample.any():
            for i in np.flatnonzero(resample):
                ep_rng = np.random.default_rng(
                    np.random.SeedSequence([self._terrain_seed(i), int(t[i] / P_CMD_HOLD), 0xCC])
                )
                if self.cfg.fixed_p_cmd is None:
                    self.p_cmd[i] = ep_rng.uniform(-P_CMD_MAX, P_CMD_MAX)
                if not self.cfg.waypoint_mode:
                    self.heading_cmd_nw[i] = ep_rng.uniform(-1.0, 1.0)
                self.next_p_resample[i] += P_CMD_HOLD
        if self.cfg.waypoint_mode:
            d_hat, _ = self._waypoint_dir()
            self.omega_cmd = heading_to_omega(d_hat, self.sim.yaw)
        else:
            self.omega_cmd = self.heading_cmd_nw.copy()

    def _waypoint_dir(self):
        pos = self.sim.pos[:, :2]
        d_hat = np.zeros((self.n, 2))
        dist = np.zeros(self.n)
        for i in range(self.n):
            wps = self.sim.hfs[i].waypoints
            k = int(self.wp_idx[i])
            while k < len(wps) - 1:
                wp = wps[k]
                dx = wp[0] - pos[i, 0]
                if np.hypot(dx, wp[1] - pos[i, 1]) < WAYPOINT_RADIUS or dx < -0.1:
                    k += 1
                else:
                    break
            self.wp_idx[i] = k
            wp = wps[k]
            delta = np.array([wp[0] - pos[i, 0], wp[1] - pos[i, 1]])
            nrm = np.linalg.norm(delta)
            dist[i] = nrm
            d_hat[i] = delta / nrm if nrm > 1e-6 else np.array([1.0, 0.0])
        return d_hat, dist

    # ----------------------------------------------------------------- step

    def step(self, actions: np.ndarray):
        """One 50 Hz control step for all envs; auto-resets finished episodes.

        Returns (reward, done, timeout, info). Observations are pulled by the
        caller via the obs helpers after this returns.
        """
        self._update_commands()
        self._apply_due_pushes()
        info = self.sim.step_control(actions)
        self.ep_len += 1
        reward, terms = self._compute_reward(actions, info)
        self.term_sums += terms
        self.max_x = np.maximum(self.max_x, self.sim.pos[:, 0])

        status = self._status()
        done = status != "running"
        timeout = status == "timeout"
        self.last_status = status
        self.finished_fraction = np.clip(
            (self.max_x - self.spawn_x) / np.array([hf.total_length for hf in self.sim.hfs]), 0.0, 1.0
        )
        self.prev_policy_action = np.clip(actions, -1.5, 1.5)
        if done.any():
            if self.cfg.curriculum:
                from .curriculum import curriculum_update

                self.levels = curriculum_update(self.levels, self.finished_fraction, done)
            self.reset_envs(done)
        if self.cfg.depth:
            self._render_due(np.flatnonzero(~done))
        return reward, done, timeout, {"status": status, "terms": terms}

    def _apply_due_pushes(self):
        dxy = np.zeros((self.n, 2))
        dz = np.zeros(self.n)
        hit = False
        for i in range(self.n):
            sched = self.pushes[i]
            c = self.push_cursor[i]
            while c < len(sched) and self.sim.time[i] + 1e-9 >= sched[c][0]:
                dxy[i] += sched[c][1][:2]
                dz[i] += sched[c][1][2]
                c += 1
                hit = True
            self.push_cursor[i] = c
        if hit:
            self.sim.apply_push(dxy, dz)

    def _status(self):
        out = np.array(["running"] * self.n, dtype=object)
        ground = self.sim.ground
        fallen = (np.abs(self.sim.pitch) > 1.0) | (self.sim.pos[:, 2] < ground - 0.1)
        goals = np.array([hf.goal for hf in self.sim.hfs])
        at_goal = np.hypot(self.sim.pos[:, 0] - goals[:, 0], self.sim.pos[:, 1] - goals[:, 1]) < 0.3
        timeout = self.sim.time > self.cfg.episode_length
        out[timeout] = "timeout"
        out[at_goal] = "goal_reached"
        out[fallen] = "fallen"
        return out

    # -------------------------------------------------------------- rewards

    def _compute_reward(self, actions, info):
        sim = self.sim
        scan = self.scandots()
        gate = rw.pitch_gate_from_scandots(scan, self.reward_cfg.pitch_gate_height)
        feet, contact, forces = sim.feet_state()
        edge_flags = self._feet_edge_flags(feet, contact)
        drag = sim.slip_speed()

        if self.cfg.waypoint_mode:
            d_hat, _ = self._waypoint_dir()
            track = rw.tracking_goal_vel(sim.lin_vel, d_hat, self.v_cmd, self.reward_cfg.epsilon)
        else:
            v_fwd = sim.lin_vel[:, 0] * np.cos(sim.yaw) + sim.lin_vel[:, 1] * np.sin(sim.yaw)
            track = np.exp(-np.abs(v_fwd - self.v_cmd))

        terms = np.zeros((self.n, len(rw.TERM_ORDER)))
        col = {name: k for k, name in enumerate(rw.TERM_ORDER)}
        terms[:, col["tracking_goal_vel"]] = track
        terms[:, col["tracking_yaw"]] = rw.yaw_tracking_term(sim.omega_z, self.omega_cmd)
        terms[:, col["tracking_pitch"]] = rw.tracking_pitch(self.p_cmd, sim.pitch, gate)
        terms[:, col["lin_vel_z"]] = rw.lin_vel_z_term(sim.v_z, gate)
        terms[:, col["ang_vel_xy"]] = rw.ang_vel_xy_term(np.stack([np.zeros(self.n), sim.omega_p], axis=1))
        terms[:, col["dof_acc"]] = rw.dof_acc_term(info["prev_qd"], sim.qd, CONTROL_DT)
        terms[:, col["collision"]] = info["blocked"].astype(float)
        terms[:, col["action_rate"]] = rw.action_rate_term(sim.prev_action, sim.cur_action)
        terms[:, col["delta_torques"]] = rw.delta_torques_term(info["prev_tau"], sim.tau)
        terms[:, col["torques"]] = rw.torques_term(sim.tau)
        terms[:, col["hip_pos"]] = rw.hip_pos_term(sim.q, A_DEFAULT, HIP_IDX)
        terms[:, col["dof_error"]] = rw.dof_error_term(sim.q, A_DEFAULT)
        terms[:, col["feet_stumble"]] = rw.feet_stumble_term(forces)
        terms[:, col["feet_edge"]] = rw.feet_edge_term(edge_flags)
        terms[:, col["feet_drag"]] = rw.feet_drag_term(contact, drag)
        terms[:, col["energy"]] = rw.energy_term(sim.tau, sim.qd)
        reward = terms @ self.scales
        return reward * CONTROL_DT, terms

    def _feet_edge_flags(self, feet, contact):
        cell = self.sim.cell
        masks = np.stack([hf.edge_mask for hf in self.sim.hfs])
        i = np.clip((feet[:, :, 0] / cell + 0.5).astype(int), 0, masks.shape[1] - 1)
        j = np.clip((feet[:, :, 1] / cell + 0.5).astype(int), 0, masks.shape[2] - 1)
        env = np.arange(self.n)[:, None]
        return masks[env, i, j] & contact

    # ---------------------------------------------------------- observations

    def proprio_obs(self) -> np.ndarray:
        sim = self.sim
        c, s = np.cos(sim.yaw), np.sin(sim.yaw)
        v_fwd = sim.lin_vel[:, 0] * c + sim.lin_vel[:, 1] * s
        v_lat = -sim.lin_vel[:, 0] * s + sim.lin_vel[:, 1] * c
        grav = np.stack([-np.sin(sim.pitch), np.zeros(self.n), -np.cos(sim.pitch)], axis=1)
        omega = np.stack([np.zeros(self.n), sim.omega_p, sim.omega_z], axis=1)
        return np.concatenate(
            [
                sim.q,
                sim.qd * 0.05,
                grav,
                omega * 0.25,
                np.stack([v_fwd, v_lat, sim.v_z], axis=1),
                self.prev_policy_action,
            ],
            axis=1,
        ).astype(np.float32)

    def cmd_obs(self) -> np.ndarray:
        return np.stack([self.v_cmd, self.omega_cmd, self.p_cmd], axis=1).astype(np.float32)

    def scandots(self) -> np.ndarray:
        dots = np.empty((self.n, 187))
        pos = self.sim.pos[:, :2]
        # batched across envs: stacked grids share one shape
        fx = np.linspace(-0.3, 1.3, 17)
        ly = np.linspace(-0.5, 0.5, 11)
        gx, gy = np.meshgrid(fx, ly, indexing="ij")
        offs = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        c, s = np.cos(self.sim.yaw), np.sin(self.sim.yaw)
        wx = pos[:, 0:1] + offs[None, :, 0] * c[:, None] - offs[None, :, 1] * s[:, None]
        wy = pos[:, 1:2] + offs[None, :, 0] * s[:, None] + offs[None, :, 1] * c[:, None]
        h = heights_at(self.sim.heights, self.sim.cell, wx, wy)
        dots = h - self.sim.ground[:, None]
        return np.clip(dots, -1.0, 1.0).astype(np.float32)

    def oracle_obs(self) -> np.ndarray:
        return np.concatenate([self.proprio_obs(), self.cmd_obs(), self.scandots()], axis=1)

    # ----------------------------------------------------------------- depth

    def _render_due(self, idx: np.ndarray, prime: bool = False):
        due = [int(i) for i in idx if prime or self.depth_queues[i].due_capture(self.sim.time[i])]
        if not due:
            return
        due = np.array(due)
        mount = np.array([self.vision[i].angle_deg for i in due])
        jr = [np.random.default_rng(np.random.SeedSequence([self._terrain_seed(i), int(self.sim.time[i] * 10), 0xD ]))
              for i in due]
        fwd = np.array([g.normal(0.0, self.vision[i].position_jitter) for g, i in zip(jr, due)])
        ht = np.array([g.normal(0.0, self.vision[i].position_jitter) for g, i in zip(jr, due)])
        frames = render_depth_batch(
            self.sim.heights[due],
            self.sim.cell,
            self.sim.pos[due],
            self.sim.yaw[due],
            self.sim.pitch[due],
            self.cam,
            mount_deg=mount,
            fwd_off=fwd,
            ht_off=ht,
        )
        for k, i in enumerate(due):
            q = self.depth_queues[i]
            t = float(self.sim.time[i])
            if prime:
                q.next_capture = t + q.period
                q.pending.append((t, frames[k]))
            else:
                q.push(frames[k], t)

    def depth_frames(self) -> np.ndarray:
        """Latest delivered frame per env (latency and rate applied)."""
        for i in range(self.n):
            got = self.depth_queues[i].get(float(self.sim.time[i]))
            if got is not None:
                self.latest_depth[i] = got
                if got is not self._last_frame_obj[i]:
                    self._last_frame_obj[i] = got
                    self.depth_version[i] += 1
        return self.latest_depth
