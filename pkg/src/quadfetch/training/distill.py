"""Phase-2 distillation: the depth student learns the oracle's latent online.

Rollouts are collected under the student (its own actions, light exploration
noise); the frozen oracle is queried on the same states for latent and action
targets. The loss is squared latent error plus squared action error,
backpropagated through the full sequence (BPTT) and the conv encoder. The
heading command is a policy input throughout and is never distilled.

Also hosts the no-distillation ablation: the student architecture trained
directly by PPO with per-step truncated hidden state.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nets import Adam, OracleNet, StudentNet, load_bundle, save_bundle
from ..nets.layers import merge_grads
from .env import EnvConfig, VecFetchEnv
from .ppo import PPOConfig, compute_gae, gaussian_logp

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DistillConfig:
    latent_weight: float = 1.0
    action_weight: float = 1.0
    seq_len: int = 24
    lr: float = 1e-4
    n_envs: int = 32
    steps_per_env: int = 48
    iterations: int = 500
    explore_std: float = 0.1

    def __post_init__(self):
        if self.latent_weight < 0 or self.action_weight < 0:
            raise ValueError("loss weights must be non-negative")


def _trainable(params: dict, freeze_trunk: bool = True) -> dict:
    out = {}
    for k, v in params.items():
        if k == "log_std":
            continue
        if freeze_trunk and (k.startswith("trunk.") or k.startswith("critic.")):
            continue
        out[k] = v
    return out


class DistillRollout:
    """One on-policy batch under the student with oracle supervision."""

    def __init__(self, t_len: int, n: int):
        self.proprio = np.zeros((t_len, n, 45), dtype=np.float32)
        self.cmds = np.zeros((t_len, n, 3), dtype=np.float32)
        self.frame_idx = np.zeros((t_len, n), dtype=np.int64)
        self.oracle_latent = np.zeros((t_len, n, 64), dtype=np.float32)
        self.oracle_action = np.zeros((t_len, n, 12), dtype=np.float32)
        self.dones = np.zeros((t_len, n), dtype=bool)
        self.h_starts: dict[int, np.ndarray] = {}
        self.frames: list[np.ndarray] = []


def collect_student_rollout(student: StudentNet, oracle: OracleNet, env: VecFetchEnv,
                            cfg: DistillConfig, rng: np.random.Generator,
                            h: np.ndarray) -> tuple[DistillRollout, np.ndarray]:
    t_len, n = cfg.steps_per_env, env.n
    roll = DistillRollout(t_len, n)
    frame_key: dict[tuple[int, int], int] = {}
    for t in range(t_len):
        if t % cfg.seq_len == 0:
            roll.h_starts[t] = h.copy()
        env._update_commands()
        roll.proprio[t] = env.proprio_obs()
        roll.cmds[t] = env.cmd_obs()
        frames = env.depth_frames()
        for i in range(n):
            key = (i, int(env.depth_version[i]))
            if key not in frame_key:
                frame_key[key] = len(roll.frames)
                roll.frames.append(frames[i].copy())
            roll.frame_idx[t, i] = frame_key[key]
        feats, _ = student.encode_frames(frames)
        latent, h, _ = student.core_step(feats, roll.proprio[t], roll.cmds[t], h)
        mean, _ = student.actor(roll.proprio[t], roll.cmds[t], latent)
        scan = env.scandots()
        o_latent, _ = oracle.encode(scan)
        x = np.concatenate([roll.proprio[t], roll.cmds[t], o_latent], axis=-1)
        o_mean = x
        for layer in oracle.trunk:
            o_mean, _ = layer.forward(o_mean)
        roll.oracle_latent[t] = o_latent
        roll.oracle_action[t] = o_mean
        action = mean + cfg.explore_std * rng.standard_normal(mean.shape).astype(np.float32)
        _, done, _, _ = env.step(action)
        roll.dones[t] = done
        if done.any():
            h[done] = 0.0  # fresh episode, fresh memory
    return roll, h


def distill_update(student: StudentNet, roll: DistillRollout, cfg: DistillConfig, opt: Adam) -> dict:
    """One pass of truncated-BPTT regression over the collected batch."""
    t_len, n = roll.proprio.shape[:2]
    frames = np.stack(roll.frames)
    feats_all, enc_cache = student.encode_frames(frames)
    gfeat = np.zeros_like(feats_all)
    grads_total: dict[str, np.ndarray] = {}
    latent_loss = action_loss = 0.0
    count = 0
    for start in range(0, t_len, cfg.seq_len):
        stop = min(start + cfg.seq_len, t_len)
        h = roll.h_starts[start].copy()
        latents, means, core_caches, trunk_caches = [], [], [], []
        for t in range(start, stop):
            f = feats_all[roll.frame_idx[t]]
            latent, h, cc = student.core_step(f, roll.proprio[t], roll.cmds[t], h)
            mean, tc = student.actor(roll.proprio[t], roll.cmds[t], latent)
            latents.append(latent)
            means.append(mean)
            core_caches.append(cc)
            trunk_caches.append(tc)
            if roll.dones[t].any():
                h = h.copy()
                h[roll.dones[t]] = 0.0  # mirror rollout resets exactly
        carry = np.zeros_like(h)
        for k in reversed(range(stop - start)):
            t = start + k
            if roll.dones[t].any():
                carry = carry.copy()
                carry[roll.dones[t]] = 0.0  # no gradient across episode resets
            dl = latents[k] - roll.oracle_latent[t]
            da = means[k] - roll.oracle_action[t]
            latent_loss += float((dl**2).mean())
            action_loss += float((da**2).mean())
            count += 1
            dmean = cfg.action_weight * 2.0 * da / da.size
            gx_trunk, _ = student.trunk_backward(dmean.astype(np.float32), trunk_caches[k])
            glatent = cfg.latent_weight * 2.0 * dl / dl.size + gx_trunk[..., 48:]
            gf, carry, g_core = student.core_backward(glatent.astype(np.float32), carry, core_caches[k])
            np.add.at(gfeat, roll.frame_idx[t], gf)
            grads_total = merge_grads(grads_total, g_core)
    g_enc = student.encoder_backward(gfeat, enc_cache)
    grads_total = merge_grads(grads_total, g_enc)
    opt.step({k: v for k, v in grads_total.items() if k in opt.params})
    return {"latent_loss": latent_loss / count, "action_loss": action_loss / count}


def run_phase2_distill(
    oracle_ckpt,
    out_dir,
    recurrent: bool = True,
    iterations: int = 500,
    seed: int = 2,
    n_envs: int = 32,
    log_every: int = 10,
    progress=print,
) -> Path:
    """Distill the oracle into a depth student; returns the checkpoint path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    desc, params = load_bundle(oracle_ckpt)
    if desc.get("arch") != "oracle":
        raise ValueError("phase-2 distillation expects an oracle checkpoint")
    oracle = OracleNet(np.random.default_rng(0))
    oracle.load_param_dict(params)
    cfg = DistillConfig(iterations=iterations, n_envs=n_envs)
    student = StudentNet(np.random.default_rng(np.random.SeedSequence([seed, 0x57D])), recurrent=recurrent)
    student.load_trunk_from(params)
    if student.param_dict()["trunk.0.W"].shape != oracle.param_dict()["trunk.0.W"].shape:
        raise ValueError("oracle/student latent dimensions do not line up")
    env = VecFetchEnv(EnvConfig(n_envs=n_envs, seed=seed, depth=True, curriculum=False, level_mix=True))
    opt = Adam(_trainable(student.param_dict()), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD57]))
    h = student.init_hidden(n_envs)
    name = "student" if recurrent else "no_gru"
    ckpt_path = out / f"{name}.dggy"
    t0 = time.time()
    with open(out / f"{name}_distill.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "latent_loss", "action_loss"])
        for it in range(1, iterations + 1):
            roll, h = collect_student_rollout(student, oracle, env, cfg, rng, h)
            stats = distill_update(student, roll, cfg, opt)
            writer.writerow([it, f"{stats['latent_loss']:.6g}", f"{stats['action_loss']:.6g}"])
            if it % log_every == 0 or it == iterations:
                fh.flush()
                progress(
                    f"[{name}] iter {it}/{iterations} latent {stats['latent_loss']:.4f} "
                    f"action {stats['action_loss']:.4f} ({time.time() - t0:.0f}s)"
                )
            if it % 100 == 0:
                save_bundle(ckpt_path, student.descriptor(), student.param_dict())
    save_bundle(ckpt_path, student.descriptor(), student.param_dict())
    return ckpt_path


# ------------------------------------------------------ no-distill ablation


def run_no_distill(
    out_dir,
    iterations: int = 300,
    seed: int = 3,
    n_envs: int = 32,
    log_every: int = 10,
    progress=print,
) -> Path:
    """Train the student architecture directly with PPO (no teacher).

    Hidden states are carried through rollouts but detached in updates; depth
    frames do train the conv encoder. Mirrors the published ablation that
    fails to learn from vision from scratch.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ppo = PPOConfig(n_envs=n_envs, steps_per_env=48, iterations=iterations)
    env = VecFetchEnv(EnvConfig(n_envs=n_envs, seed=seed, depth=True, curriculum=True))
    student = StudentNet(
        np.random.default_rng(np.random.SeedSequence([seed, 0x90D])), recurrent=True, with_critic=True
    )
    opt = Adam(student.param_dict(), lr=ppo.lr)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x91D]))
    t_len, n = ppo.steps_per_env, n_envs
    h = student.init_hidden(n)
    ckpt = out / "no_distill.dggy"
    t0 = time.time()
    for it in range(1, iterations + 1):
        proprio = np.zeros((t_len, n, 45), dtype=np.float32)
        cmds = np.zeros((t_len, n, 3), dtype=np.float32)
        hs = np.zeros((t_len, n, 128), dtype=np.float32)
        frame_idx = np.zeros((t_len, n), dtype=np.int64)
        frames_buf: list[np.ndarray] = []
        frame_key: dict[tuple[int, int], int] = {}
        actions = np.zeros((t_len, n, 12), dtype=np.float32)
        logps = np.zeros((t_len, n))
        values = np.zeros((t_len, n))
        rews = np.zeros((t_len, n))
        dones = np.zeros((t_len, n))
        for t in range(t_len):
            env._update_commands()
            proprio[t] = env.proprio_obs()
            cmds[t] = env.cmd_obs()
            hs[t] = h
            fr = env.depth_frames()
            for i in range(n):
                key = (i, int(env.depth_version[i]))
                if key not in frame_key:
                    frame_key[key] = len(frames_buf)
                    frames_buf.append(fr[i].copy())
                frame_idx[t, i] = frame_key[key]
            feats, _ = student.encode_frames(fr)
            latent, h, _ = student.core_step(feats, proprio[t], cmds[t], h)
            mean, _ = student.actor(proprio[t], cmds[t], latent)
            value, _ = student.value(proprio[t], cmds[t], latent)
            log_std = np.maximum(student.log_std, np.log(ppo.min_std))
            a = mean + np.exp(log_std) * rng.standard_normal(mean.shape).astype(np.float32)
            actions[t] = a
            logps[t] = gaussian_logp(a, mean, log_std)
            values[t] = value
            reward, done, timeout, _ = env.step(a)
            if timeout.any():
                reward = reward + ppo.discount * value * timeout
            rews[t] = reward
            dones[t] = done
            if done.any():
                h[done] = 0.0
        feats, _ = student.encode_frames(env.depth_frames())
        latent, _, _ = student.core_step(feats, env.proprio_obs(), env.cmd_obs(), h)
        last_v, _ = student.value(env.proprio_obs(), env.cmd_obs(), latent)
        adv, rets = compute_gae(rews, values, dones, last_v, ppo.discount, ppo.gae_lambda)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        frames_arr = np.stack(frames_buf)
        flat = lambda x: x.reshape(-1, *x.shape[2:])
        fp, fc, fh, fa = flat(proprio), flat(cmds), flat(hs), flat(actions)
        fi, flp, fadv, fret = frame_idx.reshape(-1), logps.reshape(-1), adv.reshape(-1), rets.reshape(-1)
        total = fp.shape[0]
        for _ in range(ppo.epochs):
            order = rng.permutation(total)
            for mb in np.array_split(order, ppo.minibatches):
                _no_distill_minibatch(student, opt, ppo, frames_arr, fp[mb], fc[mb], fh[mb], fa[mb],
                                      fi[mb], flp[mb], fadv[mb], fret[mb])
        if it % log_every == 0 or it == iterations:
            progress(f"[no_distill] iter {it}/{iterations} reward {rews.mean():.4f} ({time.time() - t0:.0f}s)")
        if it % 100 == 0:
            save_bundle(ckpt, student.descriptor(), student.param_dict())
    save_bundle(ckpt, student.descriptor(), student.param_dict())
    return ckpt


def _no_distill_minibatch(student, opt, ppo, frames_arr, proprio, cmds, h0, actions,
                          frame_idx, logp_old, adv, returns):
    uniq, inv = np.unique(frame_idx, return_inverse=True)
    feats_u, enc_cache = student.encode_frames(frames_arr[uniq])
    feats = feats_u[inv]
    latent, _, core_cache = student.core_step(feats, proprio, cmds, h0)
    mean, trunk_cache = student.actor(proprio, cmds, latent)
    value, critic_cache = student.value(proprio, cmds, latent)
    b = actions.shape[0]
    log_std = np.maximum(student.log_std, np.log(ppo.min_std))
    std = np.exp(log_std)
    z = (actions - mean) / std
    logp = -0.5 * (z**2).sum(axis=-1) - log_std.sum() - 0.5 * actions.shape[-1] * LOG_2PI
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1 - ppo.clip, 1 + ppo.clip) * adv
    if not np.isfinite(surr1).all():
        raise FloatingPointError("no-distill PPO diverged")
    pick1 = surr1 <= surr2
    in_window = (ratio > 1 - ppo.clip) & (ratio < 1 + ppo.clip)
    dratio = np.where(pick1 | in_window, -adv / b, 0.0)
    dlogp = dratio * ratio
    dmean = (dlogp[:, None] * (z / std)).astype(np.float32)
    dvalue = (ppo.value_coef * (value - returns) / b).astype(np.float32)
    gx_t, g_trunk = student.trunk_backward(dmean, trunk_cache)
    gx_c, g_critic = student.critic_backward(dvalue, critic_cache)
    glatent = (gx_t + gx_c)[..., 48:]
    gfeat, _, g_core = student.core_backward(glatent, np.zeros_like(h0), core_cache)
    gfeat_u = np.zeros_like(feats_u)
    np.add.at(gfeat_u, inv, gfeat)
    g_enc = student.encoder_backward(gfeat_u, enc_cache)
    g_logstd = (dlogp[:, None] * (z**2 - 1.0)).sum(axis=0) - ppo.entropy_coef
    grads = merge_grads(g_trunk, g_critic, g_core, g_enc, {"log_std": g_logstd.astype(np.float32)})
    opt.step(grads)
