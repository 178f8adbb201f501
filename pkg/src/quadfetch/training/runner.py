"""Phase-1 trainer loop, rollout collection and training-curve logging."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .. import rewards as rw
from ..nets import OracleNet, save_bundle
from .curriculum import N_LEVELS
from .env import EnvConfig, VecFetchEnv
from .ppo import PPOConfig, PPOTrainer, compute_gae

CURVE_FIELDS = (
    ["iteration", "steps", "mean_reward", "mean_ep_fraction", "kl", "clip_frac", "policy_loss", "value_loss"]
    + [f"level_{i}" for i in range(N_LEVELS)]
    + [f"term_{name}" for name in rw.TERM_ORDER]
)


def collect_rollouts(trainer: PPOTrainer, env: VecFetchEnv, cfg: PPOConfig) -> dict:
    """On-policy batch of cfg.steps_per_env transitions per env.

    Timeout transitions carry their bootstrap (gamma * V of the timeout state)
    inside the reward so GAE can treat every done as terminal.
    """
    t_len, n = cfg.steps_per_env, env.n
    proprio = np.zeros((t_len, n, 45), dtype=np.float32)
    cmds = np.zeros((t_len, n, 3), dtype=np.float32)
    scan = np.zeros((t_len, n, 187), dtype=np.float32)
    actions = np.zeros((t_len, n, 12), dtype=np.float32)
    logps = np.zeros((t_len, n), dtype=np.float64)
    values = np.zeros((t_len, n), dtype=np.float64)
    rews = np.zeros((t_len, n), dtype=np.float64)
    dones = np.zeros((t_len, n), dtype=np.float64)
    term_means = np.zeros(len(rw.TERM_ORDER))
    ep_fracs: list[float] = []
    for t in range(t_len):
        env._update_commands()
        proprio[t] = env.proprio_obs()
        cmds[t] = env.cmd_obs()
        scan[t] = env.scandots()
        a, logp, v, _ = trainer.act(proprio[t], cmds[t], scan[t])
        actions[t] = a
        logps[t] = logp
        values[t] = v
        reward, done, timeout, info = env.step(a)
        if timeout.any():
            reward = reward + cfg.discount * v * timeout
        rews[t] = reward
        dones[t] = done
        term_means += info["terms"].mean(axis=0)
        if done.any():
            ep_fracs.extend(env.finished_fraction[done].tolist())
    last_values = trainer.value(env.proprio_obs(), env.cmd_obs(), env.scandots())
    adv, returns = compute_gae(rews, values, dones, last_values, cfg.discount, cfg.gae_lambda)
    flat = lambda x: x.reshape(-1, *x.shape[2:])
    return {
        "proprio": flat(proprio),
        "cmds": flat(cmds),
        "scandots": flat(scan),
        "actions": flat(actions),
        "logp": logps.reshape(-1),
        "advantages": adv.reshape(-1),
        "returns": returns.reshape(-1),
        "mean_reward": float(rews.mean()),
        "term_means": term_means / t_len,
        "ep_fractions": ep_fracs,
    }


def run_phase1(
    out_dir,
    kind: str = "oracle",
    iterations: int = 1500,
    seed: int = 1,
    n_envs: int = 128,
    log_every: int = 10,
    save_every: int = 250,
    progress=print,
) -> Path:
    """Train a phase-1 policy (oracle, blind or no-waypoint) and write curves.

    Returns the final checkpoint path.
    """
    if kind not in ("oracle", "blind", "no_waypoint"):
        raise ValueError(f"unknown phase-1 kind {kind}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ppo_cfg = PPOConfig(iterations=iterations, n_envs=n_envs)
    env_cfg = EnvConfig(n_envs=n_envs, seed=seed, waypoint_mode=(kind != "no_waypoint"))
    env = VecFetchEnv(env_cfg)
    net = OracleNet(np.random.default_rng(np.random.SeedSequence([seed, 0xA1])), blind=(kind == "blind"))
    trainer = PPOTrainer(net, ppo_cfg, seed=seed)

    curve_path = out / "curves.csv"
    ckpt_path = out / f"{kind}.dggy"
    t0 = time.time()
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        recent_fracs: list[float] = []
        for it in range(1, iterations + 1):
            batch = collect_rollouts(trainer, env, ppo_cfg)
            try:
                stats = trainer.update(batch)
            except FloatingPointError:
                save_bundle(out / f"{kind}_diverged.dggy", net.descriptor(), net.param_dict())
                raise
            recent_fracs.extend(batch["ep_fractions"])
            if it % log_every == 0 or it == iterations:
                hist = np.bincount(env.levels, minlength=N_LEVELS) / env.n
                row = [
                    it,
                    it * ppo_cfg.steps_per_env * env.n,
                    round(batch["mean_reward"], 6),
                    round(float(np.mean(recent_fracs)) if recent_fracs else 0.0, 4),
                    round(stats["kl"], 6),
                    round(stats["clip_frac"], 4),
                    round(stats["policy_loss"], 6),
                    round(stats["value_loss"], 6),
                ] + [round(float(x), 4) for x in hist] + [f"{x:.6g}" for x in batch["term_means"]]
                writer.writerow(row)
                fh.flush()
                progress(
                    f"[{kind}] iter {it}/{iterations} reward {batch['mean_reward']:.4f} "
                    f"frac {np.mean(recent_fracs) if recent_fracs else 0:.2f} "
                    f"levels {np.round(hist, 2)} ({time.time() - t0:.0f}s)"
                )
                recent_fracs = []
            if it % save_every == 0:
                save_bundle(ckpt_path, net.descriptor(), net.param_dict())
    save_bundle(ckpt_path, net.descriptor(), net.param_dict())
    return ckpt_path
