"""Clipped-surrogate PPO with GAE over the hand-rolled networks.

Gradients flow analytically through the Gaussian head: the surrogate picks
the unclipped branch exactly where the clip definition leaves gradient, the
value loss is a plain squared error, and the entropy bonus acts on the
state-independent log-std alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nets import Adam, OracleNet
from ..nets.layers import merge_grads

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PPOConfig:
    clip: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    n_envs: int = 128
    steps_per_env: int = 48
    iterations: int = 1500
    min_std: float = 0.05

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")


def gaussian_logp(actions, mean, log_std):
    std = np.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * (z**2).sum(axis=-1) - log_std.sum() - 0.5 * actions.shape[-1] * LOG_2PI


def gaussian_entropy(log_std):
    return float(log_std.sum() + 0.5 * log_std.size * (1.0 + LOG_2PI))


def compute_gae(rewards, values, dones, last_values, discount, lam):
    """Advantages and returns; `dones` cuts bootstrapping (timeout rewards are
    expected to carry their bootstrap already)."""
    t_len, n = rewards.shape
    adv = np.zeros((t_len, n), dtype=np.float64)
    carry = np.zeros(n, dtype=np.float64)
    next_value = last_values
    for t in reversed(range(t_len)):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + discount * next_value * not_done - values[t]
        carry = delta + discount * lam * not_done * carry
        adv[t] = carry
        next_value = values[t]
    returns = adv + values
    return adv, returns


class PPOTrainer:
    """Single-writer learner over one OracleNet-style policy."""

    def __init__(self, net: OracleNet, cfg: PPOConfig, seed: int = 0):
        self.net = net
        self.cfg = cfg
        self.opt = Adam(net.param_dict(), lr=cfg.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x990]))

    def act(self, proprio, cmds, scandots):
        """Sample actions for rollout; returns (actions, logp, values, mean)."""
        mean, value, _, _ = self.net.forward(proprio, cmds, scandots)
        log_std = np.maximum(self.net.log_std, np.log(self.cfg.min_std))
        std = np.exp(log_std)
        noise = self.rng.standard_normal(mean.shape).astype(mean.dtype)
        actions = mean + std * noise
        logp = gaussian_logp(actions, mean, log_std)
        return actions, logp, value, mean

    def value(self, proprio, cmds, scandots):
        _, value, _, _ = self.net.forward(proprio, cmds, scandots)
        return value

    def update(self, batch: dict) -> dict:
        """4 epochs x 4 minibatches of clipped-surrogate ascent."""
        cfg = self.cfg
        obs_p = batch["proprio"]
        obs_c = batch["cmds"]
        obs_s = batch["scandots"]
        actions = batch["actions"]
        logp_old = batch["logp"]
        adv = batch["advantages"]
        returns = batch["returns"]
        n = actions.shape[0]
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "clip_frac": 0.0, "entropy": 0.0}
        count = 0
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            for mb in np.array_split(order, cfg.minibatches):
                s = self._update_minibatch(
                    obs_p[mb], obs_c[mb], obs_s[mb], actions[mb], logp_old[mb], adv[mb], returns[mb]
                )
                for k in stats:
                    stats[k] += s[k]
                count += 1
        for k in stats:
            stats[k] /= count
        return stats

    def _update_minibatch(self, proprio, cmds, scandots, actions, logp_old, adv, returns):
        cfg = self.cfg
        net = self.net
        b = actions.shape[0]
        mean, value, _, cache = net.forward(proprio, cmds, scandots)
        log_std = np.maximum(net.log_std, np.log(cfg.min_std))
        std = np.exp(log_std)
        z = (actions - mean) / std
        logp = -0.5 * (z**2).sum(axis=-1) - log_std.sum() - 0.5 * actions.shape[-1] * LOG_2PI
        ratio = np.exp(logp - logp_old)
        clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
        surr1 = ratio * adv
        surr2 = clipped * adv
        policy_loss = -np.minimum(surr1, surr2).mean()
        value_err = value - returns
        value_loss = 0.5 * (value_err**2).mean()
        if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
            raise FloatingPointError("PPO loss diverged (NaN/Inf)")

        # d loss / d ratio: unclipped branch, or clipped branch inside the window
        pick1 = surr1 <= surr2
        in_window = (ratio > 1.0 - cfg.clip) & (ratio < 1.0 + cfg.clip)
        dratio = np.where(pick1 | in_window, -adv / b, 0.0)
        dlogp = dratio * ratio
        dmean = dlogp[:, None] * (z / std)
        dlogstd_policy = (dlogp[:, None] * (z**2 - 1.0)).sum(axis=0)
        dvalue = cfg.value_coef * value_err / b
        grads = net.backward(cache, dmean.astype(mean.dtype), dvalue.astype(mean.dtype))
        g_logstd = dlogstd_policy - cfg.entropy_coef
        # clamped entries of log_std produce no gradient
        g_logstd = np.where(net.log_std > np.log(cfg.min_std), g_logstd, np.minimum(g_logstd, 0.0) * 0.0)
        grads = merge_grads(grads, {"log_std": g_logstd.astype(net.log_std.dtype)})
        self.opt.step(grads)

        approx_kl = float((logp_old - logp).mean())
        return {
            "policy_loss": float(policy_loss),
            "value_loss": float(value_loss),
            "kl": approx_kl,
            "clip_frac": float((np.abs(ratio - 1.0) > cfg.clip).mean()),
            "entropy": gaussian_entropy(log_std),
        }
