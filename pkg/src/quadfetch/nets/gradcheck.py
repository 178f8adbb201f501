"""Central-difference verification of every analytic gradient path.

Runs in float64 with h = 1e-4; training itself stays in float32. The student
check unrolls a full 8-step sequence with shared depth frames so BPTT and the
conv encoder are exercised together.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Dense, GRUCell, merge_grads, prefix_dict
from .models import CMD_DIM, PROPRIO_DIM, SCANDOT_DIM, OracleNet, StudentNet

FD_H = 1e-4
PROBES_PER_ARRAY = 16


def _max_rel_err(params, loss_fn, grads, rng, probes=PROBES_PER_ARRAY, h=FD_H):
    worst = 0.0
    for name in sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        k = min(probes, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn()
            flat[i] = old - h
            lm = loss_fn()
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-3)
            worst = max(worst, err)
    return worst


def check_dense(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    layer = Dense(9, 7, "elu", rng, np.float64)
    x = rng.standard_normal((4, 9))
    target = rng.standard_normal((4, 7))

    def loss_fn():
        y, _ = layer.forward(x)
        return float(((y - target) ** 2).sum())

    y, cache = layer.forward(x)
    _, grads = layer.backward(2 * (y - target), cache)
    return _max_rel_err(layer.params(), loss_fn, grads, np.random.default_rng(seed + 1))


def check_conv(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    layer = Conv2d(3, 4, 3, 2, "elu", rng, np.float64)
    x = rng.standard_normal((2, 3, 12, 12))
    ho, wo = layer.out_hw(12, 12)
    target = rng.standard_normal((2, 4, ho, wo))

    def loss_fn():
        y, _ = layer.forward(x)
        return float(((y - target) ** 2).sum())

    y, cache = layer.forward(x)
    _, grads = layer.backward(2 * (y - target), cache)
    return _max_rel_err(layer.params(), loss_fn, grads, np.random.default_rng(seed + 1))


def check_gru(seed: int = 0, steps: int = 5) -> float:
    rng = np.random.default_rng(seed)
    cell = GRUCell(6, 10, rng, np.float64)
    xs = rng.standard_normal((steps, 3, 6))
    targets = rng.standard_normal((steps, 3, 10))

    def run():
        h = np.zeros((3, 10))
        hs, caches = [], []
        for t in range(steps):
            h, c = cell.forward(xs[t], h)
            hs.append(h)
            caches.append(c)
        return hs, caches

    def loss_fn():
        hs, _ = run()
        return float(sum(((hs[t] - targets[t]) ** 2).sum() for t in range(steps)))

    hs, caches = run()
    carry = np.zeros((3, 10))
    grads: dict[str, np.ndarray] = {}
    for t in reversed(range(steps)):
        gh = 2 * (hs[t] - targets[t]) + carry
        _, carry, g = cell.backward(gh, caches[t])
        grads = merge_grads(grads, g)
    return _max_rel_err(cell.params(), loss_fn, grads, np.random.default_rng(seed + 1))


def check_oracle(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    net = OracleNet(rng, np.float64)
    proprio = rng.standard_normal((3, PROPRIO_DIM))
    cmds = rng.standard_normal((3, CMD_DIM))
    scan = rng.standard_normal((3, SCANDOT_DIM))
    tm = rng.standard_normal((3, 12))
    tv = rng.standard_normal(3)

    def loss_fn():
        mean, value, _, _ = net.forward(proprio, cmds, scan)
        return float(((mean - tm) ** 2).sum() + ((value - tv) ** 2).sum() + (np.exp(net.log_std) ** 2).sum())

    mean, value, _, cache = net.forward(proprio, cmds, scan)
    grads = net.backward(cache, 2 * (mean - tm), 2 * (value - tv))
    grads["log_std"] = 2.0 * np.exp(2.0 * net.log_std)
    return _max_rel_err(net.param_dict(), loss_fn, grads, np.random.default_rng(seed + 1))


def check_student_sequence(seed: int = 0, steps: int = 8, batch: int = 2, frames: int = 3) -> float:
    rng = np.random.default_rng(seed)
    net = StudentNet(rng, np.float64, recurrent=True)
    depth = rng.uniform(0.05, 3.0, size=(frames, 64, 64))
    frame_of = (np.arange(steps) * frames // steps).clip(0, frames - 1)
    proprio = rng.standard_normal((steps, batch, PROPRIO_DIM))
    cmds = rng.standard_normal((steps, batch, CMD_DIM))
    t_latent = rng.standard_normal((steps, batch, 64))
    t_mean = rng.standard_normal((steps, batch, 12))

    def run():
        feats, enc_cache = net.encode_frames(depth)
        h = np.zeros((batch, net.rnn.n_hidden))
        latents, means, core_caches, trunk_caches = [], [], [], []
        for t in range(steps):
            f = np.broadcast_to(feats[frame_of[t]], (batch, feats.shape[1]))
            latent, h, cc = net.core_step(f, proprio[t], cmds[t], h)
            mean, tc = net.actor(proprio[t], cmds[t], latent)
            latents.append(latent)
            means.append(mean)
            core_caches.append(cc)
            trunk_caches.append(tc)
        return feats, enc_cache, latents, means, core_caches, trunk_caches

    def loss_fn():
        _, _, latents, means, _, _ = run()
        loss = sum(((latents[t] - t_latent[t]) ** 2).sum() + ((means[t] - t_mean[t]) ** 2).sum() for t in range(steps))
        return float(loss) + float((np.exp(net.log_std) ** 2).sum())

    feats, enc_cache, latents, means, core_caches, trunk_caches = run()
    gfeat_frames = np.zeros_like(feats)
    carry = np.zeros((batch, net.rnn.n_hidden))
    grads: dict[str, np.ndarray] = {}
    for t in reversed(range(steps)):
        dmean = 2 * (means[t] - t_mean[t])
        gx_trunk, g_trunk = net.trunk_backward(dmean, trunk_caches[t])
        glatent = 2 * (latents[t] - t_latent[t]) + gx_trunk[..., PROPRIO_DIM + CMD_DIM :]
        gfeat, carry, g_core = net.core_backward(glatent, carry, core_caches[t])
        gfeat_frames[frame_of[t]] += gfeat.sum(axis=0)
        grads = merge_grads(grads, g_trunk, g_core)
    g_enc = net.encoder_backward(gfeat_frames, enc_cache)
    grads = merge_grads(grads, g_enc)
    grads["log_std"] = 2.0 * np.exp(2.0 * net.log_std)
    return _max_rel_err(net.param_dict(), loss_fn, grads, np.random.default_rng(seed + 1))


def gradcheck_all(seed: int = 0) -> dict[str, float]:
    """Max relative error per check; all must come in under 1e-4."""
    return {
        "dense": check_dense(seed),
        "conv2d": check_conv(seed),
        "gru_bptt": check_gru(seed),
        "oracle": check_oracle(seed),
        "student_seq8": check_student_sequence(seed),
    }
