"""Policy networks: privileged oracle and depth student sharing one actor trunk.

The oracle encodes scandots to a 64-d latent; the student recovers the same
latent from depth history (conv encoder + GRU) so the trunk sees identical
interfaces in both phases. The blind and no-GRU ablations are flags here, not
separate architectures.
"""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Dense, GRUCell, merge_grads, prefix_dict

PROPRIO_DIM = 45
CMD_DIM = 3
SCANDOT_DIM = 187
LATENT_DIM = 64
ACTION_DIM = 12
DEPTH_RES = 64
DEPTH_FEAT_DIM = 32
GRU_HIDDEN = 128

TRUNK_IN = PROPRIO_DIM + CMD_DIM + LATENT_DIM
LOG_STD_INIT = float(np.log(0.5))


def _mlp_forward(layers, x):
    caches = []
    for layer in layers:
        x, c = layer.forward(x)
        caches.append(c)
    return x, caches


def _mlp_backward(layers, gy, caches, prefix):
    grads = {}
    for i in reversed(range(len(layers))):
        gy, g = layers[i].backward(gy, caches[i])
        grads.update(prefix_dict(f"{prefix}.{i}", g))
    return gy, grads


class OracleNet:
    """Scandot-conditioned actor-critic used in phase 1."""

    def __init__(self, rng: np.random.Generator | None = None, dtype=np.float32, blind: bool = False):
        rng = rng or np.random.default_rng(0)
        self.dtype = dtype
        self.blind = blind
        self.scan_enc = [
            Dense(SCANDOT_DIM, 128, "elu", rng, dtype),
            Dense(128, LATENT_DIM, "none", rng, dtype),
        ]
        self.trunk = [
            Dense(TRUNK_IN, 256, "elu", rng, dtype),
            Dense(256, 128, "elu", rng, dtype),
            Dense(128, 64, "elu", rng, dtype),
            Dense(64, ACTION_DIM, "none", rng, dtype),
        ]
        self.critic = [
            Dense(TRUNK_IN, 256, "elu", rng, dtype),
            Dense(256, 128, "elu", rng, dtype),
            Dense(128, 1, "none", rng, dtype),
        ]
        self.log_std = np.full(ACTION_DIM, LOG_STD_INIT, dtype=dtype)

    # parameters ----------------------------------------------------------
    def param_dict(self):
        out = {}
        for i, l in enumerate(self.scan_enc):
            out.update(prefix_dict(f"scan_enc.{i}", l.params()))
        for i, l in enumerate(self.trunk):
            out.update(prefix_dict(f"trunk.{i}", l.params()))
        for i, l in enumerate(self.critic):
            out.update(prefix_dict(f"critic.{i}", l.params()))
        out["log_std"] = self.log_std
        return out

    def load_param_dict(self, d):
        mine = self.param_dict()
        for k, v in d.items():
            if k not in mine:
                raise KeyError(f"unexpected parameter {k}")
            if mine[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {mine[k].shape} vs {v.shape}")
            mine[k][...] = v

    def descriptor(self):
        return {
            "arch": "oracle",
            "blind": self.blind,
            "proprio": PROPRIO_DIM,
            "cmd": CMD_DIM,
            "scandot": SCANDOT_DIM,
            "latent": LATENT_DIM,
            "action": ACTION_DIM,
        }

    # forward/backward ----------------------------------------------------
    def encode(self, scandots):
        if self.blind:
            lead = scandots.shape[:-1]
            return np.zeros(lead + (LATENT_DIM,), dtype=self.dtype), None
        return _mlp_forward(self.scan_enc, scandots)

    def forward(self, proprio, cmds, scandots):
        latent, enc_cache = self.encode(scandots)
        x = np.concatenate([proprio, cmds, latent], axis=-1)
        mean, trunk_cache = _mlp_forward(self.trunk, x)
        value, critic_cache = _mlp_forward(self.critic, x)
        cache = (enc_cache, trunk_cache, critic_cache)
        return mean, value[..., 0], latent, cache

    def backward(self, cache, dmean, dvalue):
        enc_cache, trunk_cache, critic_cache = cache
        gx_t, grads_t = _mlp_backward(self.trunk, dmean, trunk_cache, "trunk")
        gx_c, grads_c = _mlp_backward(self.critic, dvalue[..., None], critic_cache, "critic")
        gx = gx_t + gx_c
        grads = merge_grads(grads_t, grads_c)
        glatent = gx[..., PROPRIO_DIM + CMD_DIM :]
        if not self.blind:
            _, grads_e = _mlp_backward(self.scan_enc, glatent, enc_cache, "scan_enc")
            grads = merge_grads(grads, grads_e)
        return grads


class StudentNet:
    """Depth-history policy distilled from the oracle.

    recurrent=False swaps the GRU for a single feedforward layer (the no-GRU
    ablation); with_critic adds a value head so the architecture can also be
    trained directly by PPO (the no-distillation ablation).
    """

    def __init__(
        self,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        recurrent: bool = True,
        with_critic: bool = False,
    ):
        rng = rng or np.random.default_rng(0)
        self.dtype = dtype
        self.recurrent = recurrent
        self.with_critic = with_critic
        self.conv = [
            Conv2d(1, 4, 5, 2, "elu", rng, dtype),
            Conv2d(4, 8, 3, 2, "elu", rng, dtype),
            Conv2d(8, 8, 3, 2, "elu", rng, dtype),
        ]
        self.fc = Dense(288, DEPTH_FEAT_DIM, "none", rng, dtype)
        rnn_in = DEPTH_FEAT_DIM + PROPRIO_DIM + CMD_DIM
        if recurrent:
            self.rnn = GRUCell(rnn_in, GRU_HIDDEN, rng, dtype)
        else:
            self.rnn = Dense(rnn_in, GRU_HIDDEN, "elu", rng, dtype)
        self.head = Dense(GRU_HIDDEN, LATENT_DIM, "none", rng, dtype)
        self.trunk = [
            Dense(TRUNK_IN, 256, "elu", rng, dtype),
            Dense(256, 128, "elu", rng, dtype),
            Dense(128, 64, "elu", rng, dtype),
            Dense(64, ACTION_DIM, "none", rng, dtype),
        ]
        self.log_std = np.full(ACTION_DIM, LOG_STD_INIT, dtype=dtype)
        self.critic = (
            [
                Dense(TRUNK_IN, 256, "elu", rng, dtype),
                Dense(256, 128, "elu", rng, dtype),
                Dense(128, 1, "none", rng, dtype),
            ]
            if with_critic
            else []
        )

    def param_dict(self):
        out = {}
        for i, l in enumerate(self.conv):
            out.update(prefix_dict(f"conv.{i}", l.params()))
        out.update(prefix_dict("fc", self.fc.params()))
        out.update(prefix_dict("rnn", self.rnn.params()))
        out.update(prefix_dict("head", self.head.params()))
        for i, l in enumerate(self.trunk):
            out.update(prefix_dict(f"trunk.{i}", l.params()))
        for i, l in enumerate(self.critic):
            out.update(prefix_dict(f"critic.{i}", l.params()))
        out["log_std"] = self.log_std
        return out

    def load_param_dict(self, d):
        mine = self.param_dict()
        for k, v in d.items():
            if k not in mine:
                raise KeyError(f"unexpected parameter {k}")
            if mine[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {mine[k].shape} vs {v.shape}")
            mine[k][...] = v

    def load_trunk_from(self, oracle_params: dict):
        """Copy the phase-1 trunk (and exploration std) into this student."""
        mine = self.param_dict()
        for k, v in oracle_params.items():
            if k.startswith("trunk.") or k == "log_std":
                if mine[k].shape != v.shape:
                    raise ValueError(f"trunk shape mismatch for {k}")
                mine[k][...] = v

    def descriptor(self):
        return {
            "arch": "student",
            "recurrent": self.recurrent,
            "with_critic": self.with_critic,
            "latent": LATENT_DIM,
            "depth_res": DEPTH_RES,
            "action": ACTION_DIM,
        }

    # depth encoder ---------------------------------------------------------
    def encode_frames(self, frames):
        """[F,64,64] depth (meters) -> [F,32] features; normalizes range."""
        x = (np.asarray(frames, dtype=self.dtype)[:, None, :, :] - 1.5) / 1.5
        caches = []
        for conv in self.conv:
            x, c = conv.forward(x)
            caches.append(c)
        flat = x.reshape(x.shape[0], -1)
        feat, fc_cache = self.fc.forward(flat)
        return feat, (caches, fc_cache, x.shape)

    def encoder_backward(self, gfeat, cache):
        caches, fc_cache, xshape = cache
        gflat, fc_grads = self.fc.backward(gfeat, fc_cache)
        gx = gflat.reshape(xshape)
        grads = prefix_dict("fc", fc_grads)
        for i in reversed(range(len(self.conv))):
            gx, g = self.conv[i].backward(gx, caches[i])
            grads.update(prefix_dict(f"conv.{i}", g))
        return grads

    # recurrent core --------------------------------------------------------
    def init_hidden(self, batch: int):
        return np.zeros((batch, GRU_HIDDEN), dtype=self.dtype)

    def core_step(self, feat, proprio, cmds, h):
        x = np.concatenate([feat, proprio, cmds], axis=-1)
        if self.recurrent:
            h_new, cache = self.rnn.forward(x, h)
        else:
            h_new, cache = self.rnn.forward(x)
        latent, head_cache = self.head.forward(h_new)
        return latent, h_new, (cache, head_cache)

    def actor(self, proprio, cmds, latent):
        x = np.concatenate([proprio, cmds, latent], axis=-1)
        return _mlp_forward(self.trunk, x)

    def value(self, proprio, cmds, latent):
        if not self.with_critic:
            raise RuntimeError("student built without a critic")
        x = np.concatenate([proprio, cmds, latent], axis=-1)
        v, cache = _mlp_forward(self.critic, x)
        return v[..., 0], cache

    def trunk_backward(self, dmean, trunk_cache):
        gx, grads = _mlp_backward(self.trunk, dmean, trunk_cache, "trunk")
        return gx, grads

    def critic_backward(self, dvalue, critic_cache):
        gx, grads = _mlp_backward(self.critic, dvalue[..., None], critic_cache, "critic")
        return gx, grads

    def core_backward(self, glatent, gh_carry, cache):
        """One BPTT step: returns (gfeat, gh_prev, grads)."""
        rnn_cache, head_cache = cache
        gh, head_grads = self.head.backward(glatent, head_cache)
        gh = gh + gh_carry
        grads = prefix_dict("head", head_grads)
        if self.recurrent:
            gx, gh_prev, g = self.rnn.backward(gh, rnn_cache)
        else:
            gx, g = self.rnn.backward(gh, rnn_cache)
            gh_prev = np.zeros_like(gh_carry)
        grads.update(prefix_dict("rnn", g))
        return gx[..., :DEPTH_FEAT_DIM], gh_prev, grads


def build_from_descriptor(desc: dict, rng=None, dtype=np.float32):
    if desc["arch"] == "oracle":
        return OracleNet(rng, dtype, blind=desc.get("blind", False))
    if desc["arch"] == "student":
        return StudentNet(
            rng,
            dtype,
            recurrent=desc.get("recurrent", True),
            with_critic=desc.get("with_critic", False),
        )
    raise ValueError(f"unknown architecture {desc['arch']}")
