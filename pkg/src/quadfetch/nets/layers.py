"""Minimal network kernels: dense, strided conv, GRU cell.

Forward passes are functional (activations returned in caches) so sequences
can be unrolled and backpropagated exactly. Everything runs in float32 for
training and float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def elu(x):
    return np.where(x > 0, x, np.exp(np.minimum(x, 0.0)) - 1.0)


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def activate(z, kind: str):
    if kind == "elu":
        return elu(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "none":
        return z
    raise ValueError(f"unknown activation {kind}")


def activate_grad(z, kind: str):
    if kind == "elu":
        return elu_grad(z)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "none":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind}")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """Affine layer with an optional pointwise activation."""

    def __init__(self, n_in: int, n_out: int, act: str = "none", rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / n_in)
        self.W = (rng.standard_normal((n_in, n_out)) * scale).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.act = act

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        z = x @ self.W + self.b
        return activate(z, self.act), (x, z)

    def backward(self, gy, cache):
        x, z = cache
        gz = gy * activate_grad(z, self.act)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_gz = gz.reshape(-1, gz.shape[-1])
        grads = {"W": flat_x.T @ flat_gz, "b": flat_gz.sum(axis=0)}
        return gz @ self.W.T, grads


def im2col(x, k: int, s: int):
    """[B,C,H,W] -> ([B, Ho*Wo, C*k*k], Ho, Wo)."""
    v = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = v.shape[:4]
    cols = np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * k * k)
    return cols, ho, wo


def col2im(gcols, xshape, k: int, s: int, ho: int, wo: int):
    b, c, h, w = xshape
    gx = np.zeros(xshape, dtype=gcols.dtype)
    g = gcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            gx[:, :, ki : ki + ho * s : s, kj : kj + wo * s : s] += g[:, :, :, :, ki, kj]
    return gx


class Conv2d:
    """Valid-padding strided convolution via im2col."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, act: str = "elu", rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (c_in * k * k))
        self.W = (rng.standard_normal((c_in * k * k, c_out)) * scale).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.k = k
        self.stride = stride
        self.act = act
        self.c_in = c_in
        self.c_out = c_out

    def params(self):
        return {"W": self.W, "b": self.b}

    def out_hw(self, h: int, w: int):
        return (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1

    def forward(self, x):
        cols, ho, wo = im2col(x, self.k, self.stride)
        z = cols @ self.W + self.b
        y = activate(z, self.act)
        y = y.transpose(0, 2, 1).reshape(x.shape[0], self.c_out, ho, wo)
        return y, (x.shape, cols, z, ho, wo)

    def backward(self, gy, cache):
        xshape, cols, z, ho, wo = cache
        gy_flat = gy.reshape(gy.shape[0], self.c_out, ho * wo).transpose(0, 2, 1)
        gz = gy_flat * activate_grad(z, self.act)
        grads = {
            "W": np.einsum("bpk,bpc->kc", cols, gz, optimize=True),
            "b": gz.sum(axis=(0, 1)),
        }
        gcols = gz @ self.W.T
        gx = col2im(gcols, xshape, self.k, self.stride, ho, wo)
        return gx, grads


class GRUCell:
    """Gated recurrent unit, gate order (reset | update | candidate)."""

    def __init__(self, n_in: int, n_hidden: int, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        si = np.sqrt(1.0 / n_in)
        sh = np.sqrt(1.0 / n_hidden)
        self.Wi = (rng.standard_normal((n_in, 3 * n_hidden)) * si).astype(dtype)
        self.Wh = (rng.standard_normal((n_hidden, 3 * n_hidden)) * sh).astype(dtype)
        self.bi = np.zeros(3 * n_hidden, dtype=dtype)
        self.bh = np.zeros(3 * n_hidden, dtype=dtype)
        self.n_hidden = n_hidden
        self.n_in = n_in

    def params(self):
        return {"Wi": self.Wi, "Wh": self.Wh, "bi": self.bi, "bh": self.bh}

    def forward(self, x, h):
        nh = self.n_hidden
        gi = x @ self.Wi + self.bi
        gh = h @ self.Wh + self.bh
        r = _sigmoid(gi[..., :nh] + gh[..., :nh])
        z = _sigmoid(gi[..., nh : 2 * nh] + gh[..., nh : 2 * nh])
        hn_pre = gh[..., 2 * nh :]
        n = np.tanh(gi[..., 2 * nh :] + r * hn_pre)
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, r, z, n, hn_pre)

    def backward(self, gh_new, cache):
        x, h, r, z, n, hn_pre = cache
        nh = self.n_hidden
        dn = gh_new * (1.0 - z)
        dz = gh_new * (h - n)
        dh = gh_new * z
        dn_pre = dn * (1.0 - n**2)
        dr = dn_pre * hn_pre
        dhn_pre = dn_pre * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        gi_grad = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
        gh_grad = np.concatenate([dr_pre, dz_pre, dhn_pre], axis=-1)
        fx = x.reshape(-1, x.shape[-1])
        fh = h.reshape(-1, h.shape[-1])
        fgi = gi_grad.reshape(-1, 3 * nh)
        fgh = gh_grad.reshape(-1, 3 * nh)
        grads = {
            "Wi": fx.T @ fgi,
            "Wh": fh.T @ fgh,
            "bi": fgi.sum(axis=0),
            "bh": fgh.sum(axis=0),
        }
        gx = gi_grad @ self.Wi.T
        gh_out = dh + gh_grad @ self.Wh.T
        return gx, gh_out, grads


def merge_grads(*dicts):
    """Sum gradient dicts sharing keys (sequence accumulation)."""
    out: dict[str, np.ndarray] = {}
    for d in dicts:
        for k, v in d.items():
            if k in out:
                out[k] = out[k] + v
            else:
                out[k] = v
    return out


def prefix_dict(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}
