"""Visual encoder f, momentum key encoder g, semantic encoder h and the
masked-attribute decoder, all as plain parameter dicts over ``dcen.nn``."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import nn

Params = dict[str, np.ndarray]

BACKBONES = ("small_conv", "mlp_on_features")


@dataclass(frozen=True)
class ArchConfig:
    attr_dim: int
    input_shape: tuple[int, ...] = (32, 32, 3)
    backbone: str = "small_conv"
    conv_widths: tuple[int, ...] = (32, 64, 128)
    norm_groups: int = 8
    mlp_hidden: int = 256
    embed_dim: int = 128
    K: int = 2
    sem_hidden: int = 128
    dec_hidden: int = 128

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.backbone == "small_conv":
            if len(self.input_shape) != 3:
                raise ValueError("small_conv expects an (H, W, C) input shape")
            if any(w % self.norm_groups for w in self.conv_widths):
                raise ValueError("conv widths must be divisible by norm_groups")
        elif len(self.input_shape) != 1:
            raise ValueError("mlp_on_features expects a (D,) input shape")

    def to_dict(self) -> dict[str, Any]:
        return {
            "attr_dim": self.attr_dim,
            "input_shape": list(self.input_shape),
            "backbone": self.backbone,
            "conv_widths": list(self.conv_widths),
            "norm_groups": self.norm_groups,
            "mlp_hidden": self.mlp_hidden,
            "embed_dim": self.embed_dim,
            "K": self.K,
            "sem_hidden": self.sem_hidden,
            "dec_hidden": self.dec_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ArchConfig":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["conv_widths"] = tuple(d["conv_widths"])
        return cls(**d)


@dataclass(frozen=True)
class ForwardOutput:
    raw: np.ndarray
    unit: np.ndarray
    cache: Any = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EncoderSet:
    """Parameters of all four networks. ``*_stats`` hold batch-norm running
    statistics, which are state rather than trainable parameters."""

    arch: ArchConfig
    f: Params
    g: Params
    h: Params
    hhat: Params
    f_stats: Params
    g_stats: Params
    h_stats: Params

    def collections(self) -> dict[str, Params]:
        return {"f": self.f, "g": self.g, "h": self.h, "hhat": self.hhat,
                "f_stats": self.f_stats, "g_stats": self.g_stats, "h_stats": self.h_stats}


# --- initialization ---------------------------------------------------------

def _init_visual(arch: ArchConfig, rng: np.random.Generator) -> tuple[Params, Params]:
    p: Params = {}
    if arch.backbone == "small_conv":
        cin = arch.input_shape[2]
        for i, width in enumerate(arch.conv_widths):
            p[f"conv{i}.w"] = nn.he_normal(rng, (3, 3, cin, width), 9 * cin)
            p[f"norm{i}.gamma"] = np.ones(width)
            p[f"norm{i}.beta"] = np.zeros(width)
            cin = width
        feat = arch.conv_widths[-1]
    else:
        d = arch.input_shape[0]
        p["fc0.w"] = nn.he_normal(rng, (d, arch.mlp_hidden), d)
        p["fc0.b"] = np.zeros(arch.mlp_hidden)
        feat = arch.mlp_hidden
    p["pool_bn.gamma"] = np.ones(feat)
    p["pool_bn.beta"] = np.zeros(feat)
    p["head.w"] = rng.standard_normal((feat, arch.embed_dim)) * np.sqrt(1.0 / feat)
    p["head.b"] = np.zeros(arch.embed_dim)
    stats = {"pool_bn.mean": np.zeros(feat), "pool_bn.var": np.ones(feat)}
    return p, stats


def _init_semantic(arch: ArchConfig, rng: np.random.Generator) -> tuple[Params, Params]:
    p: Params = {}
    stats: Params = {}
    din = arch.attr_dim
    for i in range(arch.K):
        dout = arch.embed_dim if i == arch.K - 1 else arch.sem_hidden
        p[f"fc{i}.w"] = nn.he_normal(rng, (din, dout), din)
        p[f"bn{i}.gamma"] = np.ones(dout)
        p[f"bn{i}.beta"] = np.zeros(dout)
        stats[f"bn{i}.mean"] = np.zeros(dout)
        stats[f"bn{i}.var"] = np.ones(dout)
        din = dout
    return p, stats


def _init_decoder(arch: ArchConfig, rng: np.random.Generator) -> Params:
    e, hid = arch.embed_dim, arch.dec_hidden
    p: Params = {
        "vis.w": nn.he_normal(rng, (e, hid), e), "vis.b": np.zeros(hid),
        "sem.w": nn.he_normal(rng, (e, hid), e), "sem.b": np.zeros(hid),
    }
    din = 2 * hid
    for i in range(arch.K):
        dout = arch.attr_dim if i == arch.K - 1 else hid
        p[f"dec{i}.w"] = nn.he_normal(rng, (din, dout), din)
        p[f"dec{i}.b"] = np.zeros(dout)
        din = dout
    return p


def init_encoders(arch: ArchConfig, seed: int) -> EncoderSet:
    """Deterministic initialization; g starts as an exact copy of f."""
    rng = np.random.default_rng(seed)
    f, f_stats = _init_visual(arch, rng)
    h, h_stats = _init_semantic(arch, rng)
    hhat = _init_decoder(arch, rng)
    g = {k: v.copy() for k, v in f.items()}
    g_stats = {k: v.copy() for k, v in f_stats.items()}
    return EncoderSet(arch=arch, f=f, g=g, h=h, hhat=hhat,
                      f_stats=f_stats, g_stats=g_stats, h_stats=h_stats)


# --- visual encoder ---------------------------------------------------------

def visual_forward(params: Params, x: np.ndarray, arch: ArchConfig, stats: Params,
                   train: bool = False, keep_cache: bool = False) -> tuple[ForwardOutput, Params]:
    """Backbone -> global pool -> BN -> affine head.

    Returns the output and the updated pooled-feature BN statistics
    (unchanged in eval mode).
    """
    if tuple(x.shape[1:]) != tuple(arch.input_shape):
        raise ValueError(f"expected input of shape (B, {', '.join(map(str, arch.input_shape))}), "
                         f"got {x.shape}")
    caches = []
    if arch.backbone == "small_conv":
        a = x
        for i in range(len(arch.conv_widths)):
            a, c_conv = nn.conv2d_forward(a, params[f"conv{i}.w"])
            a, c_norm = nn.group_norm_forward(a, params[f"norm{i}.gamma"], params[f"norm{i}.beta"],
                                              arch.norm_groups)
            a, c_relu = nn.relu_forward(a)
            caches.append((c_conv, c_norm, c_relu))
        feat, c_pool = nn.global_avg_pool_forward(a)
    else:
        a, c_fc = nn.linear_forward(x, params["fc0.w"], params["fc0.b"])
        feat, c_relu = nn.relu_forward(a)
        caches.append((c_fc, c_relu))
        c_pool = None
    feat, c_bn, mean, var = nn.batch_norm_forward(feat, params["pool_bn.gamma"], params["pool_bn.beta"],
                                                  stats["pool_bn.mean"], stats["pool_bn.var"], train)
    raw, c_head = nn.linear_forward(feat, params["head.w"], params["head.b"])
    cache = (caches, c_pool, c_bn, c_head) if keep_cache else None
    out = ForwardOutput(raw=raw, unit=nn.l2_normalize(raw), cache=cache)
    return out, {"pool_bn.mean": mean, "pool_bn.var": var}


def visual_backward(params: Params, out: ForwardOutput, d_raw: np.ndarray,
                    arch: ArchConfig) -> Params:
    """Gradients of a scalar w.r.t. f's parameters given dL/d(raw)."""
    caches, c_pool, c_bn, c_head = out.cache
    grads: Params = {}
    dfeat, grads["head.w"], grads["head.b"] = nn.linear_backward(d_raw, c_head)
    dfeat, grads["pool_bn.gamma"], grads["pool_bn.beta"] = nn.batch_norm_backward(dfeat, c_bn)
    if arch.backbone == "small_conv":
        da = nn.global_avg_pool_backward(dfeat, c_pool)
        for i in reversed(range(len(arch.conv_widths))):
            c_conv, c_norm, c_relu = caches[i]
            da = nn.relu_backward(da, c_relu)
            da, grads[f"norm{i}.gamma"], grads[f"norm{i}.beta"] = nn.group_norm_backward(da, c_norm)
            da, grads[f"conv{i}.w"] = nn.conv2d_backward(da, c_conv)
    else:
        c_fc, c_relu = caches[0]
        da = nn.relu_backward(dfeat, c_relu)
        _, grads["fc0.w"], grads["fc0.b"] = nn.linear_backward(da, c_fc)
    return grads


# --- semantic encoder -------------------------------------------------------

def semantic_forward(h_params: Params, attrs: np.ndarray, arch: ArchConfig,
                     stats: Params, train: bool = False,
                     keep_cache: bool = False) -> tuple[ForwardOutput, Params]:
    """K blocks of FC -> BN -> ReLU. Returns the output and updated BN statistics
    (unchanged in eval mode)."""
    if attrs.ndim != 2 or attrs.shape[1] != arch.attr_dim:
        raise ValueError(f"expected attribute rows of length {arch.attr_dim}, got shape {attrs.shape}")
    a = attrs
    caches = []
    new_stats: Params = {}
    for i in range(arch.K):
        a, c_fc = nn.linear_forward(a, h_params[f"fc{i}.w"], 0.0)
        a, c_bn, new_stats[f"bn{i}.mean"], new_stats[f"bn{i}.var"] = nn.batch_norm_forward(
            a, h_params[f"bn{i}.gamma"], h_params[f"bn{i}.beta"],
            stats[f"bn{i}.mean"], stats[f"bn{i}.var"], train)
        a, c_relu = nn.relu_forward(a)
        caches.append((c_fc, c_bn, c_relu))
    out = ForwardOutput(raw=a, unit=nn.l2_normalize(a), cache=caches if keep_cache else None)
    return out, new_stats


def semantic_backward(out: ForwardOutput, d_raw: np.ndarray, arch: ArchConfig) -> Params:
    grads: Params = {}
    da = d_raw
    for i in reversed(range(arch.K)):
        c_fc, c_bn, c_relu = out.cache[i]
        da = nn.relu_backward(da, c_relu)
        da, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = nn.batch_norm_backward(da, c_bn)
        da, grads[f"fc{i}.w"], _ = nn.linear_backward(da, c_fc)
    return grads


# --- masked attribute decoder -----------------------------------------------

def decoder_forward(hhat_params: Params, visual_in: np.ndarray, semantic_in: np.ndarray,
                    arch: ArchConfig, keep_cache: bool = False):
    """Fuse visual and semantic features, decode to attr_dim through a sigmoid.

    Returns ``(pred, cache)``; cache is None unless requested.
    """
    if visual_in.shape[0] != semantic_in.shape[0]:
        raise ValueError(f"batch size mismatch: {visual_in.shape[0]} visual rows vs "
                         f"{semantic_in.shape[0]} semantic rows")
    p = hhat_params
    v, c_v = nn.linear_forward(visual_in, p["vis.w"], p["vis.b"])
    v, r_v = nn.relu_forward(v)
    s, c_s = nn.linear_forward(semantic_in, p["sem.w"], p["sem.b"])
    s, r_s = nn.relu_forward(s)
    a = np.concatenate([v, s], axis=1)
    caches = []
    for i in range(arch.K):
        a, c_fc = nn.linear_forward(a, p[f"dec{i}.w"], p[f"dec{i}.b"])
        if i == arch.K - 1:
            a, c_act = nn.sigmoid_forward(a)
        else:
            a, c_act = nn.relu_forward(a)
        caches.append((c_fc, c_act))
    cache = (c_v, r_v, c_s, r_s, caches) if keep_cache else None
    return a, cache


def decoder_backward(cache, d_pred: np.ndarray, arch: ArchConfig):
    """Returns (param grads, d visual_in, d semantic_in)."""
    c_v, r_v, c_s, r_s, caches = cache
    grads: Params = {}
    da = d_pred
    for i in reversed(range(arch.K)):
        c_fc, c_act = caches[i]
        if i == arch.K - 1:
            da = nn.sigmoid_backward(da, c_act)
        else:
            da = nn.relu_backward(da, c_act)
        da, grads[f"dec{i}.w"], grads[f"dec{i}.b"] = nn.linear_backward(da, c_fc)
    hid = arch.dec_hidden
    dv, ds = da[:, :hid], da[:, hid:]
    dv = nn.relu_backward(dv, r_v)
    d_vis, grads["vis.w"], grads["vis.b"] = nn.linear_backward(dv, c_v)
    ds = nn.relu_backward(ds, r_s)
    d_sem, grads["sem.w"], grads["sem.b"] = nn.linear_backward(ds, c_s)
    return grads, d_vis, d_sem


# --- momentum encoder -------------------------------------------------------

def momentum_update(enc: EncoderSet, m: float) -> EncoderSet:
    """g <- m * g + (1 - m) * f, elementwise over every parameter of f."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    g = {k: m * enc.g[k] + (1.0 - m) * enc.f[k] for k in enc.f}
    return replace(enc, g=g)


def param_distance(a: Params, b: Params) -> float:
    return float(np.sqrt(sum(np.sum((a[k] - b[k]) ** 2) for k in a)))
