"""Low-level image transformations and the two-view sampler.

Images are float arrays of shape (H, W, C) with values in [0, 1]. The
individual ops are pure; random draws happen in :func:`apply_pipeline`, which
runs the ops of an :class:`AugmentationSpec` in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

OP_ORDER = ("crop", "flip", "gray", "color_jitter", "blur", "rotation", "swap")

# (brightness, contrast, saturation, hue)
JITTER_PRESETS = {
    "v1": (0.4, 0.4, 0.4, 0.4),
    "v2": (0.4, 0.4, 0.4, 0.1),
    "v3": (0.8, 0.8, 0.8, 0.2),
}

LUMA = np.array([0.299, 0.587, 0.114])


# --- geometry ---------------------------------------------------------------

def sample_crop_box(height: int, width: int, scale: tuple[float, float],
                    rng: np.random.Generator,
                    ratio: tuple[float, float] = (3 / 4, 4 / 3), attempts: int = 10):
    """Draw a continuous crop window ``(top, left, h, w)`` whose area fraction lies
    in ``scale``. Falls back to a square-ish window of the drawn area."""
    lo, hi = scale
    if not 0 < lo <= hi <= 1:
        raise ValueError(f"scale range must satisfy 0 < lo <= hi <= 1, got {scale}")
    total = height * width
    if lo * total < 1.0:
        raise ValueError("crop window would be smaller than 1 pixel")
    log_r = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        area = rng.uniform(lo, hi) * total
        r = math.exp(rng.uniform(*log_r))
        w = math.sqrt(area * r)
        h = math.sqrt(area / r)
        if w <= width and h <= height:
            break
    else:
        area = rng.uniform(lo, hi) * total
        r = min(max(width / height, area / height ** 2), width ** 2 / area)
        w = math.sqrt(area * r)
        h = math.sqrt(area / r)
    top = rng.uniform(0.0, height - h)
    left = rng.uniform(0.0, width - w)
    return top, left, h, w


def crop_resize(img: np.ndarray, box, out_size: int) -> np.ndarray:
    """Bilinear resample of the window ``box`` to ``out_size`` x ``out_size``."""
    top, left, h, w = box
    H, W = img.shape[:2]
    ys = top + (np.arange(out_size) + 0.5) * (h / out_size) - 0.5
    xs = left + (np.arange(out_size) + 0.5) * (w / out_size) - 0.5
    ys = np.clip(ys, 0, H - 1)
    xs = np.clip(xs, 0, W - 1)
    return _bilinear(img, ys[:, None], xs[None, :], fill=None)


def random_resized_crop(img: np.ndarray, scale: tuple[float, float], out_size: int,
                        rng: np.random.Generator) -> np.ndarray:
    box = sample_crop_box(img.shape[0], img.shape[1], scale, rng)
    return crop_resize(img, box, out_size)


def _bilinear(img, ys, xs, fill: float | None):
    """Sample every channel at (ys, xs); ``fill`` replaces out-of-bounds points
    (``None`` clamps to the border)."""
    H, W = img.shape[:2]
    ys, xs = np.broadcast_arrays(ys, xs)
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    y0 = y0.astype(int)
    x0 = x0.astype(int)
    out = np.zeros(ys.shape + (img.shape[2],), dtype=img.dtype)
    for dy, dx, wgt in ((0, 0, (1 - wy) * (1 - wx)), (0, 1, (1 - wy) * wx),
                        (1, 0, wy * (1 - wx)), (1, 1, wy * wx)):
        yy = y0 + dy
        xx = x0 + dx
        inside = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        vals = img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
        if fill is not None:
            vals = np.where(inside[..., None], vals, fill)
        # skip exact-zero weights so identity resampling is bit-exact
        out += np.where(wgt == 0, 0.0, wgt * vals)
    return out


def horizontal_flip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def rotate(img: np.ndarray, angle_deg: float, max_angle: float = 30.0) -> np.ndarray:
    """Rotate about the image center with bilinear sampling and zero fill."""
    if abs(angle_deg) > max_angle:
        raise ValueError(f"rotation angle {angle_deg} exceeds the configured maximum {max_angle}")
    if angle_deg == 0:
        return img.copy()
    H, W = img.shape[:2]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    t = math.radians(angle_deg)
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    # inverse map: output pixel -> source location
    sy = cy + (yy - cy) * math.cos(t) - (xx - cx) * math.sin(t)
    sx = cx + (yy - cy) * math.sin(t) + (xx - cx) * math.cos(t)
    return np.clip(_bilinear(img, sy, sx, fill=0.0), 0.0, 1.0)


def patch_swap(img: np.ndarray, grid_n: int, rng: np.random.Generator | None = None,
               perm: np.ndarray | None = None) -> np.ndarray:
    """Cut the image into grid_n x grid_n tiles and permute them.

    When a side is not divisible by ``grid_n`` the largest centered region that
    is gets shuffled and the leftover border stays in place, so the pixel
    multiset is always preserved. ``perm[i]`` is the source tile placed at
    position ``i`` (row-major); it is drawn uniformly from ``rng`` if omitted.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    H, W = img.shape[:2]
    th, tw = H // grid_n, W // grid_n
    if th < 1 or tw < 1:
        raise ValueError(f"image of size {H}x{W} is too small for a {grid_n}x{grid_n} grid")
    n = grid_n * grid_n
    if perm is None:
        perm = rng.permutation(n)
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError("perm must be a permutation of the tile indices")
    y0, x0 = (H - th * grid_n) // 2, (W - tw * grid_n) // 2
    region = img[y0:y0 + th * grid_n, x0:x0 + tw * grid_n]
    tiles = region.reshape(grid_n, th, grid_n, tw, -1).transpose(0, 2, 1, 3, 4).reshape(n, th, tw, -1)
    shuffled = tiles[perm].reshape(grid_n, grid_n, th, tw, -1).transpose(0, 2, 1, 3, 4)
    out = img.copy()
    out[y0:y0 + th * grid_n, x0:x0 + tw * grid_n] = shuffled.reshape(th * grid_n, tw * grid_n, -1)
    return out


# --- filtering --------------------------------------------------------------

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), reflect padding."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


# --- color ------------------------------------------------------------------

def to_gray(img: np.ndarray) -> np.ndarray:
    lum = img @ LUMA
    return np.repeat(lum[..., None], 3, axis=2)


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    d = np.where(delta > 0, delta, 1)
    rc, gc, bc = (maxc - r) / d, (maxc - g) / d, (maxc - b) / d
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    choices = [np.stack(c, axis=-1) for c in
               ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))]
    return np.choose(i[..., None], choices)


def color_jitter(img: np.ndarray, factors: tuple[float, float, float, float]) -> np.ndarray:
    """Apply brightness, contrast, saturation (multiplicative factors) and a hue
    shift (fraction of the hue circle), in that order."""
    bright, contrast, sat, hue = factors
    out = img
    if bright != 1.0:
        out = np.clip(out * bright, 0.0, 1.0)
    if contrast != 1.0:
        mean = (out @ LUMA).mean()
        out = np.clip(contrast * out + (1.0 - contrast) * mean, 0.0, 1.0)
    if sat != 1.0:
        out = np.clip(sat * out + (1.0 - sat) * to_gray(out), 0.0, 1.0)
    if hue != 0.0:
        hsv = _rgb_to_hsv(out)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        out = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return out.copy() if out is img else out


def sample_jitter_factors(params: tuple[float, float, float, float], rng: np.random.Generator):
    b, c, s, h = params
    if min(b, c, s) < 0:
        raise ValueError("brightness/contrast/saturation strengths must be >= 0")
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"hue strength must lie in [0, 1], got {h}")

    def draw(x):
        return 1.0 if x == 0 else rng.uniform(max(0.0, 1.0 - x), 1.0 + x)

    return draw(b), draw(c), draw(s), (0.0 if h == 0 else rng.uniform(-h, h))


def color_ops(img: np.ndarray, mode: str, params=None,
              rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "gray":
        return to_gray(img)
    if mode == "jitter":
        if isinstance(params, str):
            params = JITTER_PRESETS[params]
        return color_jitter(img, sample_jitter_factors(tuple(params), rng))
    raise ValueError(f"unknown color mode {mode!r}")


# --- pipeline ---------------------------------------------------------------

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "crop": {"scale": [0.2, 1.0]},
    "flip": {},
    "gray": {},
    "color_jitter": {"strength": list(JITTER_PRESETS["v1"])},
    "blur": {"sigma": [0.1, 2.0]},
    "rotation": {"max_angle": 30.0},
    "swap": {"grid_n": 3},
}


@dataclass(frozen=True)
class AugOp:
    name: str
    p: float
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in OP_ORDER:
            raise ValueError(f"unknown augmentation op {self.name!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability for {self.name} must lie in [0, 1], got {self.p}")

    def param(self, key):
        return self.params.get(key, DEFAULT_PARAMS[self.name].get(key))


@dataclass(frozen=True)
class AugmentationSpec:
    ops: tuple[AugOp, ...]
    out_size: int = 32

    def __post_init__(self):
        names = [op.name for op in self.ops]
        if len(set(names)) != len(names):
            raise ValueError("each augmentation op may appear at most once")
        if names != sorted(names, key=OP_ORDER.index):
            raise ValueError(f"ops must follow the order {OP_ORDER}")

    def to_dict(self) -> dict[str, Any]:
        return {"out_size": self.out_size,
                "ops": [{"name": o.name, "p": o.p, "params": dict(o.params)} for o in self.ops]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AugmentationSpec":
        if "preset" in d:
            return preset(d["preset"], out_size=d.get("out_size", 32))
        ops = tuple(AugOp(o["name"], float(o["p"]), dict(o.get("params", {}))) for o in d["ops"])
        return cls(ops=ops, out_size=int(d.get("out_size", 32)))


def _ops(*items) -> tuple[AugOp, ...]:
    return tuple(AugOp(n, p, prm) for n, p, prm in items)


_CROP = ("crop", 1.0, {})
_FLIP = ("flip", 0.5, {})
_BLUR = ("blur", 0.5, {})

# Rows of the successive-addition augmentation study, by label.
TABLE2_ROWS: dict[str, tuple[AugOp, ...]] = {
    "none": (),
    "crop": _ops(_CROP),
    "crop_flip": _ops(_CROP, _FLIP),
    "crop_flip_gray": _ops(_CROP, _FLIP, ("gray", 0.2, {})),
    "crop_flip_cj_v1": _ops(_CROP, _FLIP, ("color_jitter", 0.8, {"strength": list(JITTER_PRESETS["v1"])})),
    "crop_flip_cj_v2": _ops(_CROP, _FLIP, ("color_jitter", 0.8, {"strength": list(JITTER_PRESETS["v2"])})),
    "crop_flip_cj_v3": _ops(_CROP, _FLIP, ("color_jitter", 0.8, {"strength": list(JITTER_PRESETS["v3"])})),
    "crop_flip_blur": _ops(_CROP, _FLIP, _BLUR),
    "crop_flip_rot90": _ops(_CROP, _FLIP, ("rotation", 0.5, {"max_angle": 90.0})),
    "crop_flip_rot60": _ops(_CROP, _FLIP, ("rotation", 0.5, {"max_angle": 60.0})),
    "crop_flip_rot30": _ops(_CROP, _FLIP, ("rotation", 0.5, {"max_angle": 30.0})),
    "crop_flip_swap7": _ops(_CROP, _FLIP, ("swap", 0.2, {"grid_n": 7})),
    "crop_flip_swap5": _ops(_CROP, _FLIP, ("swap", 0.2, {"grid_n": 5})),
    "crop_flip_swap3": _ops(_CROP, _FLIP, ("swap", 0.2, {"grid_n": 3})),
    "crop_flip_blur_rot30": _ops(_CROP, _FLIP, _BLUR, ("rotation", 0.5, {"max_angle": 30.0})),
    "default": _ops(_CROP, _FLIP, _BLUR, ("rotation", 0.5, {"max_angle": 30.0}),
                    ("swap", 0.2, {"grid_n": 3})),
}


def preset(name: str, out_size: int = 32) -> AugmentationSpec:
    if name not in TABLE2_ROWS:
        raise ValueError(f"unknown augmentation preset {name!r}; known: {sorted(TABLE2_ROWS)}")
    return AugmentationSpec(ops=TABLE2_ROWS[name], out_size=out_size)


def default_spec(out_size: int = 32) -> AugmentationSpec:
    return preset("default", out_size)


def apply_pipeline(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator,
                   fired: list[str] | None = None) -> np.ndarray:
    """Run the spec's ops in order, each firing with its probability.

    The output is always ``out_size`` square; if the spec has no crop op the
    full image is resampled. Names of the ops that fired are appended to
    ``fired`` when given.
    """
    out = img
    has_crop = any(op.name == "crop" for op in spec.ops)
    if not has_crop:
        out = _resize(out, spec.out_size)
    for op in spec.ops:
        if rng.random() >= op.p:
            continue
        if fired is not None:
            fired.append(op.name)
        if op.name == "crop":
            out = random_resized_crop(out, tuple(op.param("scale")), spec.out_size, rng)
        elif op.name == "flip":
            out = horizontal_flip(out)
        elif op.name == "gray":
            out = to_gray(out)
        elif op.name == "color_jitter":
            out = color_ops(out, "jitter", op.param("strength"), rng)
        elif op.name == "blur":
            lo, hi = op.param("sigma")
            out = gaussian_blur(out, rng.uniform(lo, hi))
        elif op.name == "rotation":
            limit = float(op.param("max_angle"))
            out = rotate(out, rng.uniform(-limit, limit), max_angle=limit)
        elif op.name == "swap":
            out = patch_swap(out, int(op.param("grid_n")), rng)
    if has_crop and out.shape[0] != spec.out_size:
        # crop op present but did not fire
        out = _resize(out, spec.out_size)
    return out


def _resize(img: np.ndarray, out_size: int) -> np.ndarray:
    H, W = img.shape[:2]
    if H == out_size and W == out_size:
        return img
    return crop_resize(img, (0.0, 0.0, float(H), float(W)), out_size)


def two_views(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator):
    """Two independently augmented views of one image."""
    return apply_pipeline(img, spec, rng), apply_pipeline(img, spec, rng)
