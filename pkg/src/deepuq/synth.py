"""Deterministic synthetic 28x28 image sets: stroke digits and texture shapes.

These are the desk-scale stand-ins used by the test and acceptance suites
when no real IDX files are supplied: ten digit classes rendered from
stroke skeletons with randomized affine distortion, occlusion and pixel
noise (hard enough that a small CNN misclassifies a few percent), and a
visually unrelated "shapes" family (discs, rings, bars, crosses, ...) that
serves as the out-of-distribution partner.

Everything is rasterized from analytic distance fields in plain numpy, so
a given Rng seed reproduces the datasets bit-for-bit on any machine.
"""

from __future__ import annotations

import math

import numpy as np

from .data import LabeledDataset
from .errors import ParameterError
from .tensor import Rng


def _grid(size: int) -> np.ndarray:
    """Pixel-center coordinates [size*size, 2] in the unit square, y up."""
    cols = (np.arange(size) + 0.5) / size
    rows = 1.0 - (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(cols, rows)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _segments(polyline: np.ndarray) -> np.ndarray:
    return np.concatenate([polyline[:-1], polyline[1:]], axis=1)


def _line(*points) -> np.ndarray:
    return np.asarray(points, dtype=float)


def _arc(cx, cy, rx, ry, deg0, deg1, n=22) -> np.ndarray:
    t = np.radians(np.linspace(deg0, deg1, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _stroke_distance(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    p = points[:, None, :]
    a = segs[None, :, 0:2]
    ab = segs[None, :, 2:4] - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.sqrt(((p - proj) ** 2).sum(-1)).min(axis=1)


def _render_strokes(polylines, size: int, width: float) -> np.ndarray:
    segs = np.concatenate([_segments(pl) for pl in polylines], axis=0)
    d = _stroke_distance(_grid(size), segs)
    aa = 0.7 / size
    return np.clip((width - d) / aa + 0.5, 0.0, 1.0).reshape(size, size)


# --------------------------------------------------------------------------
# Digit skeletons in the unit square (y up). Deliberately MNIST-like: thin
# strokes, loops for 0/6/8/9, open tops for 4/7.
# --------------------------------------------------------------------------

def _digit_polylines(digit: int) -> list[np.ndarray]:
    if digit == 0:
        return [_arc(0.50, 0.50, 0.21, 0.30, 90, 450)]
    if digit == 1:
        return [_line((0.40, 0.66), (0.54, 0.82), (0.54, 0.18))]
    if digit == 2:
        return [_arc(0.50, 0.62, 0.20, 0.18, 165, -25),
                _line((0.67, 0.54), (0.30, 0.18), (0.72, 0.18))]
    if digit == 3:
        return [_arc(0.47, 0.655, 0.19, 0.155, 150, -80),
                _arc(0.47, 0.335, 0.21, 0.165, 80, -150)]
    if digit == 4:
        return [_line((0.60, 0.85), (0.27, 0.40), (0.78, 0.40)),
                _line((0.62, 0.58), (0.62, 0.14))]
    if digit == 5:
        return [_line((0.70, 0.82), (0.36, 0.82), (0.34, 0.55)),
                _arc(0.49, 0.36, 0.21, 0.20, 110, -160)]
    if digit == 6:
        return [_arc(0.54, 0.55, 0.22, 0.32, 60, 200),
                _arc(0.50, 0.32, 0.18, 0.155, 90, 450)]
    if digit == 7:
        return [_line((0.28, 0.80), (0.74, 0.80), (0.44, 0.16))]
    if digit == 8:
        return [_arc(0.50, 0.645, 0.15, 0.135, 90, 450),
                _arc(0.50, 0.33, 0.185, 0.17, 90, 450)]
    if digit == 9:
        return [_arc(0.50, 0.62, 0.17, 0.15, 90, 450),
                _line((0.67, 0.60), (0.62, 0.38), (0.52, 0.16))]
    raise ParameterError(f"digit must be 0..9, got {digit}")


def _affine(polylines, rng: Rng, rot_max: float, shear_max: float,
            scale_lo: float, scale_hi: float, shift_max: float, jitter: float):
    theta = rng.uniform(-rot_max, rot_max)
    shear = rng.uniform(-shear_max, shear_max)
    sx = rng.uniform(scale_lo, scale_hi)
    sy = rng.uniform(scale_lo, scale_hi)
    tx = rng.uniform(-shift_max, shift_max)
    ty = rng.uniform(-shift_max, shift_max)
    c, s = math.cos(theta), math.sin(theta)
    mat = np.array([[sx * (c + shear * s), sx * (shear * c - s)],
                    [sy * s, sy * c]]).T
    center = np.array([0.5, 0.5])
    out = []
    for pl in polylines:
        p = (pl - center) @ mat + center + np.array([tx, ty])
        if jitter > 0:
            p = p + rng.normal(0.0, jitter, p.shape)
        out.append(p)
    return out


def _corrupt(img: np.ndarray, rng: Rng, noise_lo: float, noise_hi: float,
             occlusion_prob: float, size: int) -> np.ndarray:
    img = img * rng.uniform(0.75, 1.0)
    if rng.uniform() < occlusion_prob:
        h = int(rng.integers(3, 8))
        w = int(rng.integers(3, 8))
        r = int(rng.integers(0, size - h))
        c = int(rng.integers(0, size - w))
        img[r:r + h, c:c + w] *= rng.uniform(0.0, 0.35)
    sigma = rng.uniform(noise_lo, noise_hi)
    img = img + rng.normal(0.0, sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synth_digits(rng: Rng, n: int, size: int = 28, *,
                      rot_max: float = 0.60, shear_max: float = 0.32,
                      scale_lo: float = 0.65, scale_hi: float = 1.14,
                      shift_max: float = 0.07, jitter: float = 0.016,
                      width_lo: float = 0.026, width_hi: float = 0.060,
                      noise_lo: float = 0.04, noise_hi: float = 0.22,
                      occlusion_prob: float = 0.30,
                      distractor_prob: float = 0.25) -> LabeledDataset:
    """n distorted stroke digits, labels cycling 0..9.

    The default distortion levels are tuned so a small CNN lands in the
    mid-90s test accuracy: errors exist, and they are dominated by
    genuinely ambiguous renderings rather than label noise.
    """
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    images = np.empty((n, size, size))
    labels = np.arange(n, dtype=np.int64) % 10
    for i in range(n):
        polylines = _affine(_digit_polylines(int(labels[i])), rng, rot_max,
                            shear_max, scale_lo, scale_hi, shift_max, jitter)
        if rng.uniform() < distractor_prob:
            p0 = rng.uniform(0.1, 0.9, (2,))
            ang = rng.uniform(0.0, 2 * math.pi)
            length = rng.uniform(0.1, 0.3)
            p1 = p0 + length * np.array([math.cos(ang), math.sin(ang)])
            polylines = polylines + [np.stack([p0, p1])]
        width = rng.uniform(width_lo, width_hi)
        img = _render_strokes(polylines, size, width)
        images[i] = _corrupt(img, rng, noise_lo, noise_hi, occlusion_prob, size)
    return LabeledDataset(images, labels, 10, name="synth-digits")


# --------------------------------------------------------------------------
# Shape family: same canvas, unrelated image statistics.
# --------------------------------------------------------------------------

N_SHAPE_KINDS = 6


def _shape_image(kind: int, rng: Rng, size: int) -> np.ndarray:
    pts = _grid(size)
    aa = 0.7 / size
    cx, cy = rng.uniform(0.38, 0.62, (2,))
    if kind == 0:  # filled disc
        r = rng.uniform(0.16, 0.30)
        d = np.sqrt(((pts - [cx, cy]) ** 2).sum(1))
        img = np.clip((r - d) / aa + 0.5, 0, 1)
    elif kind == 1:  # ring
        r = rng.uniform(0.18, 0.30)
        t = rng.uniform(0.035, 0.08)
        d = np.abs(np.sqrt(((pts - [cx, cy]) ** 2).sum(1)) - r)
        img = np.clip((t - d) / aa + 0.5, 0, 1)
    elif kind == 2:  # filled rotated square
        r = rng.uniform(0.14, 0.26)
        theta = rng.uniform(0, math.pi / 2)
        c, s = math.cos(theta), math.sin(theta)
        u = (pts[:, 0] - cx) * c + (pts[:, 1] - cy) * s
        v = -(pts[:, 0] - cx) * s + (pts[:, 1] - cy) * c
        d = np.maximum(np.abs(u), np.abs(v))
        img = np.clip((r - d) / aa + 0.5, 0, 1)
    elif kind == 3:  # square outline
        r = rng.uniform(0.18, 0.30)
        t = rng.uniform(0.035, 0.08)
        theta = rng.uniform(0, math.pi / 2)
        c, s = math.cos(theta), math.sin(theta)
        u = (pts[:, 0] - cx) * c + (pts[:, 1] - cy) * s
        v = -(pts[:, 0] - cx) * s + (pts[:, 1] - cy) * c
        d = np.abs(np.maximum(np.abs(u), np.abs(v)) - r)
        img = np.clip((t - d) / aa + 0.5, 0, 1)
    elif kind == 4:  # soft stripes
        freq = rng.uniform(3.0, 7.0)
        phi = rng.uniform(0, 2 * math.pi)
        ang = rng.uniform(0, math.pi)
        u = pts[:, 0] * math.cos(ang) + pts[:, 1] * math.sin(ang)
        img = np.clip((np.cos(2 * math.pi * freq * u + phi) - 0.1) / 0.5, 0, 1)
    else:  # thick cross
        t = rng.uniform(0.05, 0.10)
        ang = rng.uniform(0, math.pi)
        arm = 0.32
        c, s = math.cos(ang), math.sin(ang)
        a1 = np.array([[cx - arm * c, cy - arm * s, cx + arm * c, cy + arm * s]])
        a2 = np.array([[cx + arm * s, cy - arm * c, cx - arm * s, cy + arm * c]])
        d = _stroke_distance(pts, np.concatenate([a1, a2]))
        img = np.clip((t - d) / aa + 0.5, 0, 1)
    return img.reshape(size, size)


def make_synth_shapes(rng: Rng, n: int, size: int = 28, *,
                      noise_lo: float = 0.02, noise_hi: float = 0.10) -> LabeledDataset:
    """n shape images, labels cycling over the 6 shape kinds."""
    if n < 1:
        raise ParameterError(f"need n >= 1, got {n}")
    images = np.empty((n, size, size))
    labels = np.arange(n, dtype=np.int64) % N_SHAPE_KINDS
    for i in range(n):
        img = _shape_image(int(labels[i]), rng, size) * rng.uniform(0.7, 1.0)
        sigma = rng.uniform(noise_lo, noise_hi)
        images[i] = np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)
    return LabeledDataset(images, labels, N_SHAPE_KINDS, name="synth-shapes")


def synth_dataset(kind: str, n: int, seed: int, size: int = 28, **kwargs) -> LabeledDataset:
    rng = Rng(seed)
    if kind == "digits":
        return make_synth_digits(rng, n, size, **kwargs)
    if kind == "shapes":
        return make_synth_shapes(rng, n, size, **kwargs)
    raise ParameterError(f"unknown synthetic dataset kind {kind!r}")
