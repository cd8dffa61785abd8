"""Layer specs and their trainable realizations.

Supported layers: dense, conv2d (3x3 kernel, stride 1, same padding),
maxpool2d (2x2), relu, flatten, dropout. Each realization owns its
parameters and caches whatever its backward pass needs. Dropout is
inverted: activations are scaled by 1/(1-p) when masks are active so that
plain inference is the identity.

Feature shapes are tracked without the batch axis: vectors as (d,), image
stacks as (channels, height, width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, SpecError
from ..tensor import Rng


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None    # dense
    filters: int | None = None  # conv2d
    rate: float | None = None   # dropout

    def describe(self) -> str:
        if self.kind == "dense":
            return f"dense({self.units})"
        if self.kind == "conv2d":
            return f"conv2d({self.filters})"
        if self.kind == "dropout":
            return f"dropout({self.rate})"
        return self.kind


def dense(units: int) -> LayerSpec:
    if units < 1:
        raise ParameterError(f"dense units must be >= 1, got {units}")
    return LayerSpec("dense", units=int(units))


def conv2d(filters: int) -> LayerSpec:
    if filters < 1:
        raise ParameterError(f"conv2d filters must be >= 1, got {filters}")
    return LayerSpec("conv2d", filters=int(filters))


def maxpool2d() -> LayerSpec:
    return LayerSpec("maxpool2d")


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dropout(rate: float) -> LayerSpec:
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    return LayerSpec("dropout", rate=float(rate))


def layer_spec_to_dict(spec: LayerSpec) -> dict:
    out = {"kind": spec.kind}
    if spec.units is not None:
        out["units"] = spec.units
    if spec.filters is not None:
        out["filters"] = spec.filters
    if spec.rate is not None:
        out["rate"] = spec.rate
    return out


def layer_spec_from_dict(d: dict) -> LayerSpec:
    kind = d["kind"]
    if kind == "dense":
        return dense(d["units"])
    if kind == "conv2d":
        return conv2d(d["filters"])
    if kind == "dropout":
        return dropout(d["rate"])
    if kind in ("maxpool2d", "relu", "flatten"):
        return LayerSpec(kind)
    raise SpecError(f"unknown layer kind {kind!r}")


class ForwardCtx:
    """Per-call forward options.

    mode: "train" | "infer" | "infer_with_dropout".
    rng: stream used to draw dropout masks when masks are active.
    mask_fn: optional override, called as mask_fn(dropout_index, shape) and
        expected to return the already-scaled multiplicative mask. Used for
        per-sample mask streams and for frozen-mask gradient checks.
    """

    MODES = ("train", "infer", "infer_with_dropout")

    def __init__(self, mode: str = "infer", rng: Rng | None = None, mask_fn=None):
        if mode not in self.MODES:
            raise ParameterError(f"unknown forward mode {mode!r}")
        self.mode = mode
        self.rng = rng
        self.mask_fn = mask_fn

    @property
    def dropout_active(self) -> bool:
        return self.mode in ("train", "infer_with_dropout")


class DenseLayer:
    def __init__(self, in_dim: int, units: int, rng: Rng):
        bound = math.sqrt(6.0 / in_dim)  # fan-in scaled uniform init
        self.w = rng.uniform(-bound, bound, (in_dim, units))
        self.b = np.zeros(units)
        self.gw = None
        self.gb = None
        self._x = None

    def forward(self, x, ctx: ForwardCtx):
        self._x = x
        return x @ self.w + self.b

    def backward(self, g):
        self.gw = self._x.T @ g
        self.gb = g.sum(axis=0)
        return g @ self.w.T

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}


def _im2col_3x3(x: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> [N, C*9, H*W] patch matrix for a 3x3/stride-1/pad-1 conv."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = xp[:, :, di:di + h, dj:dj + w]
            k += 1
    return cols.reshape(n, c * 9, h * w)


def _col2im_3x3(gcols: np.ndarray, shape) -> np.ndarray:
    """Adjoint of _im2col_3x3: scatter-add patch gradients back to [N,C,H,W]."""
    n, c, h, w = shape
    g = gcols.reshape(n, c, 9, h, w)
    gxp = np.zeros((n, c, h + 2, w + 2), dtype=gcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            gxp[:, :, di:di + h, dj:dj + w] += g[:, :, k]
            k += 1
    return gxp[:, :, 1:1 + h, 1:1 + w]


class Conv2dLayer:
    """3x3 convolution, stride 1, same padding, bias per filter."""

    def __init__(self, in_channels: int, filters: int, rng: Rng):
        fan_in = in_channels * 9
        bound = math.sqrt(6.0 / fan_in)
        self.w = rng.uniform(-bound, bound, (filters, in_channels * 9))
        self.b = np.zeros(filters)
        self.gw = None
        self.gb = None
        self._cols = None
        self._in_shape = None

    def forward(self, x, ctx: ForwardCtx):
        n, c, h, w = x.shape
        self._in_shape = x.shape
        self._cols = _im2col_3x3(x)
        out = np.matmul(self.w, self._cols) + self.b[:, None]
        return out.reshape(n, self.w.shape[0], h, w)

    def backward(self, g):
        n, f, h, w = g.shape
        gp = g.reshape(n, f, h * w)
        self.gw = np.matmul(gp, self._cols.transpose(0, 2, 1)).sum(axis=0)
        self.gb = gp.sum(axis=(0, 2))
        gcols = np.matmul(self.w.T, gp)
        return _col2im_3x3(gcols, self._in_shape)

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def grads(self):
        return {"weight": self.gw, "bias": self.gb}


class MaxPool2dLayer:
    """2x2 max pooling, stride 2. Ties route to the lowest window index."""

    def __init__(self):
        self._idx = None
        self._in_shape = None

    def forward(self, x, ctx: ForwardCtx):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        self._in_shape = x.shape
        r = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
        r = r.reshape(n, c, h2, w2, 4)
        self._idx = r.argmax(axis=-1)
        return np.take_along_axis(r, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, g):
        n, c, h, w = self._in_shape
        h2, w2 = h // 2, w // 2
        scatter = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(scatter, self._idx[..., None], g[..., None], axis=-1)
        scatter = scatter.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return scatter.reshape(n, c, h, w)

    def params(self):
        return {}

    def grads(self):
        return {}


class ReluLayer:
    def __init__(self):
        self._mask = None

    def forward(self, x, ctx: ForwardCtx):
        self._mask = x > 0  # subgradient at 0 fixed to 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask

    def params(self):
        return {}

    def grads(self):
        return {}


class FlattenLayer:
    def __init__(self):
        self._in_shape = None

    def forward(self, x, ctx: ForwardCtx):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._in_shape)

    def params(self):
        return {}

    def grads(self):
        return {}


class DropoutLayer:
    """Inverted dropout; `index` identifies the layer for external mask streams."""

    def __init__(self, rate: float, index: int):
        self.rate = rate
        self.index = index
        self._mask = None

    def forward(self, x, ctx: ForwardCtx):
        if not ctx.dropout_active or self.rate == 0.0:
            self._mask = None
            return x
        if ctx.mask_fn is not None:
            mask = ctx.mask_fn(self.index, x.shape)
        else:
            if ctx.rng is None:
                raise ParameterError(
                    "dropout-active forward needs an rng or mask_fn"
                )
            keep = ctx.rng.uniform(0.0, 1.0, x.shape) >= self.rate
            mask = keep / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, g):
        if self._mask is None:
            return g
        return g * self._mask

    def params(self):
        return {}

    def grads(self):
        return {}


def dropout_mask(rng: Rng, rate: float, shape) -> np.ndarray:
    """Scaled inverted-dropout mask: 1/(1-rate) with prob 1-rate, else 0."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.uniform(0.0, 1.0, shape) >= rate
    return keep / (1.0 - rate)
