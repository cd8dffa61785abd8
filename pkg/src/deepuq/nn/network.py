"""Network specification, validation, initialization, forward and backward.

A NetworkSpec is a flat layer chain plus an output head and a training
loss. Validation walks the chain once, propagating feature shapes, and
names the offending layer pair on any mismatch. Initialization uses
fan-in-scaled uniform weights (bound sqrt(6/fan_in)) and zero biases.

forward() returns both the head output and the penultimate activation (the
input to the last parameterized layer), which downstream code exports for
external embedding visualization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import NumericError, ShapeError, SpecError
from ..tensor import Rng
from .layers import (
    Conv2dLayer,
    DenseLayer,
    DropoutLayer,
    FlattenLayer,
    ForwardCtx,
    LayerSpec,
    MaxPool2dLayer,
    ReluLayer,
    layer_spec_from_dict,
    layer_spec_to_dict,
)
from .losses import HEAD_KINDS, LOSS_KINDS, head_apply, loss_and_dlogits

STREAM_INIT = 0
STREAM_TRAIN_DROPOUT = 1
STREAM_SHUFFLE = 2


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    head: str = "softmax"
    loss: str = "categorical_cross_entropy"
    seed: int = 0

    def with_seed(self, seed: int) -> "NetworkSpec":
        return replace(self, seed=seed)

    def with_head(self, head: str, loss: str | None = None) -> "NetworkSpec":
        return replace(self, head=head, loss=loss if loss is not None else self.loss)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_spec_to_dict(l) for l in self.layers],
            "head": self.head,
            "loss": self.loss,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(layer_spec_from_dict(l) for l in d["layers"]),
            head=d["head"],
            loss=d["loss"],
            seed=int(d["seed"]),
        )


def _initial_feature_shape(spec: NetworkSpec) -> tuple[int, ...]:
    shape = tuple(int(s) for s in spec.input_shape)
    if not shape or any(s < 1 for s in shape):
        raise SpecError(f"bad input shape {shape}")
    needs_channels = spec.layers and spec.layers[0].kind in ("conv2d", "maxpool2d")
    if len(shape) == 2 and needs_channels:
        return (1,) + shape  # grayscale images get an explicit channel axis
    return shape


def validate_spec(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Walk the layer chain; return the feature shape after every layer.

    Raises SpecError naming the offending pair on any incompatibility.
    """
    if spec.head not in HEAD_KINDS:
        raise SpecError(f"unknown head {spec.head!r}")
    if spec.loss not in LOSS_KINDS:
        raise SpecError(f"unknown loss {spec.loss!r}")
    if not spec.layers:
        raise SpecError("network needs at least one layer")

    shape = _initial_feature_shape(spec)
    shapes = []
    prev = "input"
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "dense":
            if len(shape) != 1:
                raise SpecError(
                    f"layer {i} dense({layer.units}) needs a flat input but "
                    f"{prev} produces shape {shape}; insert flatten"
                )
            shape = (layer.units,)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise SpecError(
                    f"layer {i} conv2d({layer.filters}) needs (C,H,W) input but "
                    f"{prev} produces shape {shape}"
                )
            shape = (layer.filters, shape[1], shape[2])
        elif kind == "maxpool2d":
            if len(shape) != 3:
                raise SpecError(
                    f"layer {i} maxpool2d needs (C,H,W) input but "
                    f"{prev} produces shape {shape}"
                )
            if shape[1] % 2 or shape[2] % 2:
                raise SpecError(
                    f"layer {i} maxpool2d needs even spatial dims, "
                    f"got {shape} from {prev}"
                )
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "flatten":
            size = 1
            for s in shape:
                size *= s
            shape = (size,)
        elif kind in ("relu", "dropout"):
            pass
        else:
            raise SpecError(f"layer {i}: unknown kind {kind!r}")
        shapes.append(shape)
        prev = f"layer {i} {layer.describe()}"

    if spec.layers[-1].kind != "dense":
        raise SpecError(
            f"last layer must be dense so the {spec.head} head sees class "
            f"scores; got {spec.layers[-1].describe()}"
        )
    return shapes


def output_size(spec: NetworkSpec) -> int:
    return validate_spec(spec)[-1][0]


class Network:
    """A spec together with its trained parameters and training history."""

    def __init__(self, spec: NetworkSpec, layers: list, epochs_completed: int = 0,
                 epoch_losses: list[float] | None = None):
        self.spec = spec
        self.layers = layers
        self.epochs_completed = epochs_completed
        self.epoch_losses = list(epoch_losses) if epoch_losses else []

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat view keyed layer{i}.weight / layer{i}.bias."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"layer{i}.{name}"] = arr
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            p = layer.params()
            if "weight" in p:
                layer.w = np.array(values[f"layer{i}.weight"], dtype=float)
                layer.b = np.array(values[f"layer{i}.bias"], dtype=float)

    def clone(self) -> "Network":
        twin = init(self.spec, Rng(self.spec.seed, STREAM_INIT))
        twin.set_parameters({k: v.copy() for k, v in self.parameters().items()})
        twin.epochs_completed = self.epochs_completed
        twin.epoch_losses = list(self.epoch_losses)
        return twin


def init(spec: NetworkSpec, rng: Rng | None = None) -> Network:
    """Allocate parameters for a validated spec.

    Weights are drawn from the given rng (default: the spec's own seed on
    the init stream); distinct streams give distinct parameters.
    """
    shapes = validate_spec(spec)
    if rng is None:
        rng = Rng(spec.seed, STREAM_INIT)
    layers = []
    shape = _initial_feature_shape(spec)
    dropout_index = 0
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind == "dense":
            layers.append(DenseLayer(shape[0], layer.units, rng))
        elif kind == "conv2d":
            layers.append(Conv2dLayer(shape[0], layer.filters, rng))
        elif kind == "maxpool2d":
            layers.append(MaxPool2dLayer())
        elif kind == "relu":
            layers.append(ReluLayer())
        elif kind == "flatten":
            layers.append(FlattenLayer())
        elif kind == "dropout":
            layers.append(DropoutLayer(layer.rate, dropout_index))
            dropout_index += 1
        shape = shapes[i]
    return Network(spec, layers)


def _prepare_batch(spec: NetworkSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    expected = tuple(spec.input_shape)
    if batch.shape[1:] != expected:
        raise ShapeError(
            f"batch shape {batch.shape} does not match spec input "
            f"{('N',) + expected}"
        )
    feat = _initial_feature_shape(spec)
    if feat != expected:  # grayscale images: add the channel axis
        batch = batch.reshape((batch.shape[0],) + feat)
    return batch


def _last_param_index(net: Network) -> int:
    for i in range(len(net.layers) - 1, -1, -1):
        if net.layers[i].params():
            return i
    raise SpecError("network has no parameterized layer")


def forward(net: Network, batch: np.ndarray, mode: str = "infer",
            rng: Rng | None = None, mask_fn=None) -> tuple[np.ndarray, np.ndarray]:
    """Run the network; returns (head output, penultimate activation).

    The penultimate activation is the input to the last parameterized
    layer, i.e. the representation the final classifier reads.
    """
    ctx = ForwardCtx(mode, rng=rng, mask_fn=mask_fn)
    x = _prepare_batch(net.spec, batch)
    last_param = _last_param_index(net)
    penultimate = None
    for i, layer in enumerate(net.layers):
        if i == last_param:
            penultimate = x
        x = layer.forward(x, ctx)
    return head_apply(net.spec.head, x), penultimate


def _locate_nonfinite(net: Network, batch, ctx) -> int:
    x = _prepare_batch(net.spec, batch)
    for i, layer in enumerate(net.layers):
        x = layer.forward(x, ctx)
        if not np.all(np.isfinite(x)):
            return i
    return len(net.layers) - 1


def backward(net: Network, batch: np.ndarray, labels, mode: str = "train",
             rng: Rng | None = None, mask_fn=None,
             loss_scale: float = 1.0) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and its gradient w.r.t. every parameter.

    loss_scale multiplies both the reported loss and all gradients; the
    trainer uses 1.0.
    """
    ctx = ForwardCtx(mode, rng=rng, mask_fn=mask_fn)
    x = _prepare_batch(net.spec, batch)
    for layer in net.layers:
        x = layer.forward(x, ctx)
    value, dz = loss_and_dlogits(net.spec.loss, net.spec.head, x, labels)
    if not np.isfinite(value):
        culprit = _locate_nonfinite(net, batch, ForwardCtx("infer"))
        raise NumericError(
            f"non-finite loss; first non-finite activation at layer {culprit}"
        )
    g = dz
    for layer in reversed(net.layers):
        g = layer.backward(g)
    grads = {}
    for i, layer in enumerate(net.layers):
        for name, arr in layer.grads().items():
            grads[f"layer{i}.{name}"] = arr * loss_scale if loss_scale != 1.0 else arr
    return value * loss_scale, grads


def predict_proba(net: Network, images: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Proper probability vectors regardless of head (softplus is L1-normalized)."""
    raw = head_outputs(net, images, batch_size)
    if net.spec.head == "softmax":
        return raw
    if net.spec.head == "softplus":
        return raw / raw.sum(axis=1, keepdims=True)
    e = np.exp(raw - raw.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def head_outputs(net: Network, images: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Raw head outputs in inference mode, chunked to bound memory."""
    chunks = []
    for start in range(0, len(images), batch_size):
        out, _ = forward(net, images[start:start + batch_size], mode="infer")
        chunks.append(out)
    return np.concatenate(chunks, axis=0)


def penultimate_features(net: Network, images: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    chunks = []
    for start in range(0, len(images), batch_size):
        _, pen = forward(net, images[start:start + batch_size], mode="infer")
        chunks.append(pen.reshape(pen.shape[0], -1))
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# Reference architectures
# ---------------------------------------------------------------------------

def ref_cnn(input_shape=(28, 28), n_classes: int = 10, head: str = "softmax",
            loss: str = "categorical_cross_entropy", seed: int = 0,
            dropout_rate: float = 0.25) -> NetworkSpec:
    """Small two-block CNN used as the default image classifier."""
    from .layers import conv2d, dense, dropout, flatten, maxpool2d, relu

    return NetworkSpec(
        input_shape=tuple(input_shape),
        layers=(
            conv2d(8), relu(), maxpool2d(),
            conv2d(16), relu(), maxpool2d(),
            flatten(),
            dense(64), relu(), dropout(dropout_rate),
            dense(n_classes),
        ),
        head=head,
        loss=loss,
        seed=seed,
    )


def mlp(input_shape, n_classes: int, hidden_units: int = 32, n_hidden_layers: int = 1,
        head: str = "softmax", loss: str = "categorical_cross_entropy",
        seed: int = 0, dropout_rate: float = 0.0) -> NetworkSpec:
    """Flat stack: flatten -> [dense(h)+relu] * n -> (optional dropout) -> dense(k)."""
    from .layers import dense, dropout, flatten, relu

    layers: list[LayerSpec] = [flatten()]
    for _ in range(n_hidden_layers):
        layers += [dense(hidden_units), relu()]
    if dropout_rate > 0:
        layers.append(dropout(dropout_rate))
    layers.append(dense(n_classes))
    return NetworkSpec(
        input_shape=tuple(input_shape),
        layers=tuple(layers),
        head=head,
        loss=loss,
        seed=seed,
    )


ARCHITECTURES = {"ref-cnn": ref_cnn, "mlp": mlp}
