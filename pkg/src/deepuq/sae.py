"""Supervised reconstruction autoencoder for distribution-shift scoring.

Encoder compresses flattened pixels to a narrow bottleneck; from the
bottleneck a decoder reproduces the pixels (through a logistic squash, so
outputs live in (0,1) like the normalized inputs) and a softmax classifier
predicts the label. Training minimizes

    pixel MSE(x, reconstruction) + lambda * cross-entropy(label, prediction)

jointly, which keeps the bottleneck both compact and class-separated.
At test time the per-sample reconstruction error is the out-of-distribution
score: inputs unlike anything seen in training cannot be compressed through
the bottleneck and come back wrong.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset, OodPair
from .errors import (
    DataError,
    ParameterError,
    ShapeError,
    SpecError,
    TrainingDiverged,
)
from .nn.layers import DenseLayer, ForwardCtx, LayerSpec, ReluLayer, dense, relu
from .nn.losses import loss_and_dlogits, sigmoid, softmax
from .nn.train import TrainConfig, make_optimizer
from .tensor import Rng, save_tensor, load_tensor
from .util import atomic_write_text

STREAM_SAE_INIT = 7


@dataclass(frozen=True)
class SupervisedAeSpec:
    """Encoder stack ending in the bottleneck, mirrored decoder, classifier width.

    Only dense/relu layers are supported in the stacks; the decoder's final
    dense must restore the flattened input size.
    """

    input_shape: tuple[int, ...]
    encoder: tuple[LayerSpec, ...]
    decoder: tuple[LayerSpec, ...]
    n_classes: int
    lam: float = 1.0
    seed: int = 0

    @property
    def input_size(self) -> int:
        size = 1
        for s in self.input_shape:
            size *= s
        return size

    def to_dict(self) -> dict:
        from .nn.layers import layer_spec_to_dict

        return {
            "input_shape": list(self.input_shape),
            "encoder": [layer_spec_to_dict(l) for l in self.encoder],
            "decoder": [layer_spec_to_dict(l) for l in self.decoder],
            "n_classes": self.n_classes,
            "lam": self.lam,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SupervisedAeSpec":
        from .nn.layers import layer_spec_from_dict

        return SupervisedAeSpec(
            input_shape=tuple(d["input_shape"]),
            encoder=tuple(layer_spec_from_dict(l) for l in d["encoder"]),
            decoder=tuple(layer_spec_from_dict(l) for l in d["decoder"]),
            n_classes=int(d["n_classes"]),
            lam=float(d["lam"]),
            seed=int(d["seed"]),
        )


def reference_sae(input_shape=(28, 28), n_classes: int = 10, hidden: int = 128,
                  bottleneck: int = 32, lam: float = 1.0, seed: int = 0) -> SupervisedAeSpec:
    return SupervisedAeSpec(
        input_shape=tuple(input_shape),
        encoder=(dense(hidden), relu(), dense(bottleneck)),
        decoder=(dense(hidden), relu(), dense(int(np.prod(input_shape)))),
        n_classes=n_classes,
        lam=lam,
        seed=seed,
    )


def _validate_stack(kind: str, layers, in_size: int) -> int:
    size = in_size
    if not layers or layers[-1].kind != "dense":
        raise SpecError(f"{kind} stack must end with a dense layer")
    for i, spec in enumerate(layers):
        if spec.kind == "dense":
            size = spec.units
        elif spec.kind != "relu":
            raise SpecError(
                f"{kind} layer {i}: only dense/relu are supported, got {spec.kind!r}"
            )
    return size


def validate_sae_spec(spec: SupervisedAeSpec, allow_full_width: bool = False) -> int:
    """Returns the bottleneck width; rejects non-compressing bottlenecks
    unless allow_full_width is set (diagnostic use only)."""
    if spec.lam <= 0:
        raise SpecError(f"lambda must be > 0, got {spec.lam}")
    if spec.n_classes < 2:
        raise SpecError(f"n_classes must be >= 2, got {spec.n_classes}")
    bottleneck = _validate_stack("encoder", spec.encoder, spec.input_size)
    out_size = _validate_stack("decoder", spec.decoder, bottleneck)
    if out_size != spec.input_size:
        raise SpecError(
            f"decoder must restore the input size {spec.input_size}, ends at {out_size}"
        )
    if not allow_full_width and bottleneck >= spec.input_size:
        raise SpecError(
            f"bottleneck {bottleneck} must be narrower than the input "
            f"{spec.input_size}"
        )
    return bottleneck


def _build_stack(layers, in_size: int, rng: Rng) -> list:
    out = []
    size = in_size
    for spec in layers:
        if spec.kind == "dense":
            out.append(DenseLayer(size, spec.units, rng))
            size = spec.units
        else:
            out.append(ReluLayer())
    return out


class SupervisedAutoencoder:
    """Trained realization of a SupervisedAeSpec."""

    def __init__(self, spec: SupervisedAeSpec, rng: Rng | None = None,
                 allow_full_width: bool = False):
        bottleneck = validate_sae_spec(spec, allow_full_width)
        if rng is None:
            rng = Rng(spec.seed, STREAM_SAE_INIT)
        self.spec = spec
        self.encoder = _build_stack(spec.encoder, spec.input_size, rng)
        self.classifier = DenseLayer(bottleneck, spec.n_classes, rng)
        self.decoder = _build_stack(spec.decoder, bottleneck, rng)
        self.epochs_completed = 0
        self.epoch_losses: list[dict] = []

    # -- plumbing -----------------------------------------------------------

    def _flat(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=float)
        if batch.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(
                f"batch shape {batch.shape} does not match input "
                f"{('N',) + tuple(self.spec.input_shape)}"
            )
        return batch.reshape(batch.shape[0], -1)

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(stack):
                for name, arr in layer.params().items():
                    out[f"{prefix}{i}.{name}"] = arr
        for name, arr in self.classifier.params().items():
            out[f"cls.{name}"] = arr
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for prefix, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(stack):
                if layer.params():
                    layer.w = np.array(values[f"{prefix}{i}.weight"], dtype=float)
                    layer.b = np.array(values[f"{prefix}{i}.bias"], dtype=float)
        self.classifier.w = np.array(values["cls.weight"], dtype=float)
        self.classifier.b = np.array(values["cls.bias"], dtype=float)

    # -- forward / backward --------------------------------------------------

    def encode(self, batch: np.ndarray) -> np.ndarray:
        ctx = ForwardCtx("infer")
        x = self._flat(batch)
        for layer in self.encoder:
            x = layer.forward(x, ctx)
        return x

    def reconstruct(self, batch: np.ndarray) -> np.ndarray:
        b = self.encode(batch)
        ctx = ForwardCtx("infer")
        for layer in self.decoder:
            b = layer.forward(b, ctx)
        return sigmoid(b)

    def classify(self, batch: np.ndarray) -> np.ndarray:
        b = self.encode(batch)
        return softmax(self.classifier.forward(b, ForwardCtx("infer")))

    def loss_and_grads(self, batch: np.ndarray, labels) -> tuple[dict, dict]:
        """Joint loss pieces and gradients for every parameter."""
        ctx = ForwardCtx("train")
        x = self._flat(batch)
        h = x
        for layer in self.encoder:
            h = layer.forward(h, ctx)
        bottleneck = h

        logits = self.classifier.forward(bottleneck, ctx)
        ce, dlogits = loss_and_dlogits("categorical_cross_entropy", "softmax",
                                       logits, labels)

        d = bottleneck
        for layer in self.decoder:
            d = layer.forward(d, ctx)
        recon = sigmoid(d)
        diff = recon - x
        mse = float(np.mean(diff * diff))
        dz = (2.0 * diff / diff.size) * recon * (1.0 - recon)

        g = dz
        for layer in reversed(self.decoder):
            g = layer.backward(g)
        g_bottleneck = g + self.spec.lam * self.classifier.backward(dlogits)
        g = g_bottleneck
        for layer in reversed(self.encoder):
            g = layer.backward(g)

        grads = {}
        for prefix, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(stack):
                for name, arr in layer.grads().items():
                    grads[f"{prefix}{i}.{name}"] = arr
        for name, arr in self.classifier.grads().items():
            grads[f"cls.{name}"] = arr * self.spec.lam
        losses = {"total": mse + self.spec.lam * ce, "reconstruction": mse,
                  "classification": ce}
        return losses, grads


def train_sae(spec: SupervisedAeSpec, dataset: LabeledDataset, config: TrainConfig,
              allow_full_width: bool = False) -> SupervisedAutoencoder:
    """Train a fresh model; per-epoch loss components are recorded on it."""
    if config.epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {config.epochs}")
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if dataset.n_classes != spec.n_classes:
        raise SpecError(
            f"spec expects {spec.n_classes} classes, dataset has {dataset.n_classes}"
        )
    model = SupervisedAutoencoder(spec, allow_full_width=allow_full_width)
    optimizer = make_optimizer(config)
    shuffle_rng = Rng(config.shuffle_seed, STREAM_SAE_INIT + 1)
    n = len(dataset)
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "reconstruction": 0.0, "classification": 0.0}
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            losses, grads = model.loss_and_grads(dataset.images[idx], dataset.labels[idx])
            if not math.isfinite(losses["total"]):
                raise TrainingDiverged(
                    f"loss went non-finite after epoch {model.epochs_completed}",
                    last_finite_epoch=model.epochs_completed,
                )
            optimizer.step(model.parameters(), grads)
            for key in sums:
                sums[key] += losses[key] * len(idx)
        model.epoch_losses.append({k: v / n for k, v in sums.items()})
        model.epochs_completed += 1
    return model


def reconstruction_error(model: SupervisedAutoencoder, batch: np.ndarray) -> np.ndarray:
    """Per-sample mean squared pixel error between input and reconstruction."""
    x = model._flat(batch)
    recon = model.reconstruct(batch)
    return np.mean((recon - x) ** 2, axis=1)


@dataclass
class OodScore:
    sample_id: int
    error: float
    verdict: str  # "out" iff error > tau

    @staticmethod
    def at_threshold(sample_id: int, error: float, tau: float) -> "OodScore":
        return OodScore(sample_id, float(error), "out" if error > tau else "in")


def ood_detect(model: SupervisedAutoencoder, pair: OodPair,
               tau: float) -> tuple[list[OodScore], np.ndarray, np.ndarray]:
    """Score the union of both halves of the pair against a threshold.

    Returns (per-sample verdicts, errors, is_ood ground truth), in-distribution
    samples first. Positives are the out-of-distribution samples.
    """
    if tau < 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    err_in = reconstruction_error(model, pair.in_distribution.images)
    err_out = reconstruction_error(model, pair.out_of_distribution.images)
    errors = np.concatenate([err_in, err_out])
    is_ood = np.concatenate([
        np.zeros(len(err_in), dtype=bool),
        np.ones(len(err_out), dtype=bool),
    ])
    verdicts = [OodScore.at_threshold(i, e, tau) for i, e in enumerate(errors)]
    return verdicts, errors, is_ood


def dump_reconstructions(model: SupervisedAutoencoder, images: np.ndarray,
                         out_dir, limit: int = 8) -> None:
    """Write (input, reconstruction) tensor-blob pairs for external viewing."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = tuple(model.spec.input_shape)
    recon = model.reconstruct(images[:limit])
    for i in range(min(limit, len(images))):
        save_tensor(out_dir / f"sample{i}.input", images[i])
        save_tensor(out_dir / f"sample{i}.recon", recon[i].reshape(shape))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_sae(model: SupervisedAutoencoder, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "deepuq-sae",
        "spec": model.spec.to_dict(),
        "epochs_completed": model.epochs_completed,
        "epoch_losses": model.epoch_losses,
    }
    for name, arr in model.parameters().items():
        save_tensor(directory / name, arr)
    atomic_write_text(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))


def load_sae(directory) -> SupervisedAutoencoder:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    spec = SupervisedAeSpec.from_dict(manifest["spec"])
    model = SupervisedAutoencoder(spec, allow_full_width=True)
    model.set_parameters({name: load_tensor(directory / name)
                          for name in model.parameters()})
    model.epochs_completed = int(manifest["epochs_completed"])
    model.epoch_losses = manifest["epoch_losses"]
    return model
