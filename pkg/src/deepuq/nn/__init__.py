from .layers import (
    LayerSpec,
    conv2d,
    dense,
    dropout,
    flatten,
    maxpool2d,
    relu,
)
from .losses import HEAD_KINDS, LOSS_KINDS, sigmoid, softmax, softplus
from .model_io import load_network, save_network
from .network import (
    ARCHITECTURES,
    Network,
    NetworkSpec,
    backward,
    forward,
    head_outputs,
    init,
    mlp,
    penultimate_features,
    predict_proba,
    ref_cnn,
    validate_spec,
)
from .train import Adam, Sgd, TrainConfig, accuracy, train

__all__ = [
    "ARCHITECTURES",
    "Adam",
    "HEAD_KINDS",
    "LOSS_KINDS",
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "Sgd",
    "TrainConfig",
    "accuracy",
    "backward",
    "conv2d",
    "dense",
    "dropout",
    "flatten",
    "forward",
    "head_outputs",
    "init",
    "load_network",
    "maxpool2d",
    "mlp",
    "penultimate_features",
    "predict_proba",
    "ref_cnn",
    "relu",
    "save_network",
    "sigmoid",
    "softmax",
    "softplus",
    "train",
    "validate_spec",
]
