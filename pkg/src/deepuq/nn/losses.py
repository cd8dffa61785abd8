"""Output heads and training losses, with hand-derived gradients w.r.t. logits.

Heads map final-layer logits z to network outputs: softmax (normalized
probabilities), softplus (strictly positive, deliberately unnormalized), or
linear (raw scores). Losses: categorical cross-entropy, mean squared error
on the head output, and multiclass hinge on the head output.

Cross-entropy pairing rules:
  * softmax / linear head: standard softmax cross-entropy on logits.
  * softplus head: cross-entropy on the L1-normalized softplus vector. The
    normalization lives only inside the loss; the network's reported output
    stays the raw softplus vector.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError

HEAD_KINDS = ("softmax", "softplus", "linear")
LOSS_KINDS = ("categorical_cross_entropy", "mse", "hinge_multiclass")


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, log-sum-exp stabilized."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x), overflow-safe; strictly positive for finite x."""
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softplus(x: np.ndarray) -> np.ndarray:
    """log(softplus(x)) without underflow: ~x for very negative x."""
    safe = np.where(x < -30.0, 0.0, x)
    return np.where(x < -30.0, x, np.log(softplus(safe)))


def _sigmoid_over_softplus(x: np.ndarray) -> np.ndarray:
    # sigmoid(x)/softplus(x); both ~e^x as x -> -inf, so the ratio -> 1.
    safe = np.where(x < -30.0, 0.0, x)
    ratio = sigmoid(safe) / softplus(safe)
    return np.where(x < -30.0, 1.0, ratio)


def head_apply(head: str, z: np.ndarray) -> np.ndarray:
    if head == "softmax":
        return softmax(z)
    if head == "softplus":
        return softplus(z)
    if head == "linear":
        return z
    raise ParameterError(f"unknown head {head!r}")


def head_backward(head: str, z: np.ndarray, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """Pull a gradient on the head output h back to the logits z."""
    if head == "softmax":
        return h * (dh - (dh * h).sum(axis=1, keepdims=True))
    if head == "softplus":
        return dh * sigmoid(z)
    if head == "linear":
        return dh
    raise ParameterError(f"unknown head {head!r}")


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:  # already one-hot
        return labels.astype(float)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def label_indices(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.argmax(axis=1)
    return labels.astype(np.int64)


def loss_and_dlogits(loss: str, head: str, z: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Loss value (mean over the batch) and its gradient w.r.t. logits."""
    if loss not in LOSS_KINDS:
        raise ParameterError(f"unknown loss {loss!r}")
    n, k = z.shape
    y = label_indices(labels)
    rows = np.arange(n)

    if loss == "categorical_cross_entropy":
        if head == "softplus":
            s = softplus(z)
            total = s.sum(axis=1, keepdims=True)
            value = float(np.mean(np.log(total[:, 0]) - log_softplus(z[rows, y])))
            dz = sigmoid(z) / total
            dz[rows, y] -= _sigmoid_over_softplus(z[rows, y])
            return value, dz / n
        logp = log_softmax(z)
        value = float(-np.mean(logp[rows, y]))
        dz = softmax(z)
        dz[rows, y] -= 1.0
        return value, dz / n

    h = head_apply(head, z)
    yy = one_hot(labels, k)

    if loss == "mse":
        diff = h - yy
        value = float(np.mean(diff * diff))
        dh = 2.0 * diff / diff.size
        return value, head_backward(head, z, h, dh)

    # hinge_multiclass: sum_{j != y} max(0, 1 + h_j - h_y), averaged over batch
    margins = h - h[rows, y][:, None] + 1.0
    margins[rows, y] = 0.0
    active = margins > 0  # subgradient at the kink fixed to 0
    value = float(np.sum(margins[active]) / n)
    dh = active.astype(float)
    dh[rows, y] = -active.sum(axis=1)
    return value, head_backward(head, z, h, dh / n)
