"""Per-sample data-uncertainty scores for misclassification detection.

Three scorers, all oriented "larger means more uncertain":

  * softplus_ratio — on a softplus-head network's raw (unnormalized,
    strictly positive) output vector, sort descending and return
    (sum of everything past the top two) / (top1 - top2). A wide gap
    between the two leading classes shrinks the score; mass spread over
    the remaining classes grows it. An exact top-two tie is clamped by an
    epsilon so the score saturates large-but-finite instead of dividing
    by zero.
  * max_softmax — 1 minus the winning softmax probability (the classic
    confidence baseline, sign-flipped to match the orientation).
  * mc_dropout — variance of the predicted-class probability across T
    stochastic forward passes with dropout masks kept active.

score_dataset applies one scorer to a whole dataset and yields ScoredSample
records; CSV writers/readers round-trip them for the evaluation harness.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SpecError
from .nn.layers import dropout_mask
from .nn.network import Network, forward, head_outputs, predict_proba
from .tensor import Rng
from .util import atomic_write_text

TIE_EPS = 1e-9

SCORERS = ("softplus_ratio", "max_softmax", "mc_dropout")


@dataclass
class ScoredSample:
    sample_id: int
    true_label: int
    predicted_label: int
    score: float
    scorer: str


def softplus_ratio(values) -> float:
    """Tail-over-gap uncertainty of one positive class-score vector.

    Needs n >= 3 classes: with two classes the tail sum is empty and the
    score would be identically zero.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 3:
        raise ParameterError(
            f"softplus_ratio needs at least 3 classes, got {v.size}"
        )
    if np.any(v <= 0):
        raise ParameterError("softplus_ratio needs strictly positive entries")
    s = np.sort(v)[::-1]
    return float(s[2:].sum() / max(s[0] - s[1], TIE_EPS))


def max_softmax_score(probs) -> float:
    """1 - max probability; input must be a normalized probability vector."""
    p = np.asarray(probs, dtype=float).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ParameterError(
            f"max_softmax_score needs a probability vector summing to 1, "
            f"got sum {p.sum()!r}"
        )
    return float(1.0 - p.max())


def _fold_stream(sample_id: int, pass_id: int, dropout_index: int) -> int:
    # Distinct (sample, pass, layer) triples must map to distinct streams.
    return ((sample_id << 20) | (pass_id << 4) | dropout_index) & 0xFFFFFFFFFFFFFFFF


def _has_dropout(net: Network) -> bool:
    return any(spec.kind == "dropout" for spec in net.spec.layers)


def _mc_mask_fn(net: Network, sample_ids: np.ndarray, pass_id: int, seed: int):
    rates = [spec.rate for spec in net.spec.layers if spec.kind == "dropout"]

    def mask_fn(dropout_index: int, shape):
        rate = rates[dropout_index]
        mask = np.empty(shape)
        per_sample_shape = shape[1:]
        for row, sid in enumerate(sample_ids):
            rng = Rng(seed, _fold_stream(int(sid), pass_id, dropout_index))
            mask[row] = dropout_mask(rng, rate, per_sample_shape)
        return mask

    return mask_fn


def mc_dropout_scores(net: Network, images: np.ndarray, passes: int = 50,
                      seed: int = 0, sample_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """(scores, predicted labels) for a batch under MC-dropout.

    Per-sample mask streams are keyed by (seed, sample id, pass id), so the
    result is independent of batching and of any parallel split of the
    dataset.
    """
    if passes < 2:
        raise ParameterError(f"mc_dropout needs at least 2 passes, got {passes}")
    if not _has_dropout(net):
        raise SpecError("mc_dropout needs a network with at least one dropout layer")
    images = np.asarray(images, dtype=float)
    n = len(images)
    if sample_ids is None:
        sample_ids = np.arange(n)
    probs = np.empty((passes, n, _n_outputs(net)))
    for t in range(passes):
        mask_fn = _mc_mask_fn(net, sample_ids, t, seed)
        out, _ = forward(net, images, mode="infer_with_dropout", mask_fn=mask_fn)
        probs[t] = _to_probs(net, out)
    mean = probs.mean(axis=0)
    preds = mean.argmax(axis=1)
    scores = probs[:, np.arange(n), preds].var(axis=0)  # population variance
    return scores, preds


def _n_outputs(net: Network) -> int:
    return net.spec.layers[-1].units


def _to_probs(net: Network, out: np.ndarray) -> np.ndarray:
    if net.spec.head == "softmax":
        return out
    if net.spec.head == "softplus":
        return out / out.sum(axis=1, keepdims=True)
    e = np.exp(out - out.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def score_dataset(net: Network, dataset, scorer: str, *, mc_passes: int = 50,
                  mc_seed: int = 0) -> list[ScoredSample]:
    """One ScoredSample per test point, deterministic given seeds."""
    if scorer not in SCORERS:
        raise ParameterError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")
    if len(dataset) == 0:
        return []

    if scorer == "softplus_ratio":
        if net.spec.head != "softplus":
            raise SpecError(
                f"softplus_ratio scorer needs a softplus-head network, got {net.spec.head!r}"
            )
        raw = head_outputs(net, dataset.images)
        preds = raw.argmax(axis=1)
        scores = np.array([softplus_ratio(row) for row in raw])
    elif scorer == "max_softmax":
        probs = predict_proba(net, dataset.images)
        preds = probs.argmax(axis=1)
        scores = np.array([max_softmax_score(row) for row in probs])
    else:
        scores, preds = mc_dropout_scores(
            net, dataset.images, passes=mc_passes, seed=mc_seed
        )

    return [
        ScoredSample(i, int(dataset.labels[i]), int(preds[i]), float(scores[i]), scorer)
        for i in range(len(dataset))
    ]


SCORES_CSV_HEADER = ["sample_id", "true_label", "predicted_label", "score", "scorer"]


def scores_to_csv(samples: list[ScoredSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORES_CSV_HEADER)
    for s in samples:
        writer.writerow([s.sample_id, s.true_label, s.predicted_label,
                         repr(s.score), s.scorer])
    return buf.getvalue()


def write_scores_csv(path, samples: list[ScoredSample]) -> None:
    atomic_write_text(path, scores_to_csv(samples))


def read_scores_csv(path) -> list[ScoredSample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORES_CSV_HEADER:
            raise ParameterError(f"{path}: unexpected scores header {header}")
        return [
            ScoredSample(int(r[0]), int(r[1]), int(r[2]), float(r[3]), r[4])
            for r in reader
        ]
