"""Threshold-based detection metrics: operating points, ROC sweeps, AUROC,
and validation-side threshold calibration.

Conventions, fixed once and applied everywhere:
  * a sample is predicted positive iff score > tau (ties go negative);
  * positives are the thing being detected (misclassified samples for the
    misclassification task, out-of-distribution samples for the OOD task);
  * AUROC is the trapezoid over the exact step ROC, which equals the
    pairwise ranking statistic with half credit for ties.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CalibrationError, DegenerateInputError, ParameterError
from .util import atomic_write_text


@dataclass
class OperatingPoint:
    tau: float
    tpr: float
    fpr: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class DetectionReport:
    scorer: str
    positive_class: str
    auroc: float
    points: list[OperatingPoint]

    def to_json(self) -> str:
        payload = {
            "scorer": self.scorer,
            "positive_class": self.positive_class,
            "auroc": self.auroc,
            "points": [asdict(p) for p in self.points],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DetectionReport":
        d = json.loads(text)
        return DetectionReport(
            scorer=d["scorer"],
            positive_class=d["positive_class"],
            auroc=float(d["auroc"]),
            points=[OperatingPoint(**p) for p in d["points"]],
        )


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ParameterError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} vs {labels.shape}"
        )
    return scores, labels


def _require_both_classes(labels):
    pos = int(labels.sum())
    neg = int(len(labels) - pos)
    if pos == 0 or neg == 0:
        raise DegenerateInputError(
            f"need at least one positive and one negative, got {pos}/{neg}"
        )
    return pos, neg


def evaluate(scores, labels, tau: float) -> OperatingPoint:
    """Confusion counts and rates at a single threshold."""
    scores, labels = _as_arrays(scores, labels)
    pos, neg = _require_both_classes(labels)
    predicted = scores > tau
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    return OperatingPoint(
        tau=float(tau),
        tpr=tp / pos,
        fpr=fp / neg,
        tp=tp,
        fp=fp,
        tn=neg - fp,
        fn=pos - tp,
    )


def sweep(scores, labels, scorer: str = "", positive_class: str = "") -> DetectionReport:
    """Operating points at every distinct score plus +-inf sentinels."""
    scores, labels = _as_arrays(scores, labels)
    pos, neg = _require_both_classes(labels)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    cum_tp = np.cumsum(sorted_labels)
    cum_fp = np.cumsum(~sorted_labels)

    points = [OperatingPoint(math.inf, 0.0, 0.0, 0, 0, neg, pos)]
    # tau equal to a distinct value v predicts positive only for scores
    # strictly above v, i.e. every row before that value's tie group.
    group_firsts = np.flatnonzero(np.diff(sorted_scores, prepend=np.inf))
    for first in group_firsts:
        tau = float(sorted_scores[first])
        tp = int(cum_tp[first - 1]) if first > 0 else 0
        fp = int(cum_fp[first - 1]) if first > 0 else 0
        points.append(OperatingPoint(tau, tp / pos, fp / neg, tp, fp, neg - fp, pos - tp))
    points.append(OperatingPoint(-math.inf, 1.0, 1.0, pos, neg, 0, 0))

    auroc = 0.0
    for a, b in zip(points, points[1:]):
        auroc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return DetectionReport(scorer, positive_class, float(auroc), points)


def calibrate(scores, labels, target_kind: str, target_value: float) -> float:
    """Pick tau on validation scores meeting an fpr<=x or tpr>=y target.

    For an fpr target: the smallest tau achieving it (maximizes recall).
    For a tpr target: the largest tau achieving it (minimizes false alarms).
    Only the class the target constrains has to be present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if target_kind not in ("fpr", "tpr"):
        raise ParameterError(f"target kind must be 'fpr' or 'tpr', got {target_kind!r}")

    if target_kind == "fpr":
        ref = scores[~labels]
        if len(ref) == 0:
            raise DegenerateInputError("fpr calibration needs negative samples")
        candidates = [-math.inf] + sorted(set(ref.tolist()))
        best = None
        for tau in candidates:
            rate = float(np.mean(ref > tau))
            best = rate if best is None else min(best, rate)
            if rate <= target_value:
                return float(tau)
        raise CalibrationError(
            f"fpr <= {target_value} unachievable; best {best}", best_achievable=best
        )

    ref = scores[labels]
    if len(ref) == 0:
        raise DegenerateInputError("tpr calibration needs positive samples")
    candidates = sorted(set(ref.tolist()), reverse=True) + [-math.inf]
    best = None
    for tau in candidates:
        rate = float(np.mean(ref > tau))
        best = rate if best is None else max(best, rate)
        if rate >= target_value:
            return float(tau)
    raise CalibrationError(
        f"tpr >= {target_value} unachievable; best {best}", best_achievable=best
    )


def write_report(path, report: DetectionReport) -> None:
    atomic_write_text(path, report.to_json())


def read_report(path) -> DetectionReport:
    with open(path) as fh:
        return DetectionReport.from_json(fh.read())


SUMMARY_HEADER = ["method", "tpr", "fpr", "false_neg", "tau", "auroc"]


def summary_csv(rows: list[dict]) -> str:
    """Rows mirror the comparison-table columns: method, TPR, FPR, False-Neg."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for row in rows:
        writer.writerow([
            row["method"],
            repr(float(row["tpr"])),
            repr(float(row["fpr"])),
            int(row["false_neg"]),
            repr(float(row["tau"])),
            repr(float(row["auroc"])),
        ])
    return buf.getvalue()


def write_summary_csv(path, rows: list[dict]) -> None:
    atomic_write_text(path, summary_csv(rows))
