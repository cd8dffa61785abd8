"""Ensembles of identically-architected, differently-initialized networks.

Model uncertainty is read off the ensemble as per-sample spread: run every
member, average the probability vectors, take the argmax class of the
average, and report the population variance across members of the
probability assigned to that class. Perfect member agreement gives zero;
disagreement grows the score. The aggregate over a batch is the mean of
the per-sample spreads.

The same machinery hosts the two study axes families (depth / loss /
hidden width / epochs) and the unknown-class variant, where each member is
additionally fed its own disjoint slice of an out-of-distribution pool
labeled as an extra "none of the above" class.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .errors import DataError, ParameterError, SpecError, StateError, TrainingDiverged
from .nn.model_io import load_network, save_network
from .nn.network import Network, NetworkSpec, init, mlp, output_size, predict_proba
from .nn.train import TrainConfig, train
from .tensor import Rng
from .util import atomic_write_text, parallel_map

STUDY_AXES = ("layers", "loss", "hidden_neurons", "epochs")


@dataclass
class EnsembleBundle:
    members: list[Network]
    spec: NetworkSpec
    member_seeds: list[int]
    unknown_slices: list[np.ndarray] | None = None
    n_known_classes: int | None = None

    def __post_init__(self):
        if len(self.members) < 2:
            raise ParameterError(f"an ensemble needs K >= 2 members, got {len(self.members)}")
        if self.unknown_slices is not None:
            seen: set[int] = set()
            for sl in self.unknown_slices:
                ids = set(int(i) for i in sl)
                if seen & ids:
                    raise DataError("unknown-class slices overlap across members")
                seen |= ids

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def unknown_class_mode(self) -> bool:
        return self.unknown_slices is not None

    @property
    def trained(self) -> bool:
        return all(m.epochs_completed > 0 for m in self.members)


@dataclass
class ModelUncertaintyReport:
    per_sample: np.ndarray
    aggregate: float
    axis_label: str = ""

    @staticmethod
    def from_spreads(spreads: np.ndarray, axis_label: str = "") -> "ModelUncertaintyReport":
        spreads = np.asarray(spreads, dtype=float)
        return ModelUncertaintyReport(spreads, float(spreads.mean()), axis_label)


def train_ensemble(spec: NetworkSpec, dataset: LabeledDataset, k: int,
                   config: TrainConfig, base_seed: int,
                   threads: int = 1) -> EnsembleBundle:
    """K members, seeds base_seed..base_seed+K-1, trained independently.

    Members may train in parallel; each owns its own seed-derived streams,
    so the result is identical for any thread count.
    """
    if k < 2:
        raise ParameterError(f"train_ensemble needs K >= 2, got {k}")
    seeds = [base_seed + i for i in range(k)]

    def train_member(seed: int):
        member_spec = spec.with_seed(seed)
        member_config = TrainConfig(**{**config.to_dict(), "shuffle_seed": config.shuffle_seed + seed})
        try:
            return train(init(member_spec), dataset, member_config)
        except TrainingDiverged as err:
            return err

    results = parallel_map(train_member, seeds, threads)
    failed = [i for i, r in enumerate(results) if isinstance(r, TrainingDiverged)]
    if failed:
        raise TrainingDiverged(
            f"ensemble members diverged: {failed}", failed_members=failed
        )
    return EnsembleBundle(list(results), spec, seeds)


def member_probabilities(bundle: EnsembleBundle, images: np.ndarray,
                         threads: int = 1) -> np.ndarray:
    """[K, N, n_outputs] probability vectors, reduced in fixed member order."""
    if not bundle.trained:
        raise StateError("ensemble bundle has untrained members")
    rows = parallel_map(lambda m: predict_proba(m, images), bundle.members, threads)
    return np.stack(rows, axis=0)


def spread_from_probabilities(probs: np.ndarray) -> np.ndarray:
    """Per-sample variance across members of the consensus-class probability."""
    mean = probs.mean(axis=0)
    consensus = mean.argmax(axis=1)  # ties resolve to the lowest class index
    picked = probs[:, np.arange(probs.shape[1]), consensus]
    return picked.var(axis=0)  # population variance across members


def model_uncertainty(bundle: EnsembleBundle, images: np.ndarray,
                      axis_label: str = "", threads: int = 1) -> ModelUncertaintyReport:
    probs = member_probabilities(bundle, images, threads)
    return ModelUncertaintyReport.from_spreads(spread_from_probabilities(probs), axis_label)


# ---------------------------------------------------------------------------
# Study axes
# ---------------------------------------------------------------------------

@dataclass
class StudyConfig:
    """Base setup a study varies one axis of."""

    input_shape: tuple[int, ...]
    n_classes: int
    k: int = 5
    base_seed: int = 0
    hidden_units: int = 32
    n_hidden_layers: int = 1
    loss: str = "categorical_cross_entropy"
    train: TrainConfig = field(default_factory=TrainConfig)
    threads: int = 1


def _study_spec(cfg: StudyConfig) -> NetworkSpec:
    return mlp(
        cfg.input_shape,
        cfg.n_classes,
        hidden_units=cfg.hidden_units,
        n_hidden_layers=cfg.n_hidden_layers,
        loss=cfg.loss,
        seed=cfg.base_seed,
    )


def _apply_axis(cfg: StudyConfig, axis: str, value) -> StudyConfig:
    cfg = StudyConfig(**{**cfg.__dict__})
    cfg.train = TrainConfig(**cfg.train.to_dict())
    if axis == "epochs":
        if int(value) < 1:
            raise SpecError(f"epochs axis needs values >= 1, got {value}")
        cfg.train.epochs = int(value)
    elif axis == "hidden_neurons":
        if int(value) < 1:
            raise SpecError(f"hidden_neurons axis needs values >= 1, got {value}")
        cfg.hidden_units = int(value)
    elif axis == "layers":
        if int(value) < 1:
            raise SpecError(f"layers axis needs values >= 1, got {value}")
        cfg.n_hidden_layers = int(value)
    elif axis == "loss":
        cfg.loss = str(value)  # validated when the spec is built
    else:
        raise SpecError(f"unknown study axis {axis!r}; expected one of {STUDY_AXES}")
    return cfg


def run_study(axis: str, values, dataset: LabeledDataset, eval_images: np.ndarray,
              base: StudyConfig, out_dir=None) -> list[ModelUncertaintyReport]:
    """One freshly trained bundle and one spread report per axis value.

    With out_dir set, also writes per-value spread and full per-class
    member-distribution CSVs for external plotting.
    """
    if not values:
        raise ParameterError("study needs a non-empty list of axis values")
    reports = []
    for value in values:
        cfg = _apply_axis(base, axis, value)
        spec = _study_spec(cfg)
        bundle = train_ensemble(spec, dataset, cfg.k, cfg.train, cfg.base_seed,
                                threads=cfg.threads)
        probs = member_probabilities(bundle, eval_images, cfg.threads)
        spreads = spread_from_probabilities(probs)
        label = f"{axis}={value}"
        reports.append(ModelUncertaintyReport.from_spreads(spreads, label))
        if out_dir is not None:
            _write_study_value_files(Path(out_dir), axis, value, spreads, probs)
    return reports


def _write_study_value_files(out_dir: Path, axis: str, value, spreads, probs) -> None:
    tag = f"{axis}_{value}"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "spread"])
    for i, s in enumerate(spreads):
        w.writerow([i, repr(float(s))])
    atomic_write_text(out_dir / f"study_{tag}_spread.csv", buf.getvalue())

    mean = probs.mean(axis=0)
    var = probs.var(axis=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "class", "mean_prob", "var_prob"])
    for i in range(mean.shape[0]):
        for c in range(mean.shape[1]):
            w.writerow([i, c, repr(float(mean[i, c])), repr(float(var[i, c]))])
    atomic_write_text(out_dir / f"study_{tag}_distributions.csv", buf.getvalue())


def write_study_summary(path, reports: list[ModelUncertaintyReport]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis_value", "aggregate_spread"])
    for r in reports:
        w.writerow([r.axis_label, repr(r.aggregate)])
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# Unknown-class variant
# ---------------------------------------------------------------------------

MIN_SLICE = 100


def partition_pool(n_pool: int, k: int, min_per_slice: int = MIN_SLICE) -> list[np.ndarray]:
    """K disjoint contiguous index slices covering n_pool (remainder dropped)."""
    per = n_pool // k
    if per < min_per_slice:
        raise DataError(
            f"pool of {n_pool} cannot give {k} slices of at least "
            f"{min_per_slice}; each slice would get {per}"
        )
    return [np.arange(i * per, (i + 1) * per) for i in range(k)]


def train_unknown_class_ensemble(spec: NetworkSpec, dataset: LabeledDataset,
                                 ood_pool: LabeledDataset, k: int,
                                 config: TrainConfig, base_seed: int,
                                 threads: int = 1) -> EnsembleBundle:
    """Member i trains on dataset + its own pool slice labeled n_classes.

    The spec must already reserve the extra output: n_classes + 1 units.
    """
    if k < 2:
        raise ParameterError(f"needs K >= 2, got {k}")
    n_known = dataset.n_classes
    if output_size(spec) != n_known + 1:
        raise SpecError(
            f"unknown-class spec needs {n_known + 1} outputs "
            f"({n_known} known classes + 1), got {output_size(spec)}"
        )
    if dataset.image_shape != ood_pool.image_shape:
        raise DataError(
            f"pool image shape {ood_pool.image_shape} != dataset {dataset.image_shape}"
        )
    slices = partition_pool(len(ood_pool), k)
    seeds = [base_seed + i for i in range(k)]

    def train_member(item):
        seed, sl = item
        images = np.concatenate([dataset.images, ood_pool.images[sl]])
        labels = np.concatenate([
            dataset.labels,
            np.full(len(sl), n_known, dtype=np.int64),
        ])
        merged = LabeledDataset(images, labels, n_known + 1,
                                name=f"{dataset.name}+unknown",
                                normalization=dataset.normalization)
        member_config = TrainConfig(**{**config.to_dict(), "shuffle_seed": config.shuffle_seed + seed})
        try:
            return train(init(spec.with_seed(seed)), merged, member_config)
        except TrainingDiverged as err:
            return err

    results = parallel_map(train_member, list(zip(seeds, slices)), threads)
    failed = [i for i, r in enumerate(results) if isinstance(r, TrainingDiverged)]
    if failed:
        raise TrainingDiverged(f"ensemble members diverged: {failed}", failed_members=failed)
    return EnsembleBundle(list(results), spec, seeds, unknown_slices=slices,
                          n_known_classes=n_known)


def unknown_class_score(bundle: EnsembleBundle, images: np.ndarray,
                        threads: int = 1) -> np.ndarray:
    """Mean over members of the normalized mass on the unknown class, in [0,1]."""
    if not bundle.unknown_class_mode:
        raise StateError("bundle was not trained with an unknown class")
    probs = member_probabilities(bundle, images, threads)
    return probs[:, :, -1].mean(axis=0)


# ---------------------------------------------------------------------------
# Bundle persistence: bundle.json + member{k}/ model directories
# ---------------------------------------------------------------------------

def save_bundle(bundle: EnsembleBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "deepuq-bundle",
        "spec": bundle.spec.to_dict(),
        "k": bundle.k,
        "member_seeds": bundle.member_seeds,
        "unknown_class_mode": bundle.unknown_class_mode,
        "unknown_slices": (
            [sl.tolist() for sl in bundle.unknown_slices]
            if bundle.unknown_slices is not None else None
        ),
        "n_known_classes": bundle.n_known_classes,
    }
    for i, member in enumerate(bundle.members):
        save_network(member, directory / f"member{i}")
    atomic_write_text(directory / "bundle.json", json.dumps(manifest, indent=2, sort_keys=True))


def load_bundle(directory) -> EnsembleBundle:
    directory = Path(directory)
    manifest = json.loads((directory / "bundle.json").read_text())
    members = [load_network(directory / f"member{i}") for i in range(manifest["k"])]
    slices = manifest.get("unknown_slices")
    return EnsembleBundle(
        members=members,
        spec=NetworkSpec.from_dict(manifest["spec"]),
        member_seeds=[int(s) for s in manifest["member_seeds"]],
        unknown_slices=[np.asarray(sl) for sl in slices] if slices is not None else None,
        n_known_classes=manifest.get("n_known_classes"),
    )
