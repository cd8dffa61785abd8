"""Dataset containers, IDX file ingestion, synthetic blobs, and splits.

IDX is the big-endian binary container used by the classic digit
benchmarks: u32 magic (0x00000803 for u8 image stacks, 0x00000801 for u8
label vectors), u32 dimension sizes, then the raw payload. Pixels are
scaled to [0,1] by dividing by 255 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError, ParseError, SplitError
from .tensor import DTYPE, Rng
from .util import atomic_write_bytes

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """Images (or feature vectors) with integer class labels.

    images: [N,H,W] pixels in [0,1] when normalization == "unit_interval",
            or [N,D] raw feature vectors with normalization == "raw".
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""
    normalization: str = "unit_interval"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{self.name}: {len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(
                f"{self.name}: labels outside [0, {self.n_classes})"
            )
        if self.normalization == "unit_interval" and len(self.images):
            lo, hi = float(self.images.min()), float(self.images.max())
            if lo < 0.0 or hi > 1.0:
                raise DataError(
                    f"{self.name}: pixels outside [0,1] (min {lo}, max {hi})"
                )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, indices, name: str | None = None) -> "LabeledDataset":
        indices = np.asarray(indices)
        return replace(
            self,
            images=self.images[indices],
            labels=self.labels[indices],
            name=name if name is not None else self.name,
        )


@dataclass
class OodPair:
    """An in-distribution set and a shape-matched out-of-distribution set."""

    in_distribution: LabeledDataset
    out_of_distribution: LabeledDataset

    def __post_init__(self):
        a = self.in_distribution.image_shape
        b = self.out_of_distribution.image_shape
        if a != b:
            raise DataError(f"OOD pair image shapes differ: {a} vs {b}")


def _read_idx_header(raw: bytes, path, expected_magic: int, rank: int):
    if len(raw) < 4:
        raise ParseError(f"{path}: file ends at byte {len(raw)}, no magic")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise ParseError(
            f"{path}: bad magic 0x{magic:08x} at byte offset 0, "
            f"expected 0x{expected_magic:08x}"
        )
    header_len = 4 + 4 * rank
    if len(raw) < header_len:
        raise ParseError(f"{path}: truncated header, file ends at byte {len(raw)}")
    dims = struct.unpack_from(f">{rank}I", raw, 4)
    return dims, header_len


def load_idx_images(path) -> np.ndarray:
    """Images only, as [N,H,W] floats in [0,1]."""
    path = Path(path)
    raw = path.read_bytes()
    (n, h, w), off = _read_idx_header(raw, path, IDX_IMAGES_MAGIC, 3)
    expected = off + n * h * w
    if len(raw) != expected:
        raise ParseError(
            f"{path}: payload mismatch at byte offset {off}: "
            f"expected {expected} bytes total, got {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(n, h, w)
    return pixels.astype(DTYPE) / 255.0


def load_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    (n,), off = _read_idx_header(raw, path, IDX_LABELS_MAGIC, 1)
    if len(raw) != off + n:
        raise ParseError(
            f"{path}: payload mismatch at byte offset {off}: "
            f"expected {off + n} bytes total, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=off).astype(np.int64)


def load_idx(images_path, labels_path, name: str = "") -> LabeledDataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ParseError(
            f"count mismatch: {images_path} has {len(images)} images but "
            f"{labels_path} has {len(labels)} labels"
        )
    n_classes = int(labels.max()) + 1 if len(labels) else 1
    return LabeledDataset(images, labels, n_classes, name=name or Path(images_path).stem)


def save_idx(ds: LabeledDataset, images_path, labels_path) -> None:
    """Write pixels as u8 (round(x*255)) and labels as u8."""
    n, h, w = ds.images.shape
    pixels = np.clip(np.round(ds.images * 255.0), 0, 255).astype(np.uint8)
    img_blob = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes()
    lbl_blob = struct.pack(">II", IDX_LABELS_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()
    atomic_write_bytes(images_path, img_blob)
    atomic_write_bytes(labels_path, lbl_blob)


def make_blobs(rng: Rng, n_classes: int, n_per_class: int, dim: int = 2,
               center_spread: float = 10.0, sigma: float = 1.0) -> LabeledDataset:
    """Gaussian clusters around centers drawn uniformly in a cube.

    Deterministic given the rng; the reference dataset for trainer and
    ensemble sanity tests.
    """
    if n_classes < 2:
        raise ParameterError(f"make_blobs needs n_classes >= 2, got {n_classes}")
    if sigma <= 0:
        raise ParameterError(f"make_blobs needs sigma > 0, got {sigma}")
    if n_per_class < 1:
        raise ParameterError(f"make_blobs needs n_per_class >= 1, got {n_per_class}")
    half = center_spread / 2.0
    centers = rng.uniform(-half, half, (n_classes, dim))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    points = centers[labels] + rng.normal(0.0, sigma, (len(labels), dim))
    return LabeledDataset(points, labels, n_classes, name="blobs", normalization="raw")


def _largest_remainder(count: int, fractions) -> list[int]:
    raw = [count * f for f in fractions]
    base = [int(np.floor(r)) for r in raw]
    leftover = count - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: raw[i] - base[i], reverse=True)
    for i in order[:leftover]:
        base[i] += 1
    return base


def split(ds: LabeledDataset, fractions, rng: Rng):
    """Stratified (train, val, test) partition.

    Within every class, counts land within +-1 of the requested proportion;
    the three index sets are disjoint and cover the dataset.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise SplitError(f"need exactly three fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    if any(f <= 0 for f in fractions):
        raise SplitError(f"fractions must all be positive, got {fractions}; a split would be empty")

    parts: list[list[int]] = [[], [], []]
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        counts = _largest_remainder(len(idx), fractions)
        start = 0
        for part, k in zip(parts, counts):
            part.extend(idx[start:start + k].tolist())
            start += k
    result = []
    for part, tag in zip(parts, ("train", "val", "test")):
        if not part:
            raise SplitError(f"{tag} split is empty for fractions {fractions}")
        result.append(ds.subset(np.sort(np.array(part)), name=f"{ds.name}/{tag}"))
    return tuple(result)


def filter_classes(ds: LabeledDataset, keep) -> LabeledDataset:
    """Hold-out-classes helper: keep the listed labels, remapped to 0..len-1."""
    keep = list(keep)
    if not keep:
        raise ParameterError("filter_classes needs at least one class label")
    remap = {c: i for i, c in enumerate(keep)}
    mask = np.isin(ds.labels, keep)
    images = ds.images[mask]
    labels = np.array([remap[c] for c in ds.labels[mask]], dtype=np.int64)
    return LabeledDataset(images, labels, len(keep),
                          name=f"{ds.name}/classes{keep}", normalization=ds.normalization)
