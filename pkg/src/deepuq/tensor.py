"""Float64 tensor conventions, seeded RNG streams, and the binary tensor format.

All numeric data in this package is carried by C-contiguous float64 numpy
arrays. This module pins the conventions down in one place: the dtype, the
reduction semantics (population variance, lowest-index argmax ties), the
on-disk container, and the counter-based RNG that hands out independent,
reproducible streams to every training job, ensemble member, and dropout
pass.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError, ShapeError
from .util import atomic_write_bytes

DTYPE = np.float64

TENSOR_MAGIC = b"UQTENSOR"

MASK64 = 0xFFFFFFFFFFFFFFFF


def as_tensor(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=DTYPE)


class Rng:
    """Counter-based (Philox) random stream keyed by (seed, stream id).

    An identical (seed, stream) pair reproduces the identical sample
    sequence on any machine. Independent work gets independent streams via
    `split`; instances are single-owner and never shared across workers.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & MASK64
        self.stream = int(stream) & MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def split(self, stream: int) -> "Rng":
        """Fresh independent stream under the same seed."""
        return Rng(self.seed, stream)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        if not low <= high:
            raise ParameterError(f"uniform needs low <= high, got ({low}, {high})")
        return self._gen.uniform(low, high, size=shape).astype(DTYPE, copy=False)

    def normal(self, mu: float = 0.0, sigma: float = 1.0, shape=()) -> np.ndarray:
        if sigma < 0:
            raise ParameterError(f"normal needs sigma >= 0, got {sigma}")
        return self._gen.normal(mu, sigma, size=shape).astype(DTYPE, copy=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)


def sample(rng: Rng, dist, shape) -> np.ndarray:
    """Draw i.i.d. samples from `dist` = ("uniform", a, b) or ("normal", mu, sigma).

    Advances the rng state.
    """
    kind, *params = dist
    if kind == "uniform":
        a, b = params
        return rng.uniform(a, b, tuple(shape))
    if kind == "normal":
        mu, sigma = params
        return rng.normal(mu, sigma, tuple(shape))
    raise ParameterError(f"unknown distribution kind {kind!r}")


def matmul(a, b) -> np.ndarray:
    """Standard matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 tensors, got shapes {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


REDUCE_OPS = ("sum", "mean", "max", "argmax", "variance")


def reduce(t, op: str, axis: int | None = None) -> np.ndarray:
    """Reduce a tensor with one of sum|mean|max|argmax|variance.

    Variance is the population variance (divide by N). argmax returns the
    lowest index on exact ties.
    """
    t = np.asarray(t, dtype=DTYPE)
    if t.size == 0:
        raise ShapeError("reduce: empty input tensor")
    if op not in REDUCE_OPS:
        raise ParameterError(f"unknown reduce op {op!r}; expected one of {REDUCE_OPS}")
    if axis is not None and not 0 <= axis < t.ndim:
        raise ParameterError(f"axis {axis} out of range for rank-{t.ndim} tensor")
    if op == "sum":
        return np.sum(t, axis=axis)
    if op == "mean":
        return np.mean(t, axis=axis)
    if op == "max":
        return np.max(t, axis=axis)
    if op == "argmax":
        return np.argmax(t, axis=axis)
    return np.var(t, axis=axis)  # ddof=0: population variance


def assert_all_finite(t, where: str = "tensor") -> None:
    from .errors import NumericError

    if not np.all(np.isfinite(t)):
        raise NumericError(f"non-finite values in {where}")


def save_tensor(path, arr) -> None:
    """Write the flat binary container: magic, u32 rank, u32 dims, f64 payload.

    All integers and floats little-endian; payload row-major.
    """
    arr = as_tensor(arr)
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    atomic_write_bytes(path, header + arr.astype("<f8").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != TENSOR_MAGIC:
        raise ParseError(f"{path}: bad tensor magic at byte offset 0")
    (rank,) = struct.unpack_from("<I", raw, 8)
    dims_end = 12 + 4 * rank
    if len(raw) < dims_end:
        raise ParseError(f"{path}: truncated dims, file ends at byte {len(raw)}")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 8 * count
    if len(raw) != expected:
        raise ParseError(
            f"{path}: payload length mismatch at byte offset {dims_end}: "
            f"expected {expected} total bytes, got {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=dims_end, count=count)
    return flat.astype(DTYPE).reshape(dims)
