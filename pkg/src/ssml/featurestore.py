"""Unit-norm feature storage, the per-sample feature dictionary, and the
binary feature/label file formats.

Rows are stored as float32; norms and averages are accumulated in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, IndexOutOfRangeError, ZeroNormRowError

FEATURE_MAGIC = b"SSMLFT01"
LABEL_MAGIC = b"SSMLLB01"

NORM_FLOOR = 1e-12


def row_norms(m: np.ndarray) -> np.ndarray:
    """L2 norm of every row, accumulated in float64."""
    m = np.atleast_2d(np.asarray(m))
    return np.sqrt(np.einsum("ij,ij->i", m, m, dtype=np.float64))


def normalize_rows(m: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Scale each row of ``m`` to unit L2 norm.

    Raises ZeroNormRowError naming the first row whose norm falls below the
    1e-12 floor. A 1-D input is treated as a single row and returned 1-D.
    """
    arr = np.asarray(m, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    norms = row_norms(arr)
    bad = np.flatnonzero(norms <= NORM_FLOOR)
    if bad.size:
        raise ZeroNormRowError(int(bad[0]))
    out = (arr / norms[:, None]).astype(dtype)
    return out[0] if single else out


@dataclass
class FeatureMatrix:
    """n x d matrix of unit-norm feature rows.

    The row index doubles as the sample's label: row i carries label i, so
    every sample starts out as its own single-member identity.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DimensionMismatchError("feature matrix must be 2-D")
        n, d = self.data.shape
        if n < 1 or d < 2:
            raise DimensionMismatchError(f"need n >= 1 and d >= 2, got {n}x{d}")

    @classmethod
    def from_raw(cls, data: np.ndarray) -> "FeatureMatrix":
        """Build from arbitrary rows, normalizing each to unit length."""
        return cls(normalize_rows(np.atleast_2d(data)))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.n, dtype=np.int64)


class Dictionary:
    """Fixed-size store of one unit-norm feature row per training sample.

    Rows are keyed by the sample's index label. Entries evolve by averaging
    with freshly extracted features (then renormalizing) and are periodically
    re-initialized from a full forward pass so stored rows track the live
    embedding. The row count is fixed at construction.

    Reads are safe from any number of threads; ``update``/``reinit`` need
    exclusive access (the trainer is single-writer).
    """

    def __init__(self, entries: np.ndarray, epoch_of_last_reinit: int = 0):
        entries = np.array(entries, dtype=np.float32, copy=True, order="C")
        if entries.ndim != 2:
            raise DimensionMismatchError("dictionary entries must be 2-D")
        self.entries = entries
        self.epoch_of_last_reinit = int(epoch_of_last_reinit)

    @classmethod
    def from_features(cls, features: FeatureMatrix, epoch: int = 0) -> "Dictionary":
        return cls(features.data, epoch_of_last_reinit=epoch)

    def __len__(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def update(self, index: int, z: np.ndarray, t: int) -> None:
        """Blend a fresh feature into entry ``index``.

        For t >= 1 the entry becomes the renormalized mean of the stored row
        and ``z``; at t == 0 the entry is set to ``z`` directly (initial
        fill). ``z`` must be unit-norm. Raises ZeroNormRowError when the
        stored row and ``z`` are exactly antipodal, since the mean then has
        no direction.
        """
        n = self.entries.shape[0]
        if not 0 <= index < n:
            raise IndexOutOfRangeError(f"label {index} outside 0..{n - 1}")
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"feature has dim {z.shape[0]}, dictionary stores {self.dim}"
            )
        if t == 0:
            self.entries[index] = z.astype(np.float32)
            return
        mean = (self.entries[index].astype(np.float64) + z) / 2.0
        norm = float(np.sqrt(np.dot(mean, mean)))
        if norm <= NORM_FLOOR:
            raise ZeroNormRowError(index, f"entry {index} is antipodal to the update")
        self.entries[index] = (mean / norm).astype(np.float32)

    def reinit(self, features: FeatureMatrix, t: int) -> None:
        """Replace every entry with the given features and record the epoch."""
        if features.data.shape != self.entries.shape:
            raise DimensionMismatchError(
                f"cannot reinit {self.entries.shape} store from {features.data.shape}"
            )
        self.entries[...] = features.data
        self.epoch_of_last_reinit = int(t)


def write_features(path, data: np.ndarray) -> None:
    """Write a dense float matrix: magic, u64 n, u64 d, then row-major f32."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise DimensionMismatchError("feature files hold 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        n, d = struct.unpack("<QQ", fh.read(16))
        raw = fh.read(n * d * 4)
    if len(raw) != n * d * 4:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float32)


def write_labels(path, identities: np.ndarray) -> None:
    """Write ground-truth identity ids: magic, u64 n, then u32 ids."""
    ids = np.ascontiguousarray(identities, dtype="<u4")
    if ids.ndim != 1:
        raise DimensionMismatchError("label files hold 1-D id arrays")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<Q", ids.shape[0]))
        fh.write(ids.tobytes())


def read_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != LABEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {LABEL_MAGIC!r}")
        (n,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(n * 4)
    if len(raw) != n * 4:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype="<u4").astype(np.uint32)
