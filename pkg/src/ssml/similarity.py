"""Cosine-similarity kernels over the feature dictionary.

All rows involved are unit vectors, so plain dot products are cosines and
every value lands in [-1, 1] up to float slack. The full matrix is
materialized densely (float32 storage, float64 accumulation); masking below
the threshold zeroes an entry, it never removes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .featurestore import Dictionary


@dataclass
class SimilarityVector:
    """One probe's similarity against every dictionary entry."""

    probe_index: int
    values: np.ndarray


@dataclass
class SimilarityMatrix:
    """Dense n x n similarity table, optionally threshold-masked."""

    values: np.ndarray
    thresholded: bool
    tau: float


def _check_tau(tau: float) -> None:
    # -1 keeps everything (useful for an unmasked table), 1 keeps only
    # exact alignments.
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [-1, 1], got {tau}")


def threshold_below(values: np.ndarray, tau: float) -> np.ndarray:
    """Copy ``values`` with every entry strictly below tau set to 0."""
    out = np.array(values, copy=True)
    out[out < tau] = 0.0
    return out


def ps_vector(z: np.ndarray, dictionary: Dictionary, probe_index: int = -1) -> SimilarityVector:
    """Similarity of a unit feature against every stored entry."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != dictionary.dim:
        raise DimensionMismatchError(
            f"feature has dim {z.shape[0]}, dictionary stores {dictionary.dim}"
        )
    values = dictionary.entries.astype(np.float64) @ z
    return SimilarityVector(probe_index=probe_index, values=values)


def similarity_matrix(dictionary: Dictionary, tau: float) -> SimilarityMatrix:
    """All-pairs similarity of the stored entries, masked below tau.

    Row i equals the probe-i similarity vector after identical masking;
    entries exactly equal to tau survive.
    """
    _check_tau(tau)
    e64 = dictionary.entries.astype(np.float64)
    values = (e64 @ e64.T).astype(np.float32)
    values[values < tau] = 0.0
    return SimilarityMatrix(values=values, thresholded=True, tau=tau)


def refresh_rows(sim: SimilarityMatrix, dictionary: Dictionary, rows) -> None:
    """Recompute the given rows (and matching columns, by symmetry) after
    the corresponding dictionary entries changed.

    Equivalent to rebuilding the matrix when only those entries moved.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if sim.values.shape[0] != len(dictionary):
        raise DimensionMismatchError("similarity matrix does not match dictionary size")
    e64 = dictionary.entries.astype(np.float64)
    patch = (e64[rows] @ e64.T).astype(np.float32)
    patch[patch < sim.tau] = 0.0
    sim.values[rows, :] = patch
    sim.values[:, rows] = patch.T
