"""Synthetic identity-clustered feature corpora with ground-truth labels.

Identity centroids are drawn uniformly on the unit sphere with a pairwise
cosine cap enforced by rejection; samples are centroid plus per-coordinate
Gaussian jitter, renormalized. Ground-truth ids exist for evaluation only,
the training path never reads them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CentroidRejectionExhaustedError
from .featurestore import FeatureMatrix, normalize_rows

MAX_CENTROID_ATTEMPTS = 10_000
CENTROID_COSINE_CAP = 0.5


@dataclass
class SynthSpec:
    """Knobs for one synthetic corpus; ``intra_noise`` sets task difficulty."""

    num_identities: int
    samples_per_identity: int
    d_in: int = 32
    intra_noise: float = 0.05
    seed: int = 0
    query_fraction: float = 0.2

    def __post_init__(self):
        if self.num_identities < 1:
            raise ValueError(f"num_identities must be >= 1, got {self.num_identities}")
        if self.samples_per_identity < 1:
            raise ValueError(
                f"samples_per_identity must be >= 1, got {self.samples_per_identity}"
            )
        if self.num_identities * self.samples_per_identity < 2:
            raise ValueError("corpus needs at least 2 samples")
        if self.d_in < 2:
            raise ValueError(f"d_in must be >= 2, got {self.d_in}")
        if self.intra_noise < 0:
            raise ValueError(f"intra_noise must be >= 0, got {self.intra_noise}")
        if not 0.0 < self.query_fraction < 1.0:
            raise ValueError(
                f"query_fraction must be in (0, 1), got {self.query_fraction}"
            )


@dataclass
class SynthCorpus:
    features: FeatureMatrix
    identities: np.ndarray        # uint32, one id per row
    query_indices: np.ndarray
    gallery_indices: np.ndarray


def _draw_centroids(rng: np.random.Generator, count: int, d_in: int) -> np.ndarray:
    centroids = np.empty((count, d_in), dtype=np.float64)
    for i in range(count):
        for attempt in range(MAX_CENTROID_ATTEMPTS):
            c = rng.standard_normal(d_in)
            norm = np.sqrt(c @ c)
            if norm <= 1e-12:
                continue
            c /= norm
            if i == 0 or np.max(centroids[:i] @ c) <= CENTROID_COSINE_CAP:
                centroids[i] = c
                break
        else:
            raise CentroidRejectionExhaustedError(
                f"could not place centroid {i} of {count} in {d_in} dims "
                f"after {MAX_CENTROID_ATTEMPTS} attempts"
            )
    return centroids


def stratified_split(
    identities: np.ndarray, query_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-identity query/gallery split, deterministic in (labels, seed).

    Each identity with at least two samples lands in both halves; singleton
    identities go to the gallery.
    """
    ids = np.asarray(identities)
    rng = np.random.default_rng(seed)
    query, gallery = [], []
    for ident in np.unique(ids):
        members = np.flatnonzero(ids == ident)
        if members.size < 2:
            gallery.extend(members.tolist())
            continue
        n_q = int(round(query_fraction * members.size))
        n_q = min(max(n_q, 1), members.size - 1)
        chosen = rng.choice(members, size=n_q, replace=False)
        chosen_set = set(chosen.tolist())
        query.extend(sorted(chosen_set))
        gallery.extend(int(m) for m in members if int(m) not in chosen_set)
    return np.array(sorted(query), dtype=np.int64), np.array(sorted(gallery), dtype=np.int64)


def generate(spec: SynthSpec) -> SynthCorpus:
    """Draw a corpus. Bitwise-deterministic for a fixed spec."""
    rng = np.random.default_rng(spec.seed)
    centroids = _draw_centroids(rng, spec.num_identities, spec.d_in)
    rows = np.empty(
        (spec.num_identities * spec.samples_per_identity, spec.d_in), dtype=np.float32
    )
    identities = np.repeat(
        np.arange(spec.num_identities, dtype=np.uint32), spec.samples_per_identity
    )
    for ident in range(spec.num_identities):
        jitter = rng.standard_normal((spec.samples_per_identity, spec.d_in))
        raw = centroids[ident][None, :] + spec.intra_noise * jitter
        start = ident * spec.samples_per_identity
        rows[start : start + spec.samples_per_identity] = normalize_rows(raw)
    query, gallery = stratified_split(identities, spec.query_fraction, spec.seed)
    return SynthCorpus(
        features=FeatureMatrix(rows),
        identities=identities,
        query_indices=query,
        gallery_indices=gallery,
    )


def cosine_separation(features: FeatureMatrix, identities: np.ndarray) -> tuple[float, float]:
    """(mean intra-identity cosine, mean inter-identity cosine) over all pairs."""
    X = features.data.astype(np.float64)
    sims = X @ X.T
    ids = np.asarray(identities)
    same = ids[:, None] == ids[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    intra = sims[same & off_diag]
    inter = sims[~same]
    mean_intra = float(intra.mean()) if intra.size else 1.0
    mean_inter = float(inter.mean()) if inter.size else -1.0
    return mean_intra, mean_inter
