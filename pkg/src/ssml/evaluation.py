"""Retrieval evaluation (CMC and mAP) and mining-quality metrics.

Distances are 1 - cosine over unit vectors, so ranking matches a
nearest-gallery argmin. Ground-truth identity ids are consumed only here;
the mining and training paths never see them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGalleryError, QueryIdentityMissingError
from .featurestore import FeatureMatrix

CSV_HEADER = "epoch,rank1,rank5,rank10,map,mine_precision,mine_recall,mine_count"


@dataclass
class EvalReport:
    """One epoch's retrieval quality plus the mining quality that epoch used.

    ``cmc[k-1]`` is the fraction of queries whose first correct match ranks
    at or above k; the vector covers the whole gallery, so it is
    nondecreasing and ends at 1 whenever evaluation ran.
    """

    epoch: int
    cmc: np.ndarray
    mean_ap: float
    mining_precision: float
    mining_recall: float
    mined_count: int

    def rank(self, k: int) -> float:
        if self.cmc.size == 0:
            return float("nan")
        return float(self.cmc[min(k, self.cmc.size) - 1])

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.rank(1):.6f},{self.rank(5):.6f},{self.rank(10):.6f},"
            f"{self.mean_ap:.6f},{self.mining_precision:.6f},"
            f"{self.mining_recall:.6f},{self.mined_count}"
        )


def _as_rows(m) -> np.ndarray:
    data = m.data if isinstance(m, FeatureMatrix) else np.asarray(m)
    return np.atleast_2d(data).astype(np.float64)


def retrieve(query_z, gallery) -> np.ndarray:
    """Gallery indices sorted by ascending 1 - cosine, ties by index."""
    G = _as_rows(gallery)
    if G.shape[0] == 0:
        raise EmptyGalleryError("gallery is empty")
    q = np.asarray(query_z, dtype=np.float64).reshape(-1)
    dist = 1.0 - G @ q
    return np.argsort(dist, kind="stable")


def cmc_map(
    queries,
    gallery,
    query_ids: np.ndarray,
    gallery_ids: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Full CMC curve and mean average precision.

    Every query identity must occur in the gallery. AP for a query is the
    mean, over its correct matches, of (number correct up to that rank) /
    rank; mAP averages over queries.
    """
    Q = _as_rows(queries)
    G = _as_rows(gallery)
    if G.shape[0] == 0:
        raise EmptyGalleryError("gallery is empty")
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    missing = np.setdiff1d(query_ids, gallery_ids)
    if missing.size:
        raise QueryIdentityMissingError(
            f"identities {missing.tolist()} have no gallery entry"
        )
    dist = 1.0 - Q @ G.T
    ranked = np.argsort(dist, axis=1, kind="stable")
    matches = gallery_ids[ranked] == query_ids[:, None]

    first_hit = matches.argmax(axis=1)
    cmc = np.bincount(first_hit, minlength=G.shape[0]).cumsum() / Q.shape[0]

    cum_correct = matches.cumsum(axis=1)
    ranks = np.arange(1, G.shape[0] + 1)
    per_query_ap = (cum_correct / ranks * matches).sum(axis=1) / matches.sum(axis=1)
    return cmc.astype(np.float64), float(per_query_ap.mean())


def mining_quality(
    mined_sets, identities: np.ndarray, probes=None
) -> tuple[float, float, int]:
    """Aggregate precision/recall/count of mined label sets vs ground truth.

    Counts are pooled over all probes. An empty pool of mined labels scores
    precision 1.0 (nothing wrong was claimed), and a corpus with no true
    pairs scores recall 1.0. A probe's own label is ignored if present.
    """
    ids = np.asarray(identities)
    if probes is None:
        probes = np.arange(len(mined_sets))
    mined_total = 0
    correct = 0
    true_total = 0
    for probe, mined in zip(probes, mined_sets):
        probe = int(probe)
        mined = np.asarray(mined, dtype=np.int64)
        mined = mined[mined != probe]
        mined_total += mined.size
        correct += int(np.count_nonzero(ids[mined] == ids[probe]))
        true_total += int(np.count_nonzero(ids == ids[probe])) - 1
    precision = correct / mined_total if mined_total else 1.0
    recall = correct / true_total if true_total else 1.0
    return precision, recall, mined_total


def write_report_csv(path, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for report in reports:
            fh.write(report.csv_row() + "\n")
