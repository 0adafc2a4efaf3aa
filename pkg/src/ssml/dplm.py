"""Positive-label mining over the feature dictionary.

For a probe row, candidates are gathered by similarity threshold, then
double-checked two ways: mutual top-K rank agreement (the probe must rank
inside each candidate's own top-K) and neighborhood-distribution distance
(rows of the masked similarity matrix that lie nearest the probe's row).
The intersection of the two checks is the mined positive set; everything
else is negative, and the most similar slice of the negatives forms the
hard-negative set used for repulsion.

All functions here are pure with respect to their inputs, so a trainer can
mine a whole batch concurrently against one snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGammaError
from .featurestore import Dictionary
from .similarity import SimilarityMatrix, SimilarityVector

POSITIVE_KINDS = ("ps", "rank", "adj", "intersection")


@dataclass
class MiningResult:
    """Label sets mined for one probe.

    ``p_ps`` and ``n_hard`` keep their similarity ordering (most similar
    first); the other sets are sorted by index. ``similarities`` is the raw
    (unmasked) probe-vs-dictionary similarity row the mining ran on.
    """

    probe: int
    p_ps: np.ndarray
    k: int
    p_rank: np.ndarray
    p_adj: np.ndarray
    p_pos: np.ndarray
    n_neg: np.ndarray
    n_hard: np.ndarray
    similarities: np.ndarray


def _values(s) -> np.ndarray:
    return s.values if isinstance(s, SimilarityVector) else np.asarray(s)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise InvalidGammaError(f"gamma must be in (0, 1], got {gamma}")


def candidate_set(s, tau: float, probe: int) -> np.ndarray:
    """Labels whose similarity passes tau, most similar first.

    The probe itself never qualifies; ties break by ascending index. An
    empty result is legal (the trainer then falls back to the self-positive).
    """
    values = _values(s)
    keep = values >= tau
    if 0 <= probe < keep.shape[0]:
        keep[probe] = False
    idx = np.flatnonzero(keep).astype(np.int64)
    if idx.size == 0:
        return idx
    order = np.lexsort((idx, -values[idx]))
    return idx[order]


def rank_consistent_set(
    probe: int, p_ps: np.ndarray, sim: SimilarityMatrix, tau: float
) -> np.ndarray:
    """Candidates that reciprocate: the probe must sit in the candidate's
    own top-K list, K being the probe's candidate count."""
    k = len(p_ps)
    kept = []
    for j in p_ps:
        top = candidate_set(sim.values[int(j)], tau, int(j))[:k]
        if np.any(top == probe):
            kept.append(int(j))
    return np.array(sorted(kept), dtype=np.int64)


def adjacent_set(probe: int, sim: SimilarityMatrix, k: int) -> np.ndarray:
    """The k labels whose masked similarity rows lie nearest the probe's row.

    Distance is Euclidean over whole rows, ties break by ascending index,
    and the probe is excluded. Result is sorted by index.
    """
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    rows = sim.values.astype(np.float64)
    sq = np.einsum("ij,ij->i", rows, rows)
    d2 = sq + sq[probe] - 2.0 * (rows @ rows[probe])
    return _nearest_by_distance(d2, probe, k)


def _nearest_by_distance(d2: np.ndarray, probe: int, k: int) -> np.ndarray:
    d2 = d2.copy()
    d2[probe] = np.inf
    n = d2.shape[0]
    order = np.lexsort((np.arange(n), d2))
    return np.sort(order[: min(k, n - 1)])


def negative_labels(n: int, probe: int, positives: np.ndarray) -> np.ndarray:
    """Every label that is neither the probe nor a mined positive."""
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(positives, dtype=np.int64)] = False
    mask[probe] = False
    return np.flatnonzero(mask).astype(np.int64)


def hard_negative_labels(negatives: np.ndarray, similarities, gamma: float) -> np.ndarray:
    """Most-similar ceil(gamma * count) negatives, descending similarity.

    Ranking uses raw (unmasked) similarities so near-threshold impostors
    order correctly; ties break by ascending index.
    """
    _check_gamma(gamma)
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.size == 0:
        return negatives
    take = math.ceil(gamma * negatives.size)
    values = _values(similarities)
    order = np.lexsort((negatives, -values[negatives]))
    return negatives[order[:take]]


def mine(
    probe: int, dictionary: Dictionary, sim: SimilarityMatrix, tau: float, gamma: float
) -> MiningResult:
    """Run the full mining pipeline for one probe.

    ``sim`` must be the threshold-masked matrix built from ``dictionary``
    with this ``tau``. The positive set is the intersection of the
    rank-agreement and nearest-neighborhood sets; negatives are everything
    else except the probe.
    """
    _check_gamma(gamma)
    e64 = dictionary.entries.astype(np.float64)
    s_raw = e64 @ e64[probe]
    return _mine_from_row(probe, s_raw, sim, tau, gamma)


def mine_all(
    dictionary: Dictionary,
    sim: SimilarityMatrix,
    tau: float,
    gamma: float,
    probes=None,
) -> list[MiningResult]:
    """mine() for many probes, batching the O(n^2) row-distance work.

    Returns results in probe order; defaults to every label.
    """
    _check_gamma(gamma)
    n = len(dictionary)
    probes = np.arange(n, dtype=np.int64) if probes is None else np.asarray(probes, dtype=np.int64)
    e64 = dictionary.entries.astype(np.float64)
    raw = e64[probes] @ e64.T
    rows64 = sim.values.astype(np.float64)
    sq = np.einsum("ij,ij->i", rows64, rows64)
    d2_all = sq[None, :] + sq[probes][:, None] - 2.0 * (rows64[probes] @ rows64.T)
    cache: dict[int, np.ndarray] = {}
    results = []
    for b, probe in enumerate(probes):
        results.append(
            _mine_from_row(
                int(probe), raw[b], sim, tau, gamma,
                d2=d2_all[b], candidate_cache=cache,
            )
        )
    return results


def _mine_from_row(
    probe: int,
    s_raw: np.ndarray,
    sim: SimilarityMatrix,
    tau: float,
    gamma: float,
    d2: np.ndarray | None = None,
    candidate_cache: dict | None = None,
) -> MiningResult:
    n = s_raw.shape[0]
    p_ps = candidate_set(s_raw, tau, probe)
    k = len(p_ps)

    kept = []
    for j in p_ps:
        j = int(j)
        if candidate_cache is not None and j in candidate_cache:
            cand = candidate_cache[j]
        else:
            cand = candidate_set(sim.values[j], tau, j)
            if candidate_cache is not None:
                candidate_cache[j] = cand
        if np.any(cand[:k] == probe):
            kept.append(j)
    p_rank = np.array(sorted(kept), dtype=np.int64)

    if k > 0:
        if d2 is None:
            p_adj = adjacent_set(probe, sim, k)
        else:
            p_adj = _nearest_by_distance(d2, probe, k)
    else:
        p_adj = np.empty(0, dtype=np.int64)

    p_pos = np.intersect1d(p_rank, p_adj)
    n_neg = negative_labels(n, probe, p_pos)
    n_hard = hard_negative_labels(n_neg, s_raw, gamma)
    return MiningResult(
        probe=probe,
        p_ps=p_ps,
        k=k,
        p_rank=p_rank,
        p_adj=p_adj,
        p_pos=p_pos,
        n_neg=n_neg,
        n_hard=n_hard,
        similarities=s_raw,
    )


def positives_of(result: MiningResult, kind: str) -> np.ndarray:
    """The positive set a given mining strategy would train on."""
    if kind == "ps":
        return result.p_ps
    if kind == "rank":
        return result.p_rank
    if kind == "adj":
        return result.p_adj
    if kind == "intersection":
        return result.p_pos
    raise ValueError(f"unknown mining kind {kind!r}, expected one of {POSITIVE_KINDS}")


def format_result(result: MiningResult) -> str:
    """One line per probe for dumps and golden-file tests."""
    pos = ",".join(str(int(j)) for j in result.p_pos)
    hard = ",".join(str(int(j)) for j in result.n_hard)
    return f"{result.probe}\tP+:{pos}\tNhard:{hard}"
