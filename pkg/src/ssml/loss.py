"""Metric-learning objectives against stored dictionary entries.

The dictionary triplet objective drives positive similarities toward +1 and
hard-negative similarities toward -1 via squared deviations; the classic
margin triplet is kept as a baseline. Gradients are taken with respect to
the probe's (already normalized) feature; backprop through the embedding's
normalization lives in the embedding module. Dictionary entries are a
non-parametric store and receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRangeError
from .featurestore import Dictionary

_NORM_FLOOR = 1e-12


@dataclass
class LossValue:
    """Scalar loss with its decomposition and the probe-feature gradient."""

    total: float
    positive_term: float
    negative_term: float
    grad_wrt_probe: np.ndarray


@dataclass
class BatchLoss:
    """Summed batch loss; row i of ``per_probe_grads`` belongs to probe i."""

    total: float
    positive_term: float
    negative_term: float
    per_probe_grads: np.ndarray


@dataclass
class TripletConfig:
    """Margin for the classic triplet and the negative-term weight."""

    margin: float = 0.3
    sigma: float = 0.2

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError(f"sigma must be in (0, 1], got {self.sigma}")


def _gather(dictionary: Dictionary, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size:
        lo, hi = int(labels.min()), int(labels.max())
        if lo < 0 or hi >= len(dictionary):
            raise IndexOutOfRangeError(
                f"labels span {lo}..{hi}, dictionary holds 0..{len(dictionary) - 1}"
            )
    return dictionary.entries[labels].astype(np.float64)


def dtl(probe_feature, dictionary: Dictionary, p_pos, n_hard, sigma: float) -> LossValue:
    """Dictionary triplet loss for one probe.

    positive_term = sum over positives of (sim - 1)^2, negative_term = sum
    over hard negatives of (sim + 1)^2, total = positive + sigma * negative.
    The gradient is with respect to ``probe_feature`` itself.
    """
    z = np.asarray(probe_feature, dtype=np.float64).reshape(-1)
    pos_rows = _gather(dictionary, p_pos)
    neg_rows = _gather(dictionary, n_hard)
    pos_dev = pos_rows @ z - 1.0
    neg_dev = neg_rows @ z + 1.0
    positive_term = float(pos_dev @ pos_dev)
    negative_term = float(neg_dev @ neg_dev)
    grad = 2.0 * (pos_dev @ pos_rows) + sigma * 2.0 * (neg_dev @ neg_rows)
    return LossValue(
        total=positive_term + sigma * negative_term,
        positive_term=positive_term,
        negative_term=negative_term,
        grad_wrt_probe=grad,
    )


def batch_dtl(batch, dictionary: Dictionary, sigma: float) -> BatchLoss:
    """Sum of per-probe losses over (probe_feature, MiningResult) pairs."""
    if not batch:
        raise ValueError("batch must be nonempty")
    grads = []
    total = positive = negative = 0.0
    for probe_feature, result in batch:
        value = dtl(probe_feature, dictionary, result.p_pos, result.n_hard, sigma)
        total += value.total
        positive += value.positive_term
        negative += value.negative_term
        grads.append(value.grad_wrt_probe)
    return BatchLoss(
        total=total,
        positive_term=positive,
        negative_term=negative,
        per_probe_grads=np.stack(grads),
    )


def general_triplet(anchor, positive, negative, margin: float) -> LossValue:
    """Classic hinge triplet max(0, d(a,p) - d(a,n) + margin), Euclidean d.

    The gradient is with respect to the anchor; a degenerate pair (zero
    distance) contributes no gradient on its side.
    """
    a = np.asarray(anchor, dtype=np.float64).reshape(-1)
    p = np.asarray(positive, dtype=np.float64).reshape(-1)
    n = np.asarray(negative, dtype=np.float64).reshape(-1)
    ap = a - p
    an = a - n
    d_ap = float(np.sqrt(ap @ ap))
    d_an = float(np.sqrt(an @ an))
    raw = d_ap - d_an + margin
    if raw <= 0.0:
        return LossValue(0.0, 0.0, 0.0, np.zeros_like(a))
    grad = np.zeros_like(a)
    if d_ap > _NORM_FLOOR:
        grad += ap / d_ap
    if d_an > _NORM_FLOOR:
        grad -= an / d_an
    return LossValue(total=raw, positive_term=raw, negative_term=0.0, grad_wrt_probe=grad)


def triplet_over_sets(
    probe_feature, dictionary: Dictionary, positives, negatives, margin: float
) -> LossValue:
    """Mean classic-triplet hinge over all (positive, negative) label pairs.

    Used when training with the margin baseline on mined label sets; the
    mean keeps the magnitude comparable across probes with different set
    sizes. Empty sets yield a zero loss.
    """
    z = np.asarray(probe_feature, dtype=np.float64).reshape(-1)
    pos_rows = _gather(dictionary, positives)
    neg_rows = _gather(dictionary, negatives)
    if pos_rows.shape[0] == 0 or neg_rows.shape[0] == 0:
        return LossValue(0.0, 0.0, 0.0, np.zeros_like(z))
    dp_vec = z[None, :] - pos_rows
    dn_vec = z[None, :] - neg_rows
    dp = np.sqrt(np.einsum("ij,ij->i", dp_vec, dp_vec))
    dn = np.sqrt(np.einsum("ij,ij->i", dn_vec, dn_vec))
    hinge = dp[:, None] - dn[None, :] + margin
    active = hinge > 0.0
    pairs = dp.shape[0] * dn.shape[0]
    total = float(hinge[active].sum()) / pairs

    safe_p = np.where(dp > _NORM_FLOOR, dp, 1.0)
    safe_n = np.where(dn > _NORM_FLOOR, dn, 1.0)
    unit_p = np.where((dp > _NORM_FLOOR)[:, None], dp_vec / safe_p[:, None], 0.0)
    unit_n = np.where((dn > _NORM_FLOOR)[:, None], dn_vec / safe_n[:, None], 0.0)
    grad = (active.sum(axis=1) @ unit_p - active.sum(axis=0) @ unit_n) / pairs
    return LossValue(total=total, positive_term=total, negative_term=0.0, grad_wrt_probe=grad)
