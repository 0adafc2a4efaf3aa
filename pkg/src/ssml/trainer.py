"""Training loop: extract features, refresh the dictionary, mine labels,
apply the loss, step the optimizer.

Per epoch: (a) on reinit epochs, a full forward pass re-initializes the
dictionary; (b) shuffled batches each mine against the dictionary snapshot
left by the previous batch, take one optimizer step, then fold their fresh
features into the dictionary and patch the similarity matrix; (c) the
held-out split is evaluated. During warm-up epochs every sample's only
positive is itself, with hard negatives drawn from all other labels. Runs
are bitwise-deterministic for a fixed config and thread count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import dplm
from .embedding import (
    EmbeddingModel,
    backward,
    forward,
    init_model,
    lr_schedule,
    save_checkpoint,
    sgd_step,
)
from .evaluation import EvalReport, cmc_map, mining_quality
from .featurestore import Dictionary, FeatureMatrix
from .loss import dtl, triplet_over_sets
from .similarity import refresh_rows, similarity_matrix

logger = logging.getLogger(__name__)

LOSS_KINDS = ("dtl", "general_triplet")


@dataclass
class TrainConfig:
    """Hyperparameters with full-scale defaults.

    The synthetic acceptance runs scale down to batch_size=64, epochs=30.
    """

    epochs: int = 60
    batch_size: int = 256
    tau: float = 0.6
    gamma: float = 0.01
    sigma: float = 0.2
    warmup_epochs: int = 5
    reinit_interval: int = 5
    seed: int = 0
    loss_kind: str = "dtl"
    mining_kind: str = "intersection"
    embed_dim: int = 16
    hidden_dim: int | None = None
    base_lr: float = 0.01
    lr_decay: float = 0.1
    lr_interval: int = 10
    margin: float = 0.3

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [-1, 1], got {self.tau}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 < self.sigma <= 1.0:
            raise ValueError(f"sigma must be in (0, 1], got {self.sigma}")
        if self.warmup_epochs < 1:
            raise ValueError(f"warmup_epochs must be >= 1, got {self.warmup_epochs}")
        if self.reinit_interval < 1:
            raise ValueError(f"reinit_interval must be >= 1, got {self.reinit_interval}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.mining_kind not in dplm.POSITIVE_KINDS:
            raise ValueError(
                f"mining_kind must be one of {dplm.POSITIVE_KINDS}, got {self.mining_kind!r}"
            )
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


@dataclass
class TrainResult:
    model: EmbeddingModel
    dictionary: Dictionary
    reports: list
    # positives actually trained on, per epoch then per sample index;
    # warm-up and fallback entries hold {self}.
    used_positives: list = field(default_factory=list)


def _embed_all(model: EmbeddingModel, data: FeatureMatrix) -> np.ndarray:
    z, _ = forward(model, data.data)
    return z


def _evaluate(
    model, data, identities, query_indices, gallery_indices, epoch, pos_log
) -> EvalReport:
    if identities is None or query_indices is None or gallery_indices is None:
        return EvalReport(epoch, np.empty(0), float("nan"), float("nan"), float("nan"), 0)
    z = _embed_all(model, data).astype(np.float32)
    ids = np.asarray(identities)
    cmc, mean_ap = cmc_map(
        z[query_indices], z[gallery_indices], ids[query_indices], ids[gallery_indices]
    )
    precision, recall, count = mining_quality(pos_log, identities)
    return EvalReport(epoch, cmc, mean_ap, precision, recall, count)


def train(
    config: TrainConfig,
    data: FeatureMatrix,
    identities=None,
    query_indices=None,
    gallery_indices=None,
    checkpoint_path=None,
) -> TrainResult:
    """Run the full loop on index-labelled features.

    ``identities`` and the query/gallery split are optional and feed only
    the per-epoch evaluation; mining never sees them. ``checkpoint_path``,
    when given, is (re)written at the end of every reinit interval and after
    the final epoch.
    """
    config.validate()
    n = data.n
    rng = np.random.default_rng(config.seed)
    model = init_model(
        data.d,
        config.embed_dim,
        hidden_dim=config.hidden_dim,
        rng=rng,
        learning_rate=config.base_lr,
        momentum=0.9,
    )
    dictionary = Dictionary(_embed_all(model, data).astype(np.float32))
    result = TrainResult(model=model, dictionary=dictionary, reports=[])
    if config.epochs == 0:
        return result

    step = 0
    for epoch in range(config.epochs):
        model.learning_rate = lr_schedule(
            epoch, config.base_lr, config.lr_decay, config.lr_interval
        )
        if epoch % config.reinit_interval == 0:
            z_all = _embed_all(model, data).astype(np.float32)
            dictionary.reinit(FeatureMatrix(z_all), epoch)
        sim = similarity_matrix(dictionary, config.tau)

        perm = rng.permutation(n)
        pos_log = [None] * n
        for b_idx in range(0, n, config.batch_size):
            batch = perm[b_idx : b_idx + config.batch_size]
            step += 1
            z_batch, cache = forward(model, data.data[batch])

            if epoch < config.warmup_epochs:
                # Mining starts only after warm-up; until then each sample's
                # sole positive is itself and no negatives are used, so the
                # loss cannot tear apart not-yet-verified neighbors.
                positives = [np.array([p], dtype=np.int64) for p in batch]
                results = None
            else:
                results = dplm.mine_all(
                    dictionary, sim, config.tau, config.gamma, probes=batch
                )
                positives = []
                for r in results:
                    chosen = dplm.positives_of(r, config.mining_kind)
                    if chosen.size == 0:
                        chosen = np.array([r.probe], dtype=np.int64)
                    positives.append(chosen)

            grads_z = np.zeros((len(batch), config.embed_dim))
            total = pos_total = neg_total = 0.0
            for i, probe in enumerate(batch):
                pos = positives[i]
                if results is None:
                    hard = np.empty(0, dtype=np.int64)
                else:
                    negs = dplm.negative_labels(n, int(probe), pos[pos != probe])
                    hard = dplm.hard_negative_labels(
                        negs, results[i].similarities, config.gamma
                    )
                if config.loss_kind == "dtl":
                    value = dtl(z_batch[i], dictionary, pos, hard, config.sigma)
                else:
                    value = triplet_over_sets(
                        z_batch[i], dictionary, pos, hard, config.margin
                    )
                grads_z[i] = value.grad_wrt_probe
                total += value.total
                pos_total += value.positive_term
                neg_total += value.negative_term
                pos_log[int(probe)] = pos

            # Mean reduction keeps the step size batch-size independent; the
            # logged loss stays the batch sum.
            sgd_step(model, backward(model, cache, grads_z / len(batch)))
            for i, probe in enumerate(batch):
                dictionary.update(int(probe), z_batch[i], t=step)
            refresh_rows(sim, dictionary, batch)
            logger.info(
                "epoch=%d batch=%d loss=%f pos_term=%f neg_term=%f",
                epoch, b_idx // config.batch_size, total, pos_total, neg_total,
            )

        result.reports.append(
            _evaluate(
                model, data, identities, query_indices, gallery_indices, epoch, pos_log
            )
        )
        result.used_positives.append(pos_log)
        if checkpoint_path is not None and (
            (epoch + 1) % config.reinit_interval == 0 or epoch == config.epochs - 1
        ):
            save_checkpoint(model, checkpoint_path)
    return result


ABLATION_HEADER = "loss,mining,rank1,rank5,map"


def ablation_run(
    config: TrainConfig,
    data: FeatureMatrix,
    identities,
    query_indices,
    gallery_indices,
    loss_kinds=LOSS_KINDS,
    mining_kinds=dplm.POSITIVE_KINDS,
) -> list[dict]:
    """Train one model per (loss, mining) cell with shared seed and data.

    Returns rows with the final-epoch rank-1/rank-5/mAP per cell, in grid
    order, ready for CSV emission.
    """
    rows = []
    for loss_kind in loss_kinds:
        for mining_kind in mining_kinds:
            cell = replace(config, loss_kind=loss_kind, mining_kind=mining_kind)
            outcome = train(cell, data, identities, query_indices, gallery_indices)
            final = outcome.reports[-1]
            rows.append(
                {
                    "loss": loss_kind,
                    "mining": mining_kind,
                    "rank1": final.rank(1),
                    "rank5": final.rank(5),
                    "map": final.mean_ap,
                }
            )
    return rows


def ablation_csv_lines(rows) -> list[str]:
    lines = [ABLATION_HEADER]
    for row in rows:
        lines.append(
            f"{row['loss']},{row['mining']},{row['rank1']:.6f},"
            f"{row['rank5']:.6f},{row['map']:.6f}"
        )
    return lines
