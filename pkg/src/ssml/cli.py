"""Command-line surface: generate data, train, mine, evaluate, ablate.

Flag values override an optional line-oriented ``key=value`` config file,
which overrides the built-in defaults. Heavy modules are imported lazily so
``--threads`` can cap BLAS pools before numpy loads.

Exit codes: 0 success, 1 flag/config validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


GEN_DEFAULTS = {
    "identities": 50,
    "per_id": 20,
    "din": 32,
    "noise": 0.05,
    "seed": 7,
    "query_fraction": 0.2,
}

TRAIN_DEFAULTS = {
    "epochs": 60,
    "batch": 256,
    "tau": 0.6,
    "gamma": 0.01,
    "sigma": 0.2,
    "warmup": 5,
    "reinit": 5,
    "seed": 0,
    "lr": 0.01,
    "dim": 16,
    "hidden": 0,
    "margin": 0.3,
    "loss": "dtl",
    "mining": "intersection",
    "query_fraction": 0.2,
}


def _add_gen_flags(p):
    p.add_argument("--identities", type=int, default=None,
                   help=f"number of identities (default: {GEN_DEFAULTS['identities']})")
    p.add_argument("--per-id", dest="per_id", type=int, default=None,
                   help=f"samples per identity (default: {GEN_DEFAULTS['per_id']})")
    p.add_argument("--din", type=int, default=None,
                   help=f"input feature dimension (default: {GEN_DEFAULTS['din']})")
    p.add_argument("--noise", type=float, default=None,
                   help=f"per-coordinate jitter std (default: {GEN_DEFAULTS['noise']})")
    p.add_argument("--seed", type=int, default=None,
                   help=f"generator seed (default: {GEN_DEFAULTS['seed']})")
    p.add_argument("--query-fraction", dest="query_fraction", type=float, default=None,
                   help=f"held-out query share per identity (default: {GEN_DEFAULTS['query_fraction']})")


def _add_train_flags(p, include_loss_grid=True):
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (default: {TRAIN_DEFAULTS['epochs']})")
    p.add_argument("--batch", type=int, default=None,
                   help=f"batch size (default: {TRAIN_DEFAULTS['batch']})")
    p.add_argument("--tau", type=float, default=None,
                   help=f"similarity threshold (default: {TRAIN_DEFAULTS['tau']})")
    p.add_argument("--gamma", type=float, default=None,
                   help=f"hard-negative fraction (default: {TRAIN_DEFAULTS['gamma']})")
    p.add_argument("--sigma", type=float, default=None,
                   help=f"negative-term weight (default: {TRAIN_DEFAULTS['sigma']})")
    p.add_argument("--warmup", type=int, default=None,
                   help=f"self-positive warm-up epochs (default: {TRAIN_DEFAULTS['warmup']})")
    p.add_argument("--reinit", type=int, default=None,
                   help=f"dictionary re-init interval in epochs (default: {TRAIN_DEFAULTS['reinit']})")
    p.add_argument("--seed", type=int, default=None,
                   help=f"run seed (default: {TRAIN_DEFAULTS['seed']})")
    p.add_argument("--lr", type=float, default=None,
                   help=f"initial learning rate, decays x0.1 every 10 epochs (default: {TRAIN_DEFAULTS['lr']})")
    p.add_argument("--dim", type=int, default=None,
                   help=f"embedding dimension (default: {TRAIN_DEFAULTS['dim']})")
    p.add_argument("--hidden", type=int, default=None,
                   help=f"hidden layer width, 0 for a pure affine map (default: {TRAIN_DEFAULTS['hidden']})")
    p.add_argument("--margin", type=float, default=None,
                   help=f"margin for the classic triplet baseline (default: {TRAIN_DEFAULTS['margin']})")
    p.add_argument("--query-fraction", dest="query_fraction", type=float, default=None,
                   help=f"held-out query share used for evaluation (default: {TRAIN_DEFAULTS['query_fraction']})")
    if include_loss_grid:
        p.add_argument("--loss", choices=["dtl", "general_triplet"], default=None,
                       help=f"loss function (default: {TRAIN_DEFAULTS['loss']})")
        p.add_argument("--mining", choices=["ps", "rank", "adj", "intersection"], default=None,
                       help=f"positive-label strategy (default: {TRAIN_DEFAULTS['mining']})")


def build_parser() -> _Parser:
    parser = _Parser(prog="ssml", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP threads (default: hardware concurrency)")
    parser.add_argument("--config", default=None,
                        help="key=value file; flags override file values")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic feature corpus")
    _add_gen_flags(gen)
    gen.add_argument("-o", "--out", required=True, help="output prefix for .features/.labels")

    train = sub.add_parser("train", help="train the embedding head")
    train.add_argument("--features", required=True, help="input feature file")
    train.add_argument("--labels", default=None, help="optional label file, evaluation only")
    _add_train_flags(train)
    train.add_argument("--checkpoint", default=None, help="model checkpoint path")
    train.add_argument("--report", default=None, help="per-epoch CSV report path")

    mine = sub.add_parser("mine", help="dump mined label sets for a checkpoint")
    mine.add_argument("--features", required=True)
    mine.add_argument("--checkpoint", required=True)
    mine.add_argument("--tau", type=float, default=None,
                      help=f"similarity threshold (default: {TRAIN_DEFAULTS['tau']})")
    mine.add_argument("--gamma", type=float, default=None,
                      help=f"hard-negative fraction (default: {TRAIN_DEFAULTS['gamma']})")
    mine.add_argument("-o", "--out", default=None, help="output path (default: stdout)")

    ev = sub.add_parser("eval", help="CMC/mAP and mining quality for a checkpoint")
    ev.add_argument("--features", required=True)
    ev.add_argument("--labels", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--tau", type=float, default=None,
                    help=f"similarity threshold (default: {TRAIN_DEFAULTS['tau']})")
    ev.add_argument("--gamma", type=float, default=None,
                    help=f"hard-negative fraction (default: {TRAIN_DEFAULTS['gamma']})")
    ev.add_argument("--seed", type=int, default=None,
                    help=f"split seed (default: {TRAIN_DEFAULTS['seed']})")
    ev.add_argument("--query-fraction", dest="query_fraction", type=float, default=None,
                    help=f"held-out query share (default: {TRAIN_DEFAULTS['query_fraction']})")
    ev.add_argument("-o", "--out", default=None, help="CSV output path (default: stdout)")

    ab = sub.add_parser("ablate", help="loss x mining grid, one training run per cell")
    ab.add_argument("--features", required=True)
    ab.add_argument("--labels", required=True)
    _add_train_flags(ab, include_loss_grid=False)
    ab.add_argument("--loss-kinds", default="dtl,general_triplet",
                    help="comma list of losses (default: dtl,general_triplet)")
    ab.add_argument("--mining-kinds", default="ps,rank,adj,intersection",
                    help="comma list of strategies (default: ps,rank,adj,intersection)")
    ab.add_argument("-o", "--out", default=None, help="CSV output path (default: stdout)")
    return parser


def _load_config_file(path) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise _UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise _UsageError(f"--config: {exc}") from exc
    return values


def _fill(args, defaults, file_values):
    """Resolve each unset flag from the config file, then the defaults."""
    for dest, default in defaults.items():
        if getattr(args, dest, None) is not None:
            continue
        if dest in file_values:
            caster = type(default) if not isinstance(default, bool) else str
            try:
                setattr(args, dest, caster(file_values[dest]))
            except ValueError as exc:
                raise _UsageError(f"--config {dest}: {exc}") from exc
        else:
            setattr(args, dest, default)


def _validate_train(args) -> None:
    if args.epochs < 0:
        raise _UsageError(f"--epochs must be >= 0, got {args.epochs}")
    if args.batch < 1:
        raise _UsageError(f"--batch must be >= 1, got {args.batch}")
    if not -1.0 <= args.tau <= 1.0:
        raise _UsageError(f"--tau must be in [-1, 1], got {args.tau}")
    if not 0.0 < args.gamma <= 1.0:
        raise _UsageError(f"--gamma must be in (0, 1], got {args.gamma}")
    if not 0.0 < args.sigma <= 1.0:
        raise _UsageError(f"--sigma must be in (0, 1], got {args.sigma}")
    if args.warmup < 1:
        raise _UsageError(f"--warmup must be >= 1, got {args.warmup}")
    if args.reinit < 1:
        raise _UsageError(f"--reinit must be >= 1, got {args.reinit}")
    if args.lr <= 0:
        raise _UsageError(f"--lr must be > 0, got {args.lr}")
    if args.dim < 2:
        raise _UsageError(f"--dim must be >= 2, got {args.dim}")
    if args.hidden < 0:
        raise _UsageError(f"--hidden must be >= 0, got {args.hidden}")
    if args.margin < 0:
        raise _UsageError(f"--margin must be >= 0, got {args.margin}")
    if not 0.0 < args.query_fraction < 1.0:
        raise _UsageError(f"--query-fraction must be in (0, 1), got {args.query_fraction}")


def _train_config(args):
    from .trainer import TrainConfig

    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        tau=args.tau,
        gamma=args.gamma,
        sigma=args.sigma,
        warmup_epochs=args.warmup,
        reinit_interval=args.reinit,
        seed=args.seed,
        loss_kind=getattr(args, "loss", "dtl"),
        mining_kind=getattr(args, "mining", "intersection"),
        embed_dim=args.dim,
        hidden_dim=args.hidden or None,
        base_lr=args.lr,
        margin=args.margin,
    )


def _cmd_gen(args) -> int:
    from . import featurestore, synthdata

    if args.identities < 1:
        raise _UsageError(f"--identities must be >= 1, got {args.identities}")
    if args.per_id < 1:
        raise _UsageError(f"--per-id must be >= 1, got {args.per_id}")
    if args.din < 2:
        raise _UsageError(f"--din must be >= 2, got {args.din}")
    if args.noise < 0:
        raise _UsageError(f"--noise must be >= 0, got {args.noise}")
    if not 0.0 < args.query_fraction < 1.0:
        raise _UsageError(f"--query-fraction must be in (0, 1), got {args.query_fraction}")
    spec = synthdata.SynthSpec(
        num_identities=args.identities,
        samples_per_identity=args.per_id,
        d_in=args.din,
        intra_noise=args.noise,
        seed=args.seed,
        query_fraction=args.query_fraction,
    )
    corpus = synthdata.generate(spec)
    featurestore.write_features(f"{args.out}.features", corpus.features.data)
    featurestore.write_labels(f"{args.out}.labels", corpus.identities)
    print(f"wrote {args.out}.features ({corpus.features.n}x{corpus.features.d}) "
          f"and {args.out}.labels")
    return 0


def _load_corpus(args, need_labels):
    from . import featurestore, synthdata

    data = featurestore.FeatureMatrix(featurestore.read_features(args.features))
    identities = query = gallery = None
    labels_path = getattr(args, "labels", None)
    if labels_path is not None:
        identities = featurestore.read_labels(labels_path)
        if identities.shape[0] != data.n:
            raise ValueError(
                f"label count {identities.shape[0]} != feature count {data.n}"
            )
        query, gallery = synthdata.stratified_split(
            identities, args.query_fraction, args.seed
        )
    elif need_labels:
        raise _UsageError("--labels is required for this command")
    return data, identities, query, gallery


def _cmd_train(args) -> int:
    from .evaluation import CSV_HEADER, write_report_csv
    from .trainer import train

    _validate_train(args)
    data, identities, query, gallery = _load_corpus(args, need_labels=False)
    result = train(
        _train_config(args),
        data,
        identities=identities,
        query_indices=query,
        gallery_indices=gallery,
        checkpoint_path=args.checkpoint,
    )
    if args.report is not None:
        write_report_csv(args.report, result.reports)
    elif result.reports:
        print(CSV_HEADER)
        for report in result.reports:
            print(report.csv_row())
    return 0


def _mined_results(args, data):
    from .dplm import mine_all
    from .embedding import forward, load_checkpoint
    from .featurestore import Dictionary
    from .similarity import similarity_matrix

    model = load_checkpoint(args.checkpoint)
    z, _ = forward(model, data.data)
    dictionary = Dictionary(z.astype("float32"))
    sim = similarity_matrix(dictionary, args.tau)
    return mine_all(dictionary, sim, args.tau, args.gamma)


def _cmd_mine(args) -> int:
    from .dplm import format_result

    if not -1.0 <= args.tau <= 1.0:
        raise _UsageError(f"--tau must be in [-1, 1], got {args.tau}")
    if not 0.0 < args.gamma <= 1.0:
        raise _UsageError(f"--gamma must be in (0, 1], got {args.gamma}")
    data, _, _, _ = _load_corpus(args, need_labels=False)
    lines = [format_result(r) for r in _mined_results(args, data)]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_eval(args) -> int:
    from .dplm import mine_all
    from .embedding import forward, load_checkpoint
    from .evaluation import CSV_HEADER, EvalReport, cmc_map, mining_quality
    from .featurestore import Dictionary
    from .similarity import similarity_matrix
    import numpy as np

    if not -1.0 <= args.tau <= 1.0:
        raise _UsageError(f"--tau must be in [-1, 1], got {args.tau}")
    if not 0.0 < args.gamma <= 1.0:
        raise _UsageError(f"--gamma must be in (0, 1], got {args.gamma}")
    if not 0.0 < args.query_fraction < 1.0:
        raise _UsageError(f"--query-fraction must be in (0, 1), got {args.query_fraction}")
    data, identities, query, gallery = _load_corpus(args, need_labels=True)
    model = load_checkpoint(args.checkpoint)
    z, _ = forward(model, data.data)
    z = z.astype(np.float32)
    cmc, mean_ap = cmc_map(z[query], z[gallery], identities[query], identities[gallery])
    dictionary = Dictionary(z)
    sim = similarity_matrix(dictionary, args.tau)
    mined = [r.p_pos for r in mine_all(dictionary, sim, args.tau, args.gamma)]
    precision, recall, count = mining_quality(mined, identities)
    report = EvalReport(0, cmc, mean_ap, precision, recall, count)
    text = CSV_HEADER + "\n" + report.csv_row() + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_ablate(args) -> int:
    from .dplm import POSITIVE_KINDS
    from .trainer import LOSS_KINDS, ablation_csv_lines, ablation_run

    _validate_train(args)
    loss_kinds = [k for k in args.loss_kinds.split(",") if k]
    mining_kinds = [k for k in args.mining_kinds.split(",") if k]
    for kind in loss_kinds:
        if kind not in LOSS_KINDS:
            raise _UsageError(f"--loss-kinds: unknown loss {kind!r}")
    for kind in mining_kinds:
        if kind not in POSITIVE_KINDS:
            raise _UsageError(f"--mining-kinds: unknown strategy {kind!r}")
    data, identities, query, gallery = _load_corpus(args, need_labels=True)
    rows = ablation_run(
        _train_config(args), data, identities, query, gallery,
        loss_kinds=loss_kinds, mining_kinds=mining_kinds,
    )
    text = "\n".join(ablation_csv_lines(rows)) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


_COMMANDS = {
    "gen": (_cmd_gen, GEN_DEFAULTS),
    "train": (_cmd_train, TRAIN_DEFAULTS),
    "mine": (_cmd_mine, {"tau": 0.6, "gamma": 0.01}),
    "eval": (_cmd_eval, {"tau": 0.6, "gamma": 0.01, "seed": 0, "query_fraction": 0.2}),
    "ablate": (_cmd_ablate, {k: v for k, v in TRAIN_DEFAULTS.items()
                             if k not in ("loss", "mining")}),
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    if args.threads is not None:
        if args.threads < 1:
            print(f"error: --threads must be >= 1, got {args.threads}", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    handler, defaults = _COMMANDS[args.command]
    try:
        file_values = _load_config_file(args.config) if args.config else {}
        _fill(args, defaults, file_values)
        return handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
