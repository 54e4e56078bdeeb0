"""Batch command line: preprocess, train, evaluate, predict, experiment.

Every subcommand accepts ``--config FILE`` (a JSON object keyed by the
subcommand's option names, e.g. ``{"epochs": 10, "no_duration": true}``);
flags given on the command line override it. Failures exit with status 1 and
one ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import __version__
from .dataset import Sample, load_dataset, make_splits, save_dataset
from .evaluation import UserPop, evaluate
from .experiments import DEFAULT_M_VALUES, input_length_experiment, write_rows
from .model import score_candidates
from .pipeline import preprocess_checkins, preprocess_gps
from .training import (Checkpoint, ModelScorer, TrainConfig, checkpoint_meta, geometry_from_checkpoint,
                       load_checkpoint, save_checkpoint, train, write_log)
from .trajectory import DEFAULT_DIST_THRESHOLD, DEFAULT_EPS, DEFAULT_MIN_PTS, DEFAULT_TIME_THRESHOLD


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors become the same single-line diagnostic as runtime errors
    def error(self, message):
        raise CLIError(message)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--dim", type=int, default=d.dim, help="embedding dimension")
    p.add_argument("--lr", type=float, default=d.learning_rate, help="Adam learning rate")
    p.add_argument("--dropout", type=float, default=d.dropout, help="dropout rate")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--max-len", type=int, default=d.max_len, help="maximum history length")
    p.add_argument("--negatives", type=int, default=d.num_negatives, help="negative samples per step")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="samples per update")
    p.add_argument("--clip-norm", type=float, default=d.clip_norm, help="global gradient norm clip (0 = off)")
    p.add_argument("--seed", type=int, default=d.seed, help="base random seed")
    p.add_argument("--no-duration", action="store_true", default=False, help="drop the duration embedding")
    p.add_argument("--no-longshort", action="store_true", default=False,
                   help="single branch over the whole history")


def _train_config(args) -> TrainConfig:
    return TrainConfig(dim=args.dim, learning_rate=args.lr, dropout=args.dropout, epochs=args.epochs,
                       max_len=args.max_len, num_negatives=args.negatives, batch_size=args.batch_size,
                       seed=args.seed, use_duration=not args.no_duration,
                       use_long_short=not args.no_longshort, clip_norm=args.clip_norm)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="nextpoi", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw input to a dataset file", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--input", required=True, help="raw GPS CSV or check-in TSV")
    p.add_argument("--format", choices=("gps", "checkin"), default="checkin", help="input format")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--dist-threshold", type=float, default=DEFAULT_DIST_THRESHOLD, help="stay radius (m)")
    p.add_argument("--time-threshold", type=int, default=DEFAULT_TIME_THRESHOLD, help="minimum stay (s)")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="DBSCAN radius (m)")
    p.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS, help="DBSCAN core size")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="ranking metrics on a split", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", default=None, help="checkpoint file")
    g.add_argument("--baseline", choices=("userpop",), default=None, help="baseline ranker")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--k", type=_int_list, default=[5, 10], help="comma-separated cutoffs")
    p.add_argument("--split", choices=("train", "val", "test"), default="test", help="split to score")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank next locations for a user", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--user", required=True, help="user key as in the raw input")
    p.add_argument("--topk", type=int, default=10, help="number of locations to print")
    p.add_argument("--time", type=int, default=None,
                   help="prediction time in epoch seconds; unset means the last check-in time")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="experiment harnesses", formatter_class=fmt)
    esub = p.add_subparsers(dest="experiment", required=True)
    e = esub.add_parser("input-length", help="retrain on the last m check-ins per user", formatter_class=fmt)
    e.add_argument("--config", default=None, help="JSON config file")
    e.add_argument("--data", required=True, help="dataset file")
    e.add_argument("--m", type=_int_list, default=list(DEFAULT_M_VALUES), help="comma-separated m values")
    e.add_argument("--out", required=True, help="output directory")
    _add_train_flags(e)
    e.set_defaults(func=cmd_input_length)
    return parser


def _subparser_for(parser, argv):
    """The innermost subparser selected by ``argv``."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults overlaid from the ``--config`` JSON file."""
    path = _config_path(argv)
    if path:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise CLIError(f"{path}: config must be a JSON object")
        sub = _subparser_for(parser, argv)
        dests = {a.dest for a in sub._actions} - {"help", "config", "func"}
        unknown = sorted(set(values) - dests)
        if unknown:
            raise CLIError(f"{path}: unknown config keys {unknown}")
        for a in sub._actions:
            if a.dest in values:
                a.required = False
        for grp in sub._mutually_exclusive_groups:
            if any(a.dest in values for a in grp._group_actions):
                grp.required = False
        sub.set_defaults(**values)
    return parser.parse_args(argv)


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_preprocess(args) -> int:
    if args.format == "gps":
        ds = preprocess_gps(args.input, dist_threshold=args.dist_threshold, time_threshold=args.time_threshold,
                            eps=args.eps, min_pts=args.min_pts)
    else:
        ds = preprocess_checkins(args.input)
    save_dataset(args.out, ds)
    _write_json(args.out + ".stats.json", ds.stats)
    _write_json(args.out + ".config.json", _effective(args))
    print(json.dumps(ds.stats, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = _train_config(args)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.json"), _effective(args))
    result = train(ds, cfg)
    save_checkpoint(os.path.join(args.out, "final.ckpt"),
                    Checkpoint(result.params, result.adam, cfg, checkpoint_meta(ds, result, "final")))
    # the best snapshot keeps the final optimizer state; only its weights differ
    save_checkpoint(os.path.join(args.out, "best.ckpt"),
                    Checkpoint(result.best_params, result.adam, cfg, checkpoint_meta(ds, result, "best")))
    write_log(os.path.join(args.out, "train_log.csv"), result.log)
    print(json.dumps({"config": asdict(cfg), "best_epoch": result.best_epoch,
                      "epochs_run": len(result.log)}, sort_keys=True))
    return 0


def _load_model(path):
    if not os.path.isfile(path):
        raise CLIError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_evaluate(args) -> int:
    ds = load_dataset(args.data)
    samples = make_splits(ds).get(args.split)
    if args.model:
        ckpt = _load_model(args.model)
        scorer = ModelScorer(ckpt.params, geometry_from_checkpoint(ds, ckpt), ckpt.config)
    else:
        scorer = UserPop(ds)
    report = evaluate(scorer, samples, args.k)
    os.makedirs(args.out, exist_ok=True)
    report.write_csv(os.path.join(args.out, "metrics.csv"))
    report.write_ranks(os.path.join(args.out, "ranks.csv"))
    _write_json(os.path.join(args.out, "config.json"), _effective(args))
    for metric, k, value in report.rows():
        print(f"{metric}@{k}\t{value:.4f}\t({args.split}, n={report.sample_count})")
    return 0


def cmd_predict(args) -> int:
    ds = load_dataset(args.data)
    ckpt = _load_model(args.model)
    if args.user not in ds.user_keys:
        raise CLIError("unknown user")
    if args.topk < 1:
        raise CLIError("--topk must be >= 1")
    u = ds.user_keys.index(args.user)
    history = ds.checkins(u)
    when = history[-1].time if args.time is None else args.time
    geo = geometry_from_checkpoint(ds, ckpt)
    cfg = ckpt.config
    scores = score_candidates(ckpt.params, Sample(u, history, -1, when), geo, None, cfg.max_len,
                              cfg.use_duration, cfg.use_long_short)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:args.topk]
    print("rank,location_id,location_key,score")
    for r, i in enumerate(order, start=1):
        print(f"{r},{i},{ds.location_keys[i]},{float(scores[i])!r}")
    return 0


def cmd_input_length(args) -> int:
    ds = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.json"), _effective(args))
    rows = input_length_experiment(ds, args.m, _train_config(args))
    write_rows(os.path.join(args.out, "input_length.csv"), rows)
    for r in rows:
        print(f"m={r['m']}\tndcg@5={r['ndcg@5']:.4f}\trecall@5={r['recall@5']:.4f}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except (CLIError, ValueError, OSError, IndexError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
