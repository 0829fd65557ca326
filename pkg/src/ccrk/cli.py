"""Command-line surface.

Subcommands: gen, eval, train, compare, geometry, gradcheck, rank.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every run prints its resolved configuration (including the seed) as a JSON
line on stdout; error text goes to stderr. Report paths write figures next
to their CSV artifacts unless --no-plot is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import plots
from .corpus import (
    SyntheticConfig,
    generate_synthetic,
    load_corpus,
    load_tokens,
    save_corpus,
    save_tokens,
)
from .errors import DataError, InvalidConfig, NumericalError
from .geometry import (
    DEFAULT_ANGLE_GRID,
    LEMMA_PRACTICAL_VS_CORRECT,
    LEMMA_SINGLE_TARGET_BIAS,
    TripleConfig,
    lemma_sweep,
    summarize_sweep,
    write_sweep_csv,
)
from .gradcheck import GRAD_TOLERANCE, run_gradcheck
from .metrics import (
    DIRECTION_IR,
    DIRECTION_TR,
    RerankConfig,
    compute_ranks,
    metrics_report,
    oracle_scorer,
    query_order,
)
from .numerics import Rng
from .trainer import (
    MODE_FULL,
    MODE_ONE_TO_K,
    MODE_ONE_TO_ONE,
    TrainConfig,
    compare_modes,
    export_embeddings,
    final_metrics,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_MODE_FLAGS = {"1to1": MODE_ONE_TO_ONE, "1tok": MODE_ONE_TO_K, "full": MODE_FULL}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _print_resolved(subcommand: str, config: dict) -> None:
    print(json.dumps({"subcommand": subcommand, "config": config}, default=str))


def _load_synthetic_config(path: str | None, seed_override: int | None) -> SyntheticConfig:
    fields = {}
    if path is not None:
        try:
            with open(path) as fh:
                fields = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"bad config JSON: {exc}") from exc
    known = {f.name for f in dataclasses.fields(SyntheticConfig)}
    unknown = set(fields) - known
    if unknown:
        raise InvalidConfig(f"unknown config fields: {sorted(unknown)}")
    cfg = SyntheticConfig(**fields)
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=seed_override)
    cfg.validate()
    return cfg


def _corpus_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    suffix = Path(path).suffix.lower()
    return {".csv": "csv", ".jsonl": "jsonl"}.get(suffix, "binary")


# --------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    cfg = _load_synthetic_config(args.config, args.seed)
    _print_resolved("gen", dataclasses.asdict(cfg))
    corpus, tokens = generate_synthetic(cfg)
    save_corpus(corpus, args.out, format=args.format)
    if args.tokens_out:
        save_tokens(tokens, args.tokens_out)
    print(f"wrote {args.out}" + (f" and {args.tokens_out}" if args.tokens_out else ""))
    return EXIT_OK


def _cmd_eval(args) -> int:
    _print_resolved("eval", {"corpus": args.corpus, "direction": args.direction,
                             "out": args.out})
    corpus = load_corpus(args.corpus, format=_corpus_format(args.corpus, args.format))
    directions = {"tr": [DIRECTION_TR], "ir": [DIRECTION_IR],
                  "both": [DIRECTION_TR, DIRECTION_IR]}[args.direction]
    reports = {d.lower(): metrics_report(compute_ranks(corpus, d)) for d in directions}
    if len(reports) == 1:
        payload = next(iter(reports.values())).to_json_dict()
    else:
        payload = {name: rep.to_json_dict() for name, rep in reports.items()}
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def _train_config_from_args(args, mode: str) -> TrainConfig:
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        tau=args.tau,
        loss_mode=mode,
        seed=args.seed,
        eval_every=args.eval_every,
        mining_weighting=args.mining_weighting,
    )
    cfg.validate()
    return cfg


def _cmd_train(args) -> int:
    mode = _MODE_FLAGS[args.mode]
    cfg = _train_config_from_args(args, mode)
    _print_resolved("train", dataclasses.asdict(cfg) | {"corpus": args.corpus,
                                                        "tokens": args.tokens})
    corpus = load_corpus(args.corpus, format=_corpus_format(args.corpus, args.format))
    tokens = load_tokens(args.tokens) if args.tokens else None
    if mode == MODE_FULL and tokens is None:
        raise InvalidConfig("--mode full requires --tokens")
    model, trace = train(corpus, tokens, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.write_trace_csv(out / "trace.csv")
    trace.write_checkpoints_csv(out / "checkpoints.csv")
    finals = final_metrics(model, corpus)
    with open(out / "metrics.json", "w") as fh:
        json.dump({k: v.to_json_dict() for k, v in finals.items()}, fh, indent=2)
        fh.write("\n")
    export_embeddings(model, corpus, out / "embeddings.ccrk")
    if not args.no_plot:
        plots.render_trace(trace, out / "trace.png")
        plots.render_checkpoints(trace, out / "checkpoints.png")
    print(f"wrote artifacts to {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    corpus_cfg = _load_synthetic_config(args.config, None)
    base = _train_config_from_args(args, MODE_ONE_TO_ONE)
    cfg_one = base
    cfg_k = dataclasses.replace(base, loss_mode=MODE_ONE_TO_K)
    _print_resolved("compare", {
        "corpus": dataclasses.asdict(corpus_cfg),
        "train": dataclasses.asdict(cfg_k),
        "seeds": args.seeds,
    })
    report = compare_modes(cfg_one, cfg_k, corpus_cfg, args.seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_checkpoints_csv(out / "comparison.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")
    if not args.no_plot:
        plots.render_comparison(report, out / "comparison.png")
    summary = report.summary()
    for mode in (MODE_ONE_TO_K, MODE_ONE_TO_ONE):
        s = summary[mode]
        print(f"{mode}: mean final MRV {s['mean_final_mrv']:.4f}, "
              f"mean final R@1 {s['mean_final_r1']:.4f}, "
              f"mean recall gap {s['mean_final_recall_gap']:.4f}")
    return EXIT_OK


def _cmd_geometry(args) -> int:
    which = {1: LEMMA_PRACTICAL_VS_CORRECT, 2: LEMMA_SINGLE_TARGET_BIAS}[args.lemma]
    _print_resolved("geometry", {"lemma": args.lemma, "dim": args.dim,
                                 "samples": args.samples, "seed": args.seed,
                                 "out": args.out})
    cfg = TripleConfig(dim=args.dim)
    samples = lemma_sweep(cfg, which, args.samples, Rng(args.seed))
    points = summarize_sweep(samples, which, DEFAULT_ANGLE_GRID, args.seed)
    write_sweep_csv(points, args.out)
    if not args.no_plot:
        label = "theta" if which == LEMMA_PRACTICAL_VS_CORRECT else "omega"
        plots.render_sweep(points, Path(args.out).with_suffix(".png"), label)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    _print_resolved("gradcheck", {"loss": args.loss, "trials": args.trials,
                                  "seed": args.seed})
    results = run_gradcheck(args.loss, args.trials, args.seed)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"{name}: max relative gradient error {err:.3e}")
    print(f"overall max relative error {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    if worst >= GRAD_TOLERANCE:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_rank(args) -> int:
    _print_resolved("rank", {"corpus": args.corpus, "query_id": args.query_id,
                             "top": args.top, "direction": args.direction,
                             "rerank_top_n": args.rerank_top_n})
    corpus = load_corpus(args.corpus, format=_corpus_format(args.corpus, args.format))
    try:
        j = corpus.instance_ids.index(args.query_id)
    except ValueError:
        raise DataError(f"unknown instance id {args.query_id!r}")
    rerank = None
    if args.rerank_top_n is not None:
        if args.scorer != "oracle":
            raise InvalidConfig("only the oracle scorer is available from the CLI")
        rerank = RerankConfig(top_n=args.rerank_top_n, scorer=oracle_scorer())
    direction = DIRECTION_TR if args.direction == "tr" else DIRECTION_IR
    result = {"query_id": args.query_id, "direction": direction,
              "rerank_top_n": args.rerank_top_n, "per_language": {}}
    for kk, lang in enumerate(corpus.language_codes):
        order, sims = query_order(corpus, direction, j, kk, rerank=rerank)
        top = []
        for pos in range(min(args.top, order.size)):
            cand = int(order[pos])
            top.append({"instance_id": corpus.instance_ids[cand],
                        "similarity": float(sims[cand]),
                        "is_match": cand == j})
        true_rank = int(np.nonzero(order == j)[0][0]) + 1
        result["per_language"][lang] = {"true_rank": true_rank, "top": top}
    print(json.dumps(result, indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccrk", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen", help="generate a seeded synthetic corpus")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="output corpus path")
    p.add_argument("--tokens-out", help="optional token corpus JSON path")
    p.add_argument("--format", choices=["binary", "csv", "jsonl"], default="binary")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("eval", help="retrieval metrics for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "csv", "jsonl"])
    p.add_argument("--direction", choices=["tr", "ir", "both"], default="both")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(func=_cmd_eval)

    def add_train_flags(p):
        p.add_argument("--tau", type=float, default=0.07)
        p.add_argument("--epochs", type=int, default=40)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--optimizer", choices=["sgd", "adam"], default="adam")
        p.add_argument("--eval-every", type=int, default=5)
        p.add_argument("--mining-weighting", choices=["linear_shift", "softmax"],
                       default="linear_shift")
        p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("train", help="train the toy encoder maps")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "csv", "jsonl"])
    p.add_argument("--tokens", help="token corpus JSON (required for --mode full)")
    p.add_argument("--mode", choices=sorted(_MODE_FLAGS), default="1tok")
    p.add_argument("--out-dir", required=True)
    add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("compare", help="train both contrastive modes across seeds")
    p.add_argument("--config", help="synthetic corpus JSON config")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    add_train_flags(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("geometry", help="Monte-Carlo angle sweeps")
    p.add_argument("--lemma", type=int, choices=[1, 2], required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=_cmd_geometry)

    p = sub.add_parser("gradcheck", help="verify analytic gradients")
    p.add_argument("--loss", choices=["kcl", "mitm", "cmlm", "all"], default="all")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("rank", help="ranked candidates for one query")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["binary", "csv", "jsonl"])
    p.add_argument("--query-id", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--direction", choices=["tr", "ir"], default="tr")
    p.add_argument("--rerank-top-n", type=int)
    p.add_argument("--scorer", choices=["oracle"], default="oracle")
    p.set_defaults(func=_cmd_rank)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
