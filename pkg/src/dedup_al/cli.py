"""Command-line interface: ingest, block, train, run, eval, serve."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .active import GroundTruthOracle, run_loop
from .blocking import block_candidates, export_pairs_csv
from .config import RunConfig, load_config, standard_synthetic_config
from .corpus import Corpus, export_csv, load_csv
from .encoder import EncoderConfig, init_params, save_checkpoint
from .evaluation import cluster_split, compare_strategies, pair_truth, split_pairs
from .preprocess import PairPipeline
from .training import LabeledExample, train_round, write_training_log

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (defaults to the standard synthetic setup)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--strategy", choices=("uncertainty", "entropy", "random"),
                        default=None, help="override selection strategy")
    parser.add_argument("--rounds", type=int, default=None, help="override round count")
    parser.add_argument("--budget", type=int, default=None, help="override per-round budget")


def _load_config(args) -> RunConfig:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = standard_synthetic_config()
    overrides = {}
    for name in ("seed", "strategy", "rounds", "budget"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return config.with_overrides(**overrides) if overrides else config


def _build_corpus(config: RunConfig) -> Corpus:
    if config.corpus is None:
        raise SystemExit("config has no corpus source; set 'corpus.path' or 'corpus.synthetic'")
    return config.corpus.build()


def _prepare(config: RunConfig, corpus: Corpus):
    """Shared setup for train/eval: candidates, split, pipeline, encoder params."""
    pairs = block_candidates(corpus, bucket_cap=config.bucket_cap)
    pair_ids = [p.pair_id for p in pairs]
    split = cluster_split(corpus, config.split_ratios, seed=config.seed)
    pair_split = split_pairs(pairs, corpus, split)
    pipeline = PairPipeline(corpus, config.build_taggers(), max_len=config.max_len)
    pipeline.build_vocab(pair_ids, config.min_token_count)
    pipeline.refit_tfidf(pair_ids)
    encoder_config = EncoderConfig(
        vocab_size=len(pipeline.vocab), d_model=config.encoder.d_model,
        n_heads=config.encoder.n_heads, n_layers=config.encoder.n_layers,
        d_ff=config.encoder.d_ff, max_len=config.max_len,
        dropout_rate=config.encoder.dropout_rate, seed=config.seed)
    return pairs, pair_split, pipeline, encoder_config


def cmd_ingest(args) -> int:
    if args.input is not None:
        corpus = load_csv(args.input, id_column=args.id_column,
                          truth_column=args.truth_column)
    else:
        corpus = _build_corpus(_load_config(args))
    print(f"ingested {len(corpus)} records, "
          f"{len(corpus.schema)} attributes, truth={corpus.has_truth}")
    if args.output is not None:
        export_csv(corpus, args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_block(args) -> int:
    config = _load_config(args)
    corpus = _build_corpus(config)
    pairs = block_candidates(corpus, bucket_cap=config.bucket_cap)
    n_pos = sum(pair_truth(corpus, p.pair_id) for p in pairs) if corpus.has_truth else None
    print(f"{len(pairs)} candidate pairs from {len(corpus)} records"
          + (f", {n_pos} true duplicates" if n_pos is not None else ""))
    if args.output is not None:
        export_pairs_csv(pairs, args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_train(args) -> int:
    """Supervised fit on every labeled training pair; saves a checkpoint."""
    config = _load_config(args)
    corpus = _build_corpus(config)
    if not corpus.has_truth:
        raise SystemExit("train requires ground truth (cluster ids)")
    _, pair_split, pipeline, encoder_config = _prepare(config, corpus)
    examples = [
        LabeledExample(p.pair_id, pipeline.encode(p.pair_id),
                       int(pair_truth(corpus, p.pair_id)))
        for p in pair_split.train
    ]
    params = init_params(encoder_config)
    params, stats = train_round(params, examples, config.training)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out_dir / "model.npz")
    write_training_log(stats, out_dir / "training_log.jsonl")
    print(f"trained on {len(examples)} pairs for {len(stats)} epochs, "
          f"final loss {stats[-1].loss.total:.4f}, accuracy {stats[-1].accuracy:.4f}")
    print(f"wrote {out_dir / 'model.npz'}")
    return 0


def cmd_run(args) -> int:
    from .report import write_report_bundle

    config = _load_config(args)
    corpus = _build_corpus(config)
    run_dir = Path(args.run_dir) if args.run_dir is not None else None
    reports = run_loop(corpus, config, oracle=GroundTruthOracle(corpus), run_dir=run_dir)
    for r in reports:
        f1 = "n/a" if r.f1 is None else f"{r.f1:.4f}"
        print(f"round {r.round_index}: strategy={r.strategy} f1={f1} "
              f"labeled={r.labeled_count}")
    out_dir = Path(args.out_dir)
    written = write_report_bundle(reports, out_dir)
    for kind, path in written.items():
        print(f"wrote {kind}: {path}")
    return 0


def cmd_eval(args) -> int:
    from .report import write_comparison_bundle

    config = _load_config(args)
    corpus = _build_corpus(config)
    if not corpus.has_truth:
        raise SystemExit("eval requires ground truth (cluster ids)")
    strategies = args.strategies.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    table = compare_strategies(corpus, config, strategies, seeds)
    for row in table.to_rows():
        print(f"{row['strategy']:>12} round {row['round_index']}: "
              f"F1 {row['mean_f1']:.4f} +- {row['std_f1']:.4f} ({row['n_seeds']} seeds)")
    out_dir = Path(args.out_dir)
    written = write_comparison_bundle(table, out_dir)
    for kind, path in written.items():
        print(f"wrote {kind}: {path}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(host=args.host, port=args.port, data_dir=args.data_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dedup-al",
                                     description="Active-learning deduplication")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load or generate a corpus and report on it")
    _add_common(p)
    p.add_argument("--input", type=Path, default=None, help="CSV file to ingest")
    p.add_argument("--id-column", default="id")
    p.add_argument("--truth-column", default=None)
    p.add_argument("--output", type=Path, default=None, help="write normalized CSV here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("block", help="generate candidate pairs")
    _add_common(p)
    p.add_argument("--output", type=Path, default=None, help="write pairs CSV here")
    p.set_defaults(func=cmd_block)

    p = sub.add_parser("train", help="supervised fit on the full training split")
    _add_common(p)
    p.add_argument("--out-dir", type=Path, default=Path("artifacts/train"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the active-learning loop with the truth oracle")
    _add_common(p)
    p.add_argument("--run-dir", type=Path, default=None,
                   help="persist events and checkpoints here (resumable)")
    p.add_argument("--out-dir", type=Path, default=Path("artifacts/run"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compare selection strategies across seeds")
    _add_common(p)
    p.add_argument("--strategies", default="uncertainty,random",
                   help="comma-separated strategy list")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    p.add_argument("--out-dir", type=Path, default=Path("artifacts/eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the labeling-queue HTTP service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--data-dir", type=Path, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
