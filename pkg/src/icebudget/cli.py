"""Command-line entry point.

Subcommands mirror the pipeline stages; `run` executes everything end to
end with artifact caching, the others run or inspect individual stages.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import derive_seed, load_config
from .corpus import load_dataset, write_shard_manifest
from .embedder import HashEncoder, encode_dataset, save_embeddings
from .errors import IceBudgetError, ValidationError
from .inference import paraphrase as run_paraphrase


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icebudget",
        description="Budgeted distributed in-context-example retrieval")
    parser.add_argument("--config", help="path to a YAML experiment config")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("run", help="execute the full pipeline and write a report")
    sub.add_parser("partition", help="partition the corpus into client shards")

    encode = sub.add_parser("encode", help="hash-encode a JSONL dataset")
    encode.add_argument("--dataset", required=True)
    encode.add_argument("--output", required=True)
    encode.add_argument("--dim", type=int, default=64)
    encode.add_argument("--format", choices=["binary", "jsonl"],
                        default="binary")

    sub.add_parser("build-budget-dataset",
                   help="construct the allocator supervision set")
    sub.add_parser("train-allocator", help="train the per-client allocators")

    infer = sub.add_parser("infer", help="answer one query with the pipeline")
    infer.add_argument("--text", required=True)
    infer.add_argument("--policy", default=None,
                       help="override the first configured policy")
    infer.add_argument("--seed-index", type=int, default=0)

    report = sub.add_parser("report", help="budget-efficiency analysis")
    report.add_argument("--transcripts", help="transcript JSONL path")
    report.add_argument("--curve", default="0.5,1.0,1.25,2.0",
                        help="comma-separated budget multipliers")
    report.add_argument("--seed-index", type=int, default=0)

    para = sub.add_parser("paraphrase", help="paraphrase text via the backend")
    para.add_argument("--text", required=True)
    return parser


def _load_cfg(args):
    if not args.config:
        raise ValidationError("this command needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _cmd_run(args):
    from .harness import run_experiment
    cfg = _load_cfg(args)
    report = run_experiment(cfg)
    print(f"report written to {os.path.join(cfg.output_dir, 'report.json')}")
    for name, result in report["policies"].items():
        print(f"  {name}: accuracy {result['mean_accuracy']:.4f} "
              f"± {result['std_accuracy']:.4f}")
    return 0


def _cmd_partition(args):
    from .harness import _SeedContext
    cfg = _load_cfg(args)
    for i in range(cfg.num_seeds):
        ctx = _SeedContext(cfg, derive_seed(cfg.seed, f"run{i}"),
                           os.path.join(cfg.output_dir, f"seed{i}"))
        sizes = [len(s) for s in ctx.shards]
        print(f"seed {i}: shard sizes {sizes}")
    return 0


def _cmd_encode(args):
    dataset = load_dataset(args.dataset)
    seed = args.seed if args.seed is not None else 0
    store = encode_dataset(dataset, HashEncoder(args.dim, seed))
    save_embeddings(store, args.output, format=args.format)
    print(f"wrote {len(store)} embeddings (dim {store.dim}) to {args.output}")
    return 0


def _cmd_build_budget_dataset(args):
    from .harness import _SeedContext
    cfg = _load_cfg(args)
    for i in range(cfg.num_seeds):
        ctx = _SeedContext(cfg, derive_seed(cfg.seed, f"run{i}"),
                           os.path.join(cfg.output_dir, f"seed{i}"))
        bproxy = ctx.budget_dataset()
        print(f"seed {i}: {len(bproxy)} budget records "
              f"({bproxy.num_classes} classes)")
    return 0


def _cmd_train_allocator(args):
    from .harness import _SeedContext
    cfg = _load_cfg(args)
    for i in range(cfg.num_seeds):
        ctx = _SeedContext(cfg, derive_seed(cfg.seed, f"run{i}"),
                           os.path.join(cfg.output_dir, f"seed{i}"))
        models = ctx.allocators()
        losses = [m.loss_history[-1] if m.loss_history else float("nan")
                  for m in models]
        print(f"seed {i}: trained {len(models)} allocators, "
              f"final losses {[f'{l:.4f}' for l in losses]}")
    return 0


def _cmd_infer(args):
    from .federation import distributed_infer
    from .harness import _SeedContext, _policy_for
    cfg = _load_cfg(args)
    if args.policy:
        cfg.policies = [args.policy]
    run_seed = derive_seed(cfg.seed, f"run{args.seed_index}")
    ctx = _SeedContext(cfg, run_seed,
                       os.path.join(cfg.output_dir, f"seed{args.seed_index}"))
    if cfg.synthetic is not None and cfg.embeddings.source == "synthetic":
        raise ValidationError(
            "ad-hoc text inference needs a hash or file embedding source")
    encoder = HashEncoder(cfg.embeddings.dim, derive_seed(cfg.seed, "hash-encoder"))
    e_q = encoder(args.text)
    server = ctx.make_server(_policy_for(cfg.policies[0], run_seed))
    answer, transcript = distributed_infer(server, ctx.clients, args.text, e_q)
    print(json.dumps(transcript.to_dict(), sort_keys=True))
    print(f"answer: {ctx.train_ds.labels.verbalizers[answer]} ({answer})")
    return 0


def _cmd_report(args):
    from .federation import load_transcripts
    from .harness import efficiency_curve_from_run
    cfg = _load_cfg(args)
    multipliers = [float(x) for x in args.curve.split(",") if x]
    transcripts = load_transcripts(args.transcripts) if args.transcripts else None
    rows = efficiency_curve_from_run(cfg, args.seed_index, multipliers,
                                     transcripts=transcripts)
    print("multiplier\tmean_recall")
    for row in rows:
        print(f"{row['multiplier']:.2f}\t{row['mean_recall']:.4f}")
    return 0


def _cmd_paraphrase(args):
    from .inference import HttpBackend, MockVoteBackend
    cfg = _load_cfg(args)
    if cfg.backend.type == "http":
        backend = HttpBackend(endpoint=cfg.backend.endpoint,
                              model=cfg.backend.model,
                              auth_env=cfg.backend.auth_env,
                              timeout=cfg.backend.timeout,
                              max_retries=cfg.backend.max_retries,
                              max_tokens=64)
    else:
        backend = MockVoteBackend()
    print(run_paraphrase(args.text, backend))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "partition": _cmd_partition,
    "encode": _cmd_encode,
    "build-budget-dataset": _cmd_build_budget_dataset,
    "train-allocator": _cmd_train_allocator,
    "infer": _cmd_infer,
    "report": _cmd_report,
    "paraphrase": _cmd_paraphrase,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if not args.command:
        parser.print_usage()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IceBudgetError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
