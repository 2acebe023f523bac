"""Command-line surface: mine, compile-bench, score, eval, train-toy."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import load_corpus
from .harness import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_SAMPLE_ERRORS,
    cmd_eval,
    cmd_mine,
    cmd_score,
    cmd_train_toy,
    write_manifest,
)
from .llm import CompletionError, make_client
from .mining import MinedChain, compile_benchmark, filter_by_factuality, balance
from .observations import LexicalMatcher, LlmMatcher, SynonymTable
from .policy import GrpoConfig
from .training import PRESETS, SftConfig, toy_grpo_config, toy_sft_config


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _make_matcher(args, config: dict):
    backend = config.get("matcher", "lexical")
    if backend == "lexical":
        table = config.get("synonym_table")
        synonyms = SynonymTable.from_file(table) if table else SynonymTable.bundled()
        return LexicalMatcher(synonyms)
    if backend == "llm":
        return LlmMatcher(_make_llm_client(args, config))
    raise ValueError(f"unknown matcher backend {backend!r}")


def _make_llm_client(args, config: dict):
    return make_client(
        args.backend,
        cache_dir=config.get("cache_dir"),
        mock_fixture=config.get("mock_fixture"),
        base_url=config.get("base_url", ""),
        workers=args.workers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radreason",
        description=(
            "Mine reasoning chains from clinical reports, score reasoning, "
            "evaluate with bootstrap CIs, and run toy training presets."
        ),
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--backend",
        choices=["remote", "mock", "cache-only"],
        default="mock",
        help="completion backend for mining / llm matching",
    )
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine reasoning chains and compile a benchmark")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--threshold", type=float, default=1.0)

    p = sub.add_parser("compile-bench", help="compile a benchmark from corpus + chains")
    p.add_argument("corpus")
    p.add_argument("chains", help="JSONL of mined chains")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=1.0)

    p = sub.add_parser("score", help="score model outputs against the corpus")
    p.add_argument("corpus")
    p.add_argument("outputs", help="JSONL of {id, output} records")
    p.add_argument("--out", required=True, help="score records file")

    p = sub.add_parser("eval", help="aggregate score records into a CI table")
    p.add_argument("records", help="score records file from `score`")
    p.add_argument("--out", help="machine-readable report file")
    p.add_argument("--resamples", type=int, default=1000)

    p = sub.add_parser("train-toy", help="run a toy training preset")
    p.add_argument("corpus")
    p.add_argument("--preset", default=None, help="preset name; omit to list presets")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_FATAL

    try:
        if args.command == "mine":
            corpus = load_corpus(args.corpus)
            client = _make_llm_client(args, config)
            matcher = _make_matcher(args, config)
            bundle, n_rejected = cmd_mine(
                corpus,
                client,
                matcher,
                out_dir=args.out,
                seed=args.seed,
                threshold=args.threshold,
                workers=args.workers,
            )
            write_manifest(Path(args.out), config, args.seed, matcher)
            print(json.dumps(bundle.manifest["counts"], sort_keys=True))
            return EXIT_SAMPLE_ERRORS if n_rejected else EXIT_OK

        if args.command == "compile-bench":
            corpus = load_corpus(args.corpus)
            chains = [
                MinedChain.from_record(json.loads(line))
                for line in Path(args.chains).read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
            kept, rejected = filter_by_factuality(chains, threshold=args.threshold)
            balanced = balance(corpus, seed=args.seed)
            kept = [c for c in kept if any(s.id == c.sample_id for s in balanced.samples)]
            bundle = compile_benchmark(
                balanced, kept, args.out, seed=args.seed, threshold=args.threshold
            )
            print(json.dumps(bundle.manifest["counts"], sort_keys=True))
            return EXIT_SAMPLE_ERRORS if rejected else EXIT_OK

        if args.command == "score":
            corpus = load_corpus(args.corpus)
            matcher = _make_matcher(args, config)
            n_scored, errors = cmd_score(
                args.outputs, corpus, matcher, out_path=args.out, workers=args.workers
            )
            print(f"scored {n_scored} outputs, {len(errors)} errors")
            return EXIT_SAMPLE_ERRORS if errors else EXIT_OK

        if args.command == "eval":
            report = cmd_eval(args.records, resamples=args.resamples, seed=args.seed)
            sys.stdout.write(report.render_table())
            if args.out:
                Path(args.out).write_text(
                    json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8",
                )
            return EXIT_OK

        if args.command == "train-toy":
            if args.preset is None:
                print("\n".join(sorted(PRESETS)))
                return EXIT_OK
            corpus = load_corpus(args.corpus)
            grpo_kwargs = {**vars(toy_grpo_config()), **config.get("grpo", {})}
            grpo_kwargs["seed"] = args.seed
            if args.steps is not None:
                grpo_kwargs["steps"] = args.steps
            if args.lr is not None:
                grpo_kwargs["learning_rate"] = args.lr
            sft_kwargs = {**vars(toy_sft_config()), **config.get("sft", {})}
            sft_kwargs["seed"] = args.seed
            checkpoint = cmd_train_toy(
                corpus,
                args.preset,
                out_dir=args.out,
                sft_cfg=SftConfig(**sft_kwargs),
                grpo_cfg=GrpoConfig(**grpo_kwargs),
                seed=args.seed,
            )
            print(f"checkpoint written to {checkpoint}")
            return EXIT_OK

        parser.error(f"unknown command {args.command!r}")
    except (OSError, CompletionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FATAL
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
