"""``cod`` command line: build-dict, translate, score, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .backend import Backend, BackendConfigError, BackendError, Mode, ReplayMiss
from .harness import (
    ConfigError,
    EncodingError,
    FailureBudgetExceeded,
    LineCountMismatch,
    RunAborted,
    check_failures,
    compare_runs,
    dumps_report,
    emit_report,
    load_config,
    load_scores,
    read_lines,
    render_comparison,
    run,
)
from .lang import parse_lang_code
from .lexicon import build_lexicon, dumps_lexicon, load_stopwords, truncate_stopwords
from .metrics import KeyMismatch, LengthMismatch, bleu, canonical_metric, corpus_chrf_pp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REPLAY_MISS = 3
EXIT_BACKEND = 4

log = logging.getLogger("cod")


def _codes(text: str) -> list[str]:
    codes = [c.strip() for c in text.split(",") if c.strip()]
    for c in codes:
        try:
            parse_lang_code(c)
        except (KeyError, ValueError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return codes


def _thresholds(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_build_dict(args: argparse.Namespace) -> int:
    corpus = read_lines(args.corpus)
    backend = Backend.from_env(args.mode, args.cache_dir, model_id=args.model, max_inflight=args.max_inflight)
    lex = build_lexicon(
        corpus,
        args.langs,
        mt=backend,
        llm=backend,
        source_lang=args.source_lang,
        verify_lang=args.verify_lang,
        max_workers=args.max_inflight,
    )
    if args.drop_stopwords:
        lex = truncate_stopwords(lex, load_stopwords(args.stopwords))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(dumps_lexicon(lex), encoding="utf-8", newline="\n")
    p = lex.provenance
    print(f"{len(lex)} entries ({p['verified']}/{p['attempted']} verified) -> {args.out}")
    return EXIT_OK


def cmd_translate(args: argparse.Namespace) -> int:
    cfg = load_config(
        args.config,
        variant=args.variant,
        k_shots=args.k_shots,
        aux=tuple(args.chain) if args.chain else None,
        chain_length=args.chain_length,
        mode=args.mode,
        cache_dir=args.cache_dir,
        output=args.out,
        directions=args.directions.split(",") if args.directions else None,
    )
    if cfg.output is None:
        raise ConfigError("no output path: set [paths] output or pass --out")
    report = run(cfg)
    emit_report(report, cfg.output, "jsonl")
    if args.summary:
        emit_report(report, args.summary, "markdown")
    sys.stdout.write(dumps_report(report, "markdown"))
    check_failures(report, cfg.max_failures)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    hyps, refs = read_lines(args.hyp), read_lines(args.ref)
    metric = canonical_metric(args.metric)
    score = corpus_chrf_pp(hyps, refs) if metric == "chrfpp" else bleu(hyps, refs)
    print(f"{args.metric}\t{score.value:.4f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    metric = canonical_metric(args.metric)
    cmp = compare_runs(
        load_scores(args.baseline, metric), load_scores(args.system, metric), args.thresholds, metric
    )
    text = render_comparison(cmp, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cod", description="Chain-of-dictionary prompting for MT")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def backend_flags(p: argparse.ArgumentParser, default_mode: str | None) -> None:
        p.add_argument("--mode", choices=[m.value for m in Mode], default=default_mode)
        p.add_argument("--cache-dir", type=Path)

    p = sub.add_parser("build-dict", help="extract keywords and build a verified multilingual lexicon")
    p.add_argument("--corpus", required=True, type=Path, help="one source sentence per line")
    p.add_argument("--langs", required=True, type=_codes, help="comma-separated chain languages")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--source-lang", default="eng_Latn")
    p.add_argument("--verify-lang", default=None, help="language used for the polysemy check")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--max-inflight", type=int, default=4)
    p.add_argument("--drop-stopwords", action="store_true")
    p.add_argument("--stopwords", type=Path, help="stopword list (default: bundled English list)")
    backend_flags(p, "replay")
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("translate", help="run a prompt variant over the configured directions")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--variant", help="baseline|monolingual|bilingual|decomposed|cod|fewshot[N]")
    p.add_argument("--k-shots", type=int)
    p.add_argument("--chain", type=_codes, help="auxiliary languages, comma-separated")
    p.add_argument("--chain-length", type=int)
    p.add_argument("--directions", help="comma-separated SRC-TGT pairs")
    p.add_argument("--out", type=Path, help="jsonl report path")
    p.add_argument("--summary", type=Path, help="also write a markdown summary")
    backend_flags(p, None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="corpus chrF++ or BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True, type=Path)
    p.add_argument("--ref", required=True, type=Path)
    p.add_argument("--metric", default="chrf++", choices=["chrf++", "bleu"])
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="compare two runs or score files direction by direction")
    p.add_argument("--baseline", required=True, type=Path)
    p.add_argument("--system", required=True, type=Path)
    p.add_argument("--thresholds", type=_thresholds, default=[5.0, 10.0, 20.0])
    p.add_argument("--metric", default="chrf++", choices=["chrf++", "bleu"])
    p.add_argument("--format", default="markdown", choices=["markdown", "tsv", "jsonl"])
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ReplayMiss, RunAborted) as exc:
        print(f"replay miss: {exc}", file=sys.stderr)
        return EXIT_REPLAY_MISS
    except FailureBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (
        ConfigError,
        BackendConfigError,
        KeyMismatch,
        LengthMismatch,
        LineCountMismatch,
        EncodingError,
        FileNotFoundError,
        KeyError,
        ValueError,
    ) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
