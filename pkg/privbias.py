#!/usr/bin/env python3
"""
privbias.py
───────────
Command-line entry point.

  privatize   rewrite a corpus with the metric-DP word mechanism
  calibrate   N_w / S_w plausible-deniability statistics for a set of ε
  bench       stereotype scores and pseudo-perplexity for one scorer
  report      merge bench runs into per-category reports

Examples:
  python privbias.py privatize --embeddings glove.txt --epsilon 10 --input c.jsonl --output p.jsonl
  python privbias.py calibrate --embeddings glove.txt --epsilons 1 5 10 50 --out calib.json
  python privbias.py bench --synthetic 25 --scorer mock:uniform:1000 --epsilon inf --out inf.json
  python privbias.py report --runs inf.run.json 10.run.json --baseline inf --out table.md --format md
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import settings
from bias_bench import BenchmarkError, run_bench
from bias_datasets import DatasetFormatError, load_crows_pairs, load_stereoset, load_wikitext, synthetic_suite
from bias_report import REPORT_FORMATS, load_run, load_runs, write_report, write_run
from calibration import (
    DEFAULT_BINS,
    DESK_QUERIES,
    DESK_SAMPLE_SIZE,
    FULL_QUERIES,
    FULL_SAMPLE_SIZE,
    UndefinedSkewnessError,
    check_skew_criterion,
    estimate_deniability,
    write_calibration,
)
from corpus_privatizer import INPUT_FORMATS, OUTPUT_ORDERS, CorpusInputError, PrivatizationConfig, privatize_file
from dp_mechanism import OOV_POLICIES, InvalidBudgetError, OutOfVocabularyError, PrivacyBudget
from embedding_store import EmbeddingFormatError, build_index, load_embeddings
from lm_scoring_client import InvalidRequestError, ScoringError, open_scorer

logger = logging.getLogger("privbias")

LIBRARY_ERRORS = (
    EmbeddingFormatError, InvalidBudgetError, OutOfVocabularyError, UndefinedSkewnessError,
    CorpusInputError, InvalidRequestError, ScoringError, BenchmarkError, DatasetFormatError,
    FileNotFoundError, ValueError,
)

CALIBRATION_PRESETS = {
    "desk": (DESK_SAMPLE_SIZE, DESK_QUERIES),
    "full": (FULL_SAMPLE_SIZE, FULL_QUERIES),
}


###############################################################################
# SUBCOMMANDS
###############################################################################

def cmd_privatize(args) -> None:
    store = load_embeddings(args.embeddings, expected_dim=args.dim)
    index = build_index(store, exact=args.exact_nn)
    cfg = PrivatizationConfig(
        epsilon=PrivacyBudget.parse(args.epsilon),
        seed=args.seed,
        oov_policy=args.oov,
        lowercase=not args.keep_case,
        marker=args.marker,
    )
    logger.info("[PRIVATIZE] eps=%s seed=%d oov=%s parallelism=%d", cfg.epsilon.label, cfg.seed,
                cfg.oov_policy, args.parallelism)
    privatize_file(store, args.input, args.output, cfg, fmt=args.format,
                   parallelism=args.parallelism, index=index, order=args.order)


def cmd_calibrate(args) -> None:
    store = load_embeddings(args.embeddings, expected_dim=args.dim)
    index = build_index(store, exact=args.exact_nn)
    sample_size, queries = CALIBRATION_PRESETS[args.preset]
    sample_size = args.sample_size or sample_size
    queries = args.queries or queries

    results = []
    for eps in args.epsilons:
        budget = PrivacyBudget.parse(eps)
        dstats = estimate_deniability(store, budget, sample_size, queries, args.seed,
                                      index=index, parallelism=args.parallelism)
        verdict = check_skew_criterion(dstats)
        logger.info("[CALIBRATE] eps=%s mean N_w=%.2f mean S_w=%.2f criterion=%s",
                    budget.label, dstats.n_w.mean(), dstats.s_w.mean(), verdict.status)
        for note in verdict.diagnostics:
            logger.info("[CALIBRATE]   %s", note)
        results.append(dstats)

    write_calibration(results, Path(args.out), bins=args.bins,
                      csv_dir=args.csv_dir, plot_dir=args.plot_dir)


def cmd_bench(args) -> None:
    stereoset, crows, wikitext = [], [], None
    if args.synthetic:
        stereoset, crows = synthetic_suite(args.synthetic)
    if args.stereoset:
        stereoset += load_stereoset(args.stereoset)
    if args.crows:
        crows += load_crows_pairs(args.crows)
    if args.wikitext:
        wikitext = load_wikitext(args.wikitext, fraction=args.wikitext_fraction, seed=args.seed)

    label = PrivacyBudget.parse(args.epsilon).label
    with open_scorer(args.scorer, max_in_flight=args.max_in_flight) as scorer:
        run = run_bench(scorer, label, stereoset=stereoset, crows=crows, wikitext=wikitext,
                        scorer_name=args.scorer, seed=args.seed)

    out = Path(args.out)
    run_path = out.with_name(out.stem + ".run.json")
    write_run(run, run_path)

    runs = [run]
    baseline = run.epsilon
    if args.baseline_run:
        base = load_run(args.baseline_run)
        if base.epsilon == run.epsilon:
            raise BenchmarkError(f"baseline run and this run share the label eps={run.epsilon}")
        runs = [base, run]
        baseline = base.epsilon
    write_report(runs, baseline, out, fmt=args.report)


def cmd_report(args) -> None:
    runs = load_runs(args.runs)
    write_report(runs, args.baseline, args.out, fmt=args.format)


###############################################################################
# PARSER
###############################################################################

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privbias", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from PRIVBIAS_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("privatize", help="privatize a corpus")
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--dim", type=int, default=None, help="expected embedding dimension")
    p.add_argument("--epsilon", required=True, help="privacy budget, a positive number or 'inf'")
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--format", choices=INPUT_FORMATS, default="jsonl")
    p.add_argument("--oov", choices=OOV_POLICIES, default="passthrough")
    p.add_argument("--marker", default=settings.OOV_MARKER, help="replacement for OOV tokens with --oov marker")
    p.add_argument("--keep-case", action="store_true", help="do not lowercase tokens")
    p.add_argument("--parallelism", type=int, default=settings.PARALLELISM)
    p.add_argument("--order", choices=OUTPUT_ORDERS, default="input",
                   help="write documents in input order or sorted by doc_id")
    p.add_argument("--exact-nn", action="store_true", help="brute-force float64 nearest neighbours")
    p.set_defaults(func=cmd_privatize)

    p = sub.add_parser("calibrate", help="plausible-deniability statistics per epsilon")
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--epsilons", nargs="+", required=True)
    p.add_argument("--preset", choices=sorted(CALIBRATION_PRESETS), default="desk")
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--queries", type=int, default=None)
    p.add_argument("--seed", type=int, default=settings.SEED)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--csv-dir", type=Path, default=None)
    p.add_argument("--plot-dir", type=Path, default=None)
    p.add_argument("--parallelism", type=int, default=settings.PARALLELISM)
    p.add_argument("--exact-nn", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="bias benchmarks and pseudo-perplexity for one scorer")
    p.add_argument("--stereoset", type=Path, default=None, help="StereoSet dev JSON")
    p.add_argument("--crows", type=Path, default=None, help="CrowS-Pairs CSV")
    p.add_argument("--wikitext", type=Path, default=None, help="raw WikiText file")
    p.add_argument("--wikitext-fraction", type=float, default=0.1)
    p.add_argument("--synthetic", type=int, default=0, metavar="N",
                   help="add the synthetic suite with N items per category and task")
    p.add_argument("--scorer", default=settings.SCORER, help="http://..., cmd:... or mock:uniform:N")
    p.add_argument("--max-in-flight", type=int, default=settings.MAX_IN_FLIGHT)
    p.add_argument("--epsilon", default="inf", help="label of the model under test")
    p.add_argument("--seed", type=int, default=settings.SEED, help="privatization seed of the model (metadata)")
    p.add_argument("--baseline-run", type=Path, default=None, help="run file of the baseline model")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--report", choices=("json", "md"), default="json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="merge bench runs into one report")
    p.add_argument("--runs", nargs="+", required=True, type=Path)
    p.add_argument("--baseline", default="inf", help="epsilon label of the baseline run")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--format", choices=REPORT_FORMATS, default="json")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.setup_logging(args.log_level)
    try:
        args.func(args)
    except LIBRARY_ERRORS as e:
        tag = {"privatize": "PRIVATIZE", "calibrate": "CALIBRATE", "bench": "BENCH", "report": "REPORT"}[args.command]
        logger.error("[%s] %s", tag, e)
        raise SystemExit(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
