# cli.py
# Command-line entry point (run through the 'lattice-rescore' launcher).
#
# Every subcommand reads a lattice archive from a file or stdin ('-') and
# writes to stdout unless -o is given. Logs go to stderr so stdout stays
# byte-deterministic for fixed inputs and flags.
#
# Exit codes: 0 ok, 1 invalid input / configuration, 2 scorer failure.

import argparse
import logging
import os
import sys

import database
from config import (
    BENCH_EPSILONS, BENCH_NGRAM_ORDERS, DEFAULT_BEAM, DEFAULT_EPSILON,
    DEFAULT_ESTIMATION, DEFAULT_EXPANSION_METHOD, DEFAULT_LAMBDA, DEFAULT_NBEST,
    DEFAULT_NGRAM_ORDER, DEFAULT_POSTERIOR_SEMIRING, DEFAULT_PROFILE,
    DEFAULT_STRATEGY, DEFAULT_WORKERS, LOG_FORMAT, LOG_LEVEL, LOG_LEVEL_ENV,
)
from cover import constrained_path_cover, format_hypotheses
from errors import RescoreError, ScorerError
from expand import ExpansionConfig, expand_ngram, expand_posterior
from lattice import parse_archive, prune, serialize_archive
from pipeline import (
    GeneratorProfile, RescoreConfig, compute_metrics, generate_lattices,
    generate_references, read_references, rescore_archive, results_frame, run_bench,
)
from score import (
    FileScorer, InterpolationConfig, LatencyScorer, make_scorer, read_hypotheses,
    replace_scores, score_hypothesis_file, write_score_file,
)
from viterbi import arc_posteriors

logger = logging.getLogger("lattice_rescore")


def setup_logging(verbose=False):
    name = "DEBUG" if verbose else os.environ.get(LOG_LEVEL_ENV, LOG_LEVEL)
    level = getattr(logging, str(name).upper(), None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)


def _read_text(path):
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as f:
        return f.read()


def _write_text(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    logger.info("wrote %s", path)


def _read_archive(args):
    lattices = parse_archive(_read_text(args.input), strict=args.strict)
    logger.info("read %d lattice(s) from %s", len(lattices), args.input)
    return lattices


def _float_list(text):
    return tuple(float(x) for x in text.split(",") if x)


def _int_list(text):
    return tuple(int(x) for x in text.split(",") if x)


def _rescore_config(args):
    return RescoreConfig(
        strategy=args.strategy,
        epsilon=args.epsilon,
        beam=args.beam,
        estimation=args.estimation,
        lam=args.lam,
        lam1=args.lam1,
        nbest=args.nbest,
        posterior_semiring=args.semiring,
        expansion=args.method,
        ngram_order=args.order,
    )


def _save_and_export(args, df, save_fn):
    if not (args.save or args.excel):
        return
    database.init_database()
    run_timestamp, count = save_fn(df, archive=args.input, scorer=args.scorer)
    logger.info("saved %d row(s) as run %s", count, run_timestamp)
    if args.excel and not database.export_to_excel(run_timestamp, args.excel):
        logger.warning("nothing to export")


# ============================================
# SUBCOMMANDS
# ============================================

def cmd_prune(args):
    lattices = [prune(lat, args.beam) for lat in _read_archive(args)]
    _write_text(serialize_archive(lattices), args.output)
    return 0


def cmd_expand(args):
    lattices = _read_archive(args)
    if args.beam is not None:
        lattices = [prune(lat, args.beam) for lat in lattices]
    if args.method == "ngram":
        out = [expand_ngram(lat, args.order) for lat in lattices]
    else:
        cfg = ExpansionConfig(args.epsilon, args.semiring)
        out = [expand_posterior(lat, cfg) for lat in lattices]
    _write_text(serialize_archive(out), args.output)
    return 0


def cmd_to_list(args):
    covers = [constrained_path_cover(lat) for lat in _read_archive(args)]
    for cover in covers:
        logger.info("%s: %d cover paths (degree bound %d)", cover.utt_id, len(cover), cover.bound)
    _write_text(format_hypotheses(covers), args.output)
    return 0


def cmd_posteriors(args):
    lattices = _read_archive(args)
    posts = [arc_posteriors(lat, args.semiring) for lat in lattices]
    _write_text(serialize_archive(lattices, posteriors=posts), args.output)
    return 0


def cmd_rescore(args):
    cfg = _rescore_config(args)
    lattices = _read_archive(args)
    with make_scorer(args.scorer) as scorer:
        results = rescore_archive(lattices, scorer, cfg, workers=args.workers)
    calls = sum(r.scorer_calls for r in results)
    hyps = sum(r.hypotheses_scored for r in results)
    logger.info("rescored %d lattice(s): %d scorer call(s), %d hypotheses",
                len(results), calls, hyps)
    _write_text(serialize_archive([r.lattice for r in results]), args.output)

    if args.metrics_out:
        metrics = compute_metrics(_references(args, lattices), [r.lattice for r in results],
                                  scorer_calls=calls, hypotheses_scored=hyps)
        _write_text(_format_metrics(metrics), args.metrics_out)
    _save_and_export(args, results_frame(results, cfg), database.save_rescore_results)
    return 0


def _references(args, lattices):
    if getattr(args, "ref", None):
        return read_references(_read_text(args.ref))
    return generate_references(lattices)


def _format_metrics(m):
    lines = [
        f"utterances {m.num_utterances}",
        f"wer {m.wer:.6f}",
        f"word_errors {m.word_errors}",
        f"ref_words {m.ref_words}",
        f"lattice_depth {m.lattice_depth:.6f}",
        f"best_path_loglik {m.best_path_loglik:.6f}",
        f"scorer_calls {m.scorer_calls}",
        f"hypotheses_scored {m.hypotheses_scored}",
    ]
    return "\n".join(lines) + "\n"


def cmd_metrics(args):
    lattices = _read_archive(args)
    if not args.ref and not args.generated_refs:
        raise RescoreError("metrics needs --ref FILE or --generated-refs")
    metrics = compute_metrics(_references(args, lattices), lattices)
    _write_text(_format_metrics(metrics), args.output)
    return 0


def cmd_generate(args):
    profile = GeneratorProfile(
        num_states=args.states,
        branching=args.branching,
        vocab_size=args.vocab,
        cost_noise=args.noise,
        max_span=args.span,
    )
    lattices = generate_lattices(args.seed, args.count, profile)
    _write_text(serialize_archive(lattices), args.output)
    if args.refs:
        refs = generate_references(lattices)
        _write_text("".join(f"{utt} {' '.join(words)}\n" for utt, words in refs.items()),
                    args.refs)
    return 0


def cmd_bench(args):
    cfg = _rescore_config(args)
    lattices = _read_archive(args)
    with make_scorer(args.scorer) as scorer:
        if args.latency:
            scorer = LatencyScorer(scorer, args.latency)
        df = run_bench(lattices, scorer, cfg, epsilons=args.epsilons,
                       orders=args.orders, timing=args.timing, workers=args.workers)
    _write_text(df.to_csv(index=False, float_format="%.6f"), args.output)
    _save_and_export(args, df, database.save_bench_results)
    return 0


def cmd_score(args):
    hypotheses = read_hypotheses(_read_text(args.input))
    with make_scorer(args.scorer) as scorer:
        results = score_hypothesis_file(scorer, hypotheses)
    _write_text(write_score_file(results), args.output)
    return 0


def cmd_merge(args):
    lattices = _read_archive(args)
    scorer = FileScorer(args.scores)
    cfg = InterpolationConfig(args.lam)
    out = [replace_scores(lat, scorer, args.estimation, cfg) for lat in lattices]
    _write_text(serialize_archive(out), args.output)
    return 0


# ============================================
# ARGUMENTS
# ============================================

def _add_io(p, input_help="lattice archive ('-' for stdin)"):
    p.add_argument("input", nargs="?", default="-", help=input_help)
    p.add_argument("-o", "--output", default="-", help="output file (default stdout)")
    p.add_argument("--strict", action="store_true",
                   help="reject lattices with unreachable states instead of trimming them")


def _add_expansion(p, beam_default=DEFAULT_BEAM):
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON,
                   help="posterior threshold for expansion, in (0, 1)")
    p.add_argument("--beam", type=float, default=beam_default, help="pruning beam (nats)")
    p.add_argument("--posterior-semiring", "--semiring", dest="semiring", choices=["sum", "max"],
                   default=DEFAULT_POSTERIOR_SEMIRING, help="semiring used for arc posteriors")
    p.add_argument("--method", choices=["posterior", "ngram"], default=DEFAULT_EXPANSION_METHOD,
                   help="expansion method")
    p.add_argument("--order", type=int, default=DEFAULT_NGRAM_ORDER,
                   help="n-gram order for --method ngram")


def _add_rescoring(p):
    _add_expansion(p)
    p.add_argument("--scorer", default="hash",
                   help="uniform[:V] | bigram:PATH | hash | exec:CMD | http:URL | file:PATH")
    p.add_argument("--strategy", default=DEFAULT_STRATEGY,
                   choices=["non-iterative", "iterative", "double", "replace", "nbest"])
    p.add_argument("--estimation", default=DEFAULT_ESTIMATION,
                   choices=["average", "weighted", "semi-viterbi"])
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA,
                   help="weight of the neural LM in [0, 1]")
    p.add_argument("--lambda1", dest="lam1", type=float, default=None,
                   help="lambda for the score-replacement stage of 'iterative'")
    p.add_argument("--nbest", type=int, default=DEFAULT_NBEST, help="N for --strategy nbest")
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS,
                   help="lattices rescored in parallel")
    p.add_argument("--save", action="store_true", help="store results in the SQLite database")
    p.add_argument("--excel", metavar="PATH", help="also export the stored run to Excel")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lattice-rescore",
        description="Neural LM lattice rescoring with posterior-based expansion.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("prune", help="beam-prune lattices", formatter_class=fmt)
    _add_io(p)
    p.add_argument("--beam", type=float, default=DEFAULT_BEAM, help="pruning beam (nats)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("expand", help="expand lattices (posterior or n-gram)",
                       formatter_class=fmt)
    _add_io(p)
    _add_expansion(p, beam_default=None)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("to-list", help="write the constrained path cover as a hypothesis list",
                       formatter_class=fmt)
    _add_io(p)
    p.set_defaults(func=cmd_to_list)

    p = sub.add_parser("posteriors", help="annotate arcs with posteriors", formatter_class=fmt)
    _add_io(p)
    p.add_argument("--posterior-semiring", "--semiring", dest="semiring", choices=["sum", "max"],
                   default=DEFAULT_POSTERIOR_SEMIRING)
    p.set_defaults(func=cmd_posteriors)

    p = sub.add_parser("rescore", help="rescore lattices with a neural LM scorer",
                       formatter_class=fmt)
    _add_io(p)
    _add_rescoring(p)
    p.add_argument("--metrics-out", metavar="PATH",
                   help="also write metrics (needs --ref, else generated references)")
    p.add_argument("--ref", metavar="PATH", help="reference transcripts for --metrics-out")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("metrics", help="WER, depth and best-path log-likelihood",
                       formatter_class=fmt)
    _add_io(p)
    p.add_argument("--ref", metavar="PATH", help="reference transcripts ('utt w1 w2 ...')")
    p.add_argument("--generated-refs", action="store_true",
                   help="use lowest-acoustic-cost paths as references")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("generate", help="write a synthetic lattice archive", formatter_class=fmt)
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--states", type=int, default=DEFAULT_PROFILE["num_states"])
    p.add_argument("--branching", type=int, default=DEFAULT_PROFILE["branching"])
    p.add_argument("--vocab", type=int, default=DEFAULT_PROFILE["vocab_size"])
    p.add_argument("--noise", type=float, default=DEFAULT_PROFILE["cost_noise"])
    p.add_argument("--span", type=int, default=DEFAULT_PROFILE["max_span"])
    p.add_argument("--refs", metavar="PATH", help="also write synthetic reference transcripts")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="sweep strategies and expansion settings",
                       formatter_class=fmt)
    _add_io(p)
    _add_rescoring(p)
    p.add_argument("--epsilons", type=_float_list,
                   default=",".join(str(e) for e in BENCH_EPSILONS))
    p.add_argument("--orders", type=_int_list,
                   default=",".join(str(n) for n in BENCH_NGRAM_ORDERS))
    p.add_argument("--timing", action="store_true", help="add a wall_time column")
    p.add_argument("--latency", type=float, default=0.0, metavar="SECONDS",
                   help="delay added to every scorer call (round-trip cost study)")
    p.set_defaults(func=cmd_bench, workers=1)

    p = sub.add_parser("score", help="score a hypothesis list into a score file",
                       formatter_class=fmt)
    _add_io(p, input_help="hypothesis list from to-list ('-' for stdin)")
    p.add_argument("--scorer", default="hash")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("merge", help="merge a score file back into lattices",
                       formatter_class=fmt)
    _add_io(p)
    p.add_argument("--scores", required=True, metavar="PATH", help="score file from 'score'")
    p.add_argument("--estimation", default=DEFAULT_ESTIMATION,
                   choices=["average", "weighted", "semi-viterbi"])
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.set_defaults(func=cmd_merge)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except ScorerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RescoreError, OSError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
