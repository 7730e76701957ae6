"""
Long-running acceptance report over generated archives.

Runs the property checks that are too slow for the pytest suite
(thousand-lattice archives, sign tests, the bench sweep) and prints one
PASS/FAIL line per check plus the numbers behind it.

    python3 tools/acceptance.py [--scale 1.0] [--seed 7] [--csv bench.csv]

--scale shrinks or grows every archive (0.1 gives a quick smoke run).
"""
import sys, pathlib
sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import argparse
import contextlib
import io
import itertools
import time
from collections import Counter

import numpy as np

import cli
from config import SIGN_TEST_ALPHA
from cover import (
    constrained_path_cover, coverage_items, exact_min_cover_size, min_cover_size, path_items,
)
from expand import ExpansionConfig, expand_ngram, expand_posterior
from lattice import enumerate_paths, isomorphic, parse_archive, serialize_archive
from pipeline import (
    GeneratorProfile, RescoreConfig, Strategy, estimation_agreement, generate_lattices,
    generate_references, oracle_best, rescore, rescore_archive, run_bench,
)
from score import BigramScorer, CountingScorer, EstimationMethod, ExecScorer, HashScorer

FULL_EXPANSION = 1e-300
NO_PRUNING = 1e9
ECHO_SCORER = f"{sys.executable} {pathlib.Path(__file__).resolve().parent / 'echo_scorer.py'}"

failures = []


def report(name, ok, detail, started):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}: {detail} ({time.perf_counter() - started:.1f}s)")
    if not ok:
        failures.append(name)


def scaled(n, scale):
    return max(1, int(round(n * scale)))


def brute_force_min_cover(lat, max_paths=64):
    """Smallest number of complete paths covering every arc and final; None if too big."""
    paths = enumerate_paths(lat)
    if len(paths) > max_paths:
        return None
    items = set(coverage_items(lat))
    covers = [set(path_items(p)) for p in paths]
    for k in range(1, len(paths) + 1):
        for combo in itertools.combinations(covers, k):
            if set().union(*combo) >= items:
                return k
    return None


def mixed_archive(seed, count, max_states):
    rng = np.random.default_rng(seed)
    lattices = []
    for k in range(count):
        profile = GeneratorProfile(num_states=int(rng.integers(2, max_states + 1)),
                                   branching=int(rng.integers(1, 5)), vocab_size=30,
                                   cost_noise=1.0, max_span=int(rng.integers(1, 4)))
        lat = generate_lattices(seed * 100003 + k, 1, profile)[0]
        lattices.append(lat)
    return lattices


def path_multiset(lat):
    return sorted((p.words, round(p.cost, 6)) for p in enumerate_paths(lat, limit=100000))


def check_cover_bound(args):
    started = time.perf_counter()
    lattices = mixed_archive(args.seed, scaled(1000, args.scale), 30)
    ratios = []
    checked = brute_mismatch = over_bound = below_exact = eq1_exact = 0
    for lat in lattices:
        bound = min_cover_size(lat)
        exact = exact_min_cover_size(lat)
        cover = constrained_path_cover(lat)
        ratios.append(len(cover) / bound)
        eq1_exact += exact == bound
        over_bound += exact > bound
        below_exact += len(cover) < exact
        if lat.num_arcs <= 12:
            brute = brute_force_min_cover(lat)
            if brute is not None:
                checked += 1
                brute_mismatch += brute != exact
    ratio = float(np.mean(ratios))
    ok = brute_mismatch == 0 and over_bound == 0 and below_exact == 0 and ratio <= 1.3
    report("cover bound", ok,
           f"{len(lattices)} lattices, mean size/bound {ratio:.3f}, degree count exact on "
           f"{eq1_exact}/{len(lattices)}, {checked} brute-forced ({brute_mismatch} mismatches), "
           f"{over_bound} minima above the degree count, {below_exact} covers below the minimum",
           started)


def check_expansion_soundness(args):
    started = time.perf_counter()
    lattices = mixed_archive(args.seed + 1, scaled(1000, args.scale), 12)
    violations = 0
    for lat in lattices:
        before = path_multiset(lat)
        for eps in (0.9, 0.5, 0.1, 0.005):
            violations += path_multiset(expand_posterior(lat, ExpansionConfig(eps))) != before
        for order in (2, 3, 4):
            violations += path_multiset(expand_ngram(lat, order)) != before
    report("expansion soundness", violations == 0,
           f"{len(lattices)} lattices x 7 settings, {violations} violations", started)


def check_full_expansion(args):
    started = time.perf_counter()
    lattices = mixed_archive(args.seed + 2, scaled(500, args.scale), 10)
    scorer = HashScorer()
    not_tree = disagree = wrong = 0
    for lat in lattices:
        expanded = expand_posterior(lat, ExpansionConfig(FULL_EXPANSION))
        not_tree += any(d > 1 for d in expanded.in_degrees())
        picks = []
        for method in EstimationMethod:
            cfg = RescoreConfig(epsilon=FULL_EXPANSION, beam=NO_PRUNING, lam=1.0,
                                estimation=method)
            picks.append(rescore(lat, scorer, cfg).best)
        costs = [p.cost for p in picks]
        disagree += max(costs) - min(costs) > 1e-9 * max(1.0, abs(costs[0]))
        oracle, _ = oracle_best(lat, scorer, lam=1.0)
        wrong += picks[-1].words != oracle.words
    report("exactness at full expansion", not_tree == 0 and disagree == 0 and wrong == 0,
           f"{len(lattices)} lattices, {not_tree} non-tree expansions, "
           f"{disagree} estimation disagreements, {wrong} oracle misses", started)


def check_estimation_ordering(args):
    started = time.perf_counter()
    lattices = generate_lattices(args.seed + 3, scaled(500, args.scale))
    training = generate_references(generate_lattices(args.seed + 30, scaled(2000, args.scale)))
    bigram = BigramScorer(list(training.values()))
    table = estimation_agreement(lattices, bigram, RescoreConfig(epsilon=0.5, lam=1.0))
    semi = table.set_index("method").loc["semi-viterbi", "agreement"]
    others = table[table["method"] != "semi-viterbi"]
    ok = bool((semi >= others["agreement"]).all())
    print(table.to_string(index=False))
    report("estimation ordering", ok,
           f"semi-viterbi agreement {semi:.3f} vs "
           + ", ".join(f"{m} {a:.3f} (p={p:.3g}{', significant' if p < SIGN_TEST_ALPHA else ''})"
                       for m, a, p in zip(others["method"], others["agreement"],
                                          others["p_value"])),
           started)


def check_depth_tradeoff(args):
    started = time.perf_counter()
    lattices = generate_lattices(args.seed + 4, scaled(200, args.scale))
    bench = run_bench(lattices, HashScorer(), RescoreConfig(lam=1.0))
    if args.csv:
        bench.to_csv(args.csv, index=False, float_format="%.6f")
        print(f"bench table written to {args.csv}")
    print(bench.to_string(index=False))
    rows = bench[(bench["strategy"] == "non-iterative") & (bench["method"] == "posterior")]
    rows = rows.sort_values("param", ascending=False)
    depths = rows["mean_depth"].tolist()
    monotone = all(b >= a - 1e-12 for a, b in zip(depths, depths[1:]))

    ngram = bench[(bench["strategy"] == "non-iterative") & (bench["method"] == "ngram")]
    better = 0
    for _, row in ngram.iterrows():
        # the posterior setting closest in depth
        match = rows.iloc[(rows["mean_depth"] - row["mean_depth"]).abs().argmin()]
        better += match["mean_loglik"] >= row["mean_loglik"] - 1e-9
    report("depth / log-likelihood tradeoff", monotone,
           f"depths {[round(d, 3) for d in depths]}, posterior >= n-gram at matched depth "
           f"for {better}/{len(ngram)} orders", started)


def check_batching(args):
    started = time.perf_counter()
    lattices = mixed_archive(args.seed + 5, scaled(200, args.scale), 12)
    scorer = HashScorer()
    bad_calls = 0
    totals = Counter()
    for lat in lattices:
        for strategy, expected in ((Strategy.NON_ITERATIVE, 1), (Strategy.ITERATIVE, 2)):
            counter = CountingScorer(scorer)
            cfg = RescoreConfig(strategy=strategy, epsilon=FULL_EXPANSION, beam=NO_PRUNING,
                                lam=1.0)
            result = rescore(lat, counter, cfg)
            bad_calls += counter.calls != expected or result.scorer_calls != expected
            if strategy is Strategy.NON_ITERATIVE:
                totals["lattice"] += result.hypotheses_scored
        n_paths = len(enumerate_paths(lat))
        nbest = rescore(lat, scorer, RescoreConfig(strategy=Strategy.NBEST, nbest=n_paths,
                                                   beam=NO_PRUNING, lam=1.0))
        totals["nbest"] += nbest.hypotheses_scored
    report("batching contract", bad_calls == 0 and totals["lattice"] <= totals["nbest"],
           f"{bad_calls} call-count violations, hypotheses lattice {totals['lattice']} "
           f"vs N-best {totals['nbest']}", started)


def check_protocol(args):
    started = time.perf_counter()
    lattices = generate_lattices(args.seed + 6, scaled(100, args.scale))
    cfg = RescoreConfig(epsilon=0.1)
    local = serialize_archive([r.lattice for r in rescore_archive(lattices, HashScorer(), cfg)])
    with ExecScorer(ECHO_SCORER) as remote:
        piped = serialize_archive([r.lattice for r in rescore_archive(lattices, remote, cfg)])
    report("protocol conformance", local == piped,
           f"{len(lattices)} lattices, outputs {'identical' if local == piped else 'differ'}",
           started)


def _run_cli(argv, stdin_text=""):
    out = io.StringIO()
    old_stdin = sys.stdin
    sys.stdin = io.StringIO(stdin_text)
    try:
        with contextlib.redirect_stdout(out):
            code = cli.main(argv)
    finally:
        sys.stdin = old_stdin
    return code, out.getvalue()


def check_round_trip(args):
    started = time.perf_counter()
    lattices = mixed_archive(args.seed + 7, scaled(200, args.scale), 20)
    text = serialize_archive(lattices)
    again = parse_archive(text)
    round_trip = (serialize_archive(again) == text
                  and all(isomorphic(a, b) for a, b in zip(lattices, again)))

    archive = serialize_archive(generate_lattices(args.seed + 8, 10))
    commands = [
        ["prune", "--beam", "4"], ["expand", "--epsilon", "0.2"],
        ["expand", "--method", "ngram", "--order", "3"], ["to-list"], ["posteriors"],
        ["rescore", "--scorer", "hash", "--strategy", "iterative"],
        ["rescore", "--scorer", "bigram:/dev/null", "--strategy", "nbest"],
        ["metrics", "--generated-refs"], ["generate", "--seed", "3", "--count", "5"],
        ["bench", "--scorer", "hash", "--epsilons", "0.5,0.05", "--orders", "2"],
    ]
    unstable = []
    for argv in commands:
        first = _run_cli(argv, archive)
        second = _run_cli(argv, archive)
        if first != second or first[0] != 0:
            unstable.append(argv[0])
    report("round trip and determinism", round_trip and not unstable,
           f"round trip {'ok' if round_trip else 'BROKEN'}, "
           f"non-deterministic commands: {unstable or 'none'}", started)


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--scale", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--csv", help="write the bench sweep table here")
    args = parser.parse_args()

    for check in (check_cover_bound, check_expansion_soundness, check_full_expansion,
                  check_estimation_ordering, check_depth_tradeoff, check_batching,
                  check_protocol, check_round_trip):
        check(args)

    print()
    if failures:
        print(f"{len(failures)} check(s) failed: {', '.join(failures)}")
        sys.exit(1)
    print("all checks passed")


if __name__ == "__main__":
    main()
