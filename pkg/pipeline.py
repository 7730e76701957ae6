# pipeline.py
# End-to-end rescoring strategies, the N-best and exhaustive baselines,
# evaluation metrics, synthetic lattice generation and the benchmark sweep.
#
# Strategies (one scorer batch per rescoring stage):
#   non-iterative  prune -> expand -> cover -> score -> estimate -> merge
#   iterative      prune -> score replacement, then non-iterative
#   double         non-iterative applied twice
#   replace        prune -> score replacement only (structure unchanged)
#   nbest          prune -> rerank the N lowest-cost paths exactly
# The second stage of iterative and double expands and covers the stage-one
# lattice but interpolates with the original graph costs.

import enum
import functools
import heapq
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from config import (
    BENCH_EPSILONS, BENCH_NGRAM_ORDERS, DEFAULT_BEAM, DEFAULT_EPSILON,
    DEFAULT_ESTIMATION, DEFAULT_EXPANSION_METHOD, DEFAULT_LAMBDA, DEFAULT_NBEST,
    DEFAULT_NGRAM_ORDER, DEFAULT_PATH_LIMIT, DEFAULT_POSTERIOR_SEMIRING,
    DEFAULT_PROFILE, DEFAULT_STRATEGY, DEFAULT_WORKERS, GENERATOR_MAX_BRANCHING,
    GENERATOR_MAX_STATES, STRUCTURAL_TOKENS,
)
from errors import ConfigError, LatticeError, MissingReferenceError, TooManyPathsError
from expand import ExpansionConfig, expand_ngram, expand_posterior
from lattice import (
    Arc, ArcRef, arc_frames, backward_costs, build_lattice, costs_tie,
    enumerate_paths, lattice_depth, make_path, path_sort_key, prune, total_frames,
)
from score import (
    CountingScorer, EstimationMethod, InterpolationConfig, parse_estimation,
    replace_scores, score_hypotheses,
)
from viterbi import Semiring, best_path, parse_semiring

logger = logging.getLogger(__name__)


# ============================================
# CONFIGURATION
# ============================================

class Strategy(str, enum.Enum):
    NON_ITERATIVE = "non-iterative"
    ITERATIVE = "iterative"
    DOUBLE = "double"
    REPLACE = "replace"
    NBEST = "nbest"


class ExpansionMethod(str, enum.Enum):
    POSTERIOR = "posterior"
    NGRAM = "ngram"


def parse_strategy(value):
    if isinstance(value, Strategy):
        return value
    normalized = str(value).replace("_", "-")
    if normalized == "replace-only":
        normalized = "replace"
    try:
        return Strategy(normalized)
    except ValueError:
        names = ", ".join(s.value for s in Strategy)
        raise ConfigError(f"strategy must be one of {names}; got '{value}'") from None


def parse_expansion_method(value):
    try:
        return ExpansionMethod(value)
    except ValueError:
        raise ConfigError(f"expansion method must be posterior or ngram, got '{value}'") from None


@dataclass(frozen=True)
class RescoreConfig:
    strategy: Strategy = Strategy(DEFAULT_STRATEGY)
    epsilon: float = DEFAULT_EPSILON
    beam: float = DEFAULT_BEAM
    estimation: EstimationMethod = EstimationMethod(DEFAULT_ESTIMATION)
    lam: float = DEFAULT_LAMBDA
    lam1: Optional[float] = None     # score-replacement stage of 'iterative'; None = lam
    nbest: int = DEFAULT_NBEST
    posterior_semiring: Semiring = Semiring(DEFAULT_POSTERIOR_SEMIRING)
    expansion: ExpansionMethod = ExpansionMethod(DEFAULT_EXPANSION_METHOD)
    ngram_order: int = DEFAULT_NGRAM_ORDER

    def __post_init__(self):
        object.__setattr__(self, "strategy", parse_strategy(self.strategy))
        object.__setattr__(self, "estimation", parse_estimation(self.estimation))
        object.__setattr__(self, "posterior_semiring", parse_semiring(self.posterior_semiring))
        object.__setattr__(self, "expansion", parse_expansion_method(self.expansion))
        if math.isnan(self.beam) or self.beam < 0:
            raise ConfigError(f"beam must be >= 0, got {self.beam}")
        if self.nbest < 1:
            raise ConfigError(f"nbest must be >= 1, got {self.nbest}")
        if self.expansion is ExpansionMethod.NGRAM and self.ngram_order < 2:
            raise ConfigError(f"n-gram order must be >= 2, got {self.ngram_order}")
        ExpansionConfig(self.epsilon, self.posterior_semiring)
        InterpolationConfig(self.lam)
        if self.lam1 is not None:
            InterpolationConfig(self.lam1)

    @property
    def expansion_config(self):
        return ExpansionConfig(self.epsilon, self.posterior_semiring)

    @property
    def interpolation(self):
        return InterpolationConfig(self.lam)

    @property
    def stage1_interpolation(self):
        return InterpolationConfig(self.lam if self.lam1 is None else self.lam1)


# ============================================
# STRATEGIES
# ============================================

def expand_lattice(lat, cfg):
    if cfg.expansion is ExpansionMethod.NGRAM:
        return expand_ngram(lat, cfg.ngram_order)
    return expand_posterior(lat, cfg.expansion_config)


def rescore_non_iterative(lat, scorer, cfg):
    pruned = prune(lat, cfg.beam)
    expanded = expand_lattice(pruned, cfg)
    logger.debug("%s: %d states after prune, %d after expansion", lat.utt_id,
                 pruned.num_states, expanded.num_states)
    return replace_scores(expanded, scorer, cfg.estimation, cfg.interpolation)


def with_graph_costs(lat, source):
    """
    lat with graph and final costs taken from source, matching arcs by
    word sequence from the start state. Every word sequence of lat must be
    a path of source (expansion and pruning keep this).
    """
    origin = {lat.start: source.start}
    arcs = []
    for s, out in enumerate(lat.arcs):
        by_word = {a.word: a for a in source.arcs[origin[s]]}
        new_out = []
        for arc in out:
            src_arc = by_word.get(arc.word)
            if src_arc is None:
                raise LatticeError(f"{lat.utt_id}: arc '{arc.word}' out of state {s} "
                                   "has no counterpart in the source lattice")
            origin.setdefault(arc.next_state, src_arc.next_state)
            new_out.append(replace(arc, graph_cost=src_arc.graph_cost))
        arcs.append(tuple(new_out))
    finals = {s: source.final_costs[origin[s]] for s in lat.final_costs}
    return replace(lat, arcs=tuple(arcs), final_costs=finals)


def _rescore_guided(guide, original, scorer, cfg):
    """
    Non-iterative pass whose pruning, expansion and cover follow guide's
    costs while the estimates are interpolated with original's graph costs.
    """
    expanded = expand_lattice(prune(guide, cfg.beam), cfg)
    base = with_graph_costs(expanded, original)
    return replace_scores(expanded, scorer, cfg.estimation, cfg.interpolation, base=base)


def rescore_iterative(lat, scorer, cfg):
    pruned = prune(lat, cfg.beam)
    replaced = replace_scores(pruned, scorer, cfg.estimation, cfg.stage1_interpolation)
    return _rescore_guided(replaced, pruned, scorer, cfg)


def rescore_double(lat, scorer, cfg):
    pruned = prune(lat, cfg.beam)
    first = replace_scores(expand_lattice(pruned, cfg), scorer, cfg.estimation,
                           cfg.interpolation)
    return _rescore_guided(first, pruned, scorer, cfg)


def rescore_replace(lat, scorer, cfg):
    return replace_scores(prune(lat, cfg.beam), scorer, cfg.estimation, cfg.interpolation)


def nbest_paths(lat, n):
    """
    The n lowest-cost complete paths, best first, by best-first search
    with exact completion costs as the heuristic. Order matches
    enumerate_paths() (cost, then word sequence).
    """
    if n < 1:
        raise ConfigError(f"nbest must be >= 1, got {n}")
    bwd = backward_costs(lat)
    counter = itertools.count()
    # (priority, words, 0 = complete / 1 = partial, seq, state, cost so far, refs)
    heap = [(bwd[lat.start], (), 1, next(counter), lat.start, 0.0, ())]
    done = []
    while heap:
        priority, words, partial, _, state, g, refs = heapq.heappop(heap)
        if len(done) >= n:
            nth = done[n - 1].cost
            if priority > nth and not costs_tie(priority, nth):
                break
        if not partial:
            done.append(make_path(lat, refs))
            done.sort(key=path_sort_key)
            continue
        if lat.is_final(state):
            heapq.heappush(heap, (g + lat.final_costs[state], words, 0, next(counter),
                                  state, g, refs))
        for i, arc in enumerate(lat.arcs[state]):
            t = arc.next_state
            g2 = g + arc.cost
            heapq.heappush(heap, (g2 + bwd[t], words + (arc.word,), 1, next(counter),
                                  t, g2, refs + (ArcRef(state, i),)))
    return done[:n]


def _exact_score(path, costs, lam):
    return lam * math.fsum(costs) + (1.0 - lam) * path.graph_cost + path.acoustic_cost


def _compare_scored(a, b):
    """(score, path) pairs: lower score first, near-ties by word sequence."""
    if not costs_tie(a[0], b[0]):
        return -1 if a[0] < b[0] else 1
    return (a[1].words > b[1].words) - (a[1].words < b[1].words)


def score_paths_exactly(lat, paths, scorer, lam):
    """Score every path in one batch; -> [(exact interpolated score, path, costs)]."""
    batch = score_hypotheses(scorer, [(k, p.tokens) for k, p in enumerate(paths)],
                             utt_id=lat.utt_id)
    return [(_exact_score(p, batch.costs[k], lam), p, batch.costs[k])
            for k, p in enumerate(paths)]


def _pick_best(scored):
    return min(scored, key=functools.cmp_to_key(lambda a, b: _compare_scored(a[:2], b[:2])))


def rescore_nbest(lat, scorer, n, lam):
    """Best of the n lowest-cost paths after exact rescoring."""
    paths = nbest_paths(lat, n)
    _, path, _ = _pick_best(score_paths_exactly(lat, paths, scorer, lam))
    return path


def oracle_best(lat, scorer, lam=1.0, limit=DEFAULT_PATH_LIMIT):
    """Exhaustive rescoring: -> (best path, its exact interpolated score)."""
    score, path, _ = _pick_best(score_paths_exactly(lat, enumerate_paths(lat, limit), scorer, lam))
    return path, score


def path_lattice(lat, path, costs, lam):
    """
    A one-path lattice carrying the exact interpolated costs of path,
    so N-best output can be written and measured like any other result.
    """
    arcs = []
    k = 0
    for pos, ref in enumerate(path.arcs):
        arc = lat.arc(ref)
        if arc.word in STRUCTURAL_TOKENS:
            graph = (1.0 - lam) * arc.graph_cost
        else:
            graph = lam * costs[k] + (1.0 - lam) * arc.graph_cost
            k += 1
        arcs.append((pos, replace(arc, graph_cost=graph, next_state=pos + 1)))
    final = lam * costs[k] + (1.0 - lam) * lat.final_costs[path.final_state]
    return build_lattice(arcs, {len(path.arcs): final}, utt_id=lat.utt_id, report=False)


RESULT_COLUMNS = ["utt_id", "strategy", "best_words", "best_cost", "depth", "num_states",
                  "hypotheses_scored", "scorer_calls"]


@dataclass(frozen=True)
class RescoreResult:
    utt_id: str
    lattice: object         # rescored lattice (one path for nbest)
    best: object            # its best Path
    scorer_calls: int
    hypotheses_scored: int


def rescore(lat, scorer, cfg):
    counter = CountingScorer(scorer)
    strategy = cfg.strategy
    if strategy is Strategy.NBEST:
        pruned = prune(lat, cfg.beam)
        scored = score_paths_exactly(pruned, nbest_paths(pruned, cfg.nbest), counter, cfg.lam)
        _, path, costs = _pick_best(scored)
        out = path_lattice(pruned, path, costs, cfg.lam)
    elif strategy is Strategy.ITERATIVE:
        out = rescore_iterative(lat, counter, cfg)
    elif strategy is Strategy.DOUBLE:
        out = rescore_double(lat, counter, cfg)
    elif strategy is Strategy.REPLACE:
        out = rescore_replace(lat, counter, cfg)
    else:
        out = rescore_non_iterative(lat, counter, cfg)
    best = best_path(out)
    logger.debug("%s: %s -> %s (%d calls, %d hypotheses)", lat.utt_id, strategy.value,
                 " ".join(best.words), counter.calls, counter.hypotheses)
    return RescoreResult(lat.utt_id, out, best, counter.calls, counter.hypotheses)


def rescore_archive(lattices, scorer, cfg, workers=DEFAULT_WORKERS):
    """
    One lattice per task. Results come back in archive order, not sorted
    by utterance id: the output archive lines up with the input one and
    is identical for any number of workers.
    """
    if workers <= 1 or len(lattices) <= 1:
        return [rescore(lat, scorer, cfg) for lat in lattices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda lat: rescore(lat, scorer, cfg), lattices))


def results_frame(results, cfg):
    """One row per rescored utterance, in archive order."""
    rows = [{
        "utt_id": r.utt_id,
        "strategy": cfg.strategy.value,
        "best_words": " ".join(r.best.tokens),
        "best_cost": r.best.cost,
        "depth": lattice_depth(r.lattice),
        "num_states": r.lattice.num_states,
        "hypotheses_scored": r.hypotheses_scored,
        "scorer_calls": r.scorer_calls,
    } for r in results]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


# ============================================
# METRICS
# ============================================

@dataclass(frozen=True)
class Metrics:
    wer: float                # percent
    lattice_depth: float      # arc frames / utterance frames, whole archive
    best_path_loglik: float   # mean of -cost(best path), nats
    scorer_calls: int
    hypotheses_scored: int
    num_utterances: int = 0
    word_errors: int = 0
    ref_words: int = 0


def edit_distance(ref, hyp):
    """Word-level Levenshtein distance (substitutions + deletions + insertions)."""
    d = np.zeros((len(ref) + 1, len(hyp) + 1), dtype=np.int64)
    d[:, 0] = np.arange(len(ref) + 1)
    d[0, :] = np.arange(len(hyp) + 1)
    for i in range(1, len(ref) + 1):
        for j in range(1, len(hyp) + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    return int(d[len(ref), len(hyp)])


def read_references(text):
    """Kaldi-style text: '<utt id> word word ...' per line."""
    refs = {}
    for line in text.splitlines():
        tokens = line.split()
        if tokens:
            refs[tokens[0]] = tuple(t for t in tokens[1:] if t not in STRUCTURAL_TOKENS)
    return refs


def compute_metrics(references, lattices, scorer_calls=0, hypotheses_scored=0):
    errors = ref_words = 0
    frames = arc_total = 0
    logliks = []
    for lat in lattices:
        ref = references.get(lat.utt_id)
        if ref is None:
            raise MissingReferenceError(f"no reference transcript for '{lat.utt_id}'")
        best = best_path(lat)
        errors += edit_distance(list(ref), list(best.tokens))
        ref_words += len(ref)
        logliks.append(-best.cost)
        frames += total_frames(lat)
        arc_total += arc_frames(lat)

    if ref_words:
        wer = 100.0 * errors / ref_words
    else:
        wer = 0.0 if errors == 0 else 100.0
    return Metrics(
        wer=wer,
        lattice_depth=arc_total / frames if frames else 0.0,
        best_path_loglik=float(np.mean(logliks)) if logliks else 0.0,
        scorer_calls=scorer_calls,
        hypotheses_scored=hypotheses_scored,
        num_utterances=len(logliks),
        word_errors=errors,
        ref_words=ref_words,
    )


# ============================================
# SYNTHETIC LATTICES
# ============================================

@dataclass(frozen=True)
class GeneratorProfile:
    num_states: int = DEFAULT_PROFILE["num_states"]
    branching: int = DEFAULT_PROFILE["branching"]
    vocab_size: int = DEFAULT_PROFILE["vocab_size"]
    cost_noise: float = DEFAULT_PROFILE["cost_noise"]
    max_span: int = DEFAULT_PROFILE["max_span"]

    def __post_init__(self):
        if not (2 <= self.num_states <= GENERATOR_MAX_STATES):
            raise ConfigError(f"num_states must be in [2, {GENERATOR_MAX_STATES}]")
        if not (1 <= self.branching <= GENERATOR_MAX_BRANCHING):
            raise ConfigError(f"branching must be in [1, {GENERATOR_MAX_BRANCHING}]")
        if self.vocab_size < self.branching:
            raise ConfigError("vocab_size must be at least the branching factor")
        if self.cost_noise < 0 or self.max_span < 1:
            raise ConfigError("cost_noise must be >= 0 and max_span >= 1")


def generate_lattices(seed, count, profile=None):
    """
    Deterministic synthetic archive. States follow increasing frame times;
    every state has an arc to its successor plus up to branching-1 jumps
    of at most max_span states, with distinct words per state. The last
    state is the only final. Graph costs follow a Zipf unigram, acoustic
    costs scale with arc duration; both get half-normal noise.
    """
    profile = profile or GeneratorProfile()
    rng = np.random.default_rng(seed)
    vocab = [f"w{i:03d}" for i in range(profile.vocab_size)]
    zipf = 1.0 / np.arange(1, profile.vocab_size + 1)
    word_costs = -np.log(zipf / zipf.sum())
    n = profile.num_states

    lattices = []
    for k in range(count):
        times = np.concatenate([[0], np.cumsum(rng.integers(1, 4, size=n - 1))])
        arcs = []
        for s in range(n - 1):
            targets = np.arange(s + 1, min(n - 1, s + profile.max_span) + 1)
            fanout = int(rng.integers(1, min(profile.branching, len(targets)) + 1))
            jumps = rng.choice(targets[1:], size=fanout - 1, replace=False) if fanout > 1 else []
            dests = sorted([s + 1, *(int(t) for t in jumps)])
            words = rng.choice(profile.vocab_size, size=len(dests), replace=False)
            for t, w in zip(dests, words):
                frames = int(times[t] - times[s])
                graph = word_costs[w] + profile.cost_noise * abs(rng.normal())
                acoustic = frames * rng.uniform(0.5, 1.5) + profile.cost_noise * abs(rng.normal())
                arcs.append((s, Arc(vocab[w], round(float(graph), 4), round(float(acoustic), 4),
                                    t, frames)))
        lattices.append(build_lattice(arcs, {n - 1: 0.0}, utt_id=f"utt{k:05d}"))
    return lattices


def generate_references(lattices):
    """Lowest-acoustic-cost path of each lattice as a stand-in transcript."""
    refs = {}
    for lat in lattices:
        acoustic_only = replace(
            lat,
            arcs=tuple(tuple(replace(a, graph_cost=0.0) for a in out) for out in lat.arcs),
            final_costs={s: 0.0 for s in lat.final_costs},
        )
        refs[lat.utt_id] = best_path(acoustic_only).tokens
    return refs


# ============================================
# BENCHMARK
# ============================================

BENCH_COLUMNS = ["strategy", "method", "param", "mean_depth", "mean_loglik",
                 "oracle_agreement", "hypotheses_scored", "scorer_calls"]


def sign_test(wins, losses):
    """One-sided binomial sign test: p-value of seeing this many wins by chance."""
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def _oracle_tables(lattices, scorer, beam, lam):
    """utt id -> ({words: exact score}, oracle best words), or None if too many paths."""
    tables = {}
    for lat in lattices:
        pruned = prune(lat, beam)
        try:
            scored = score_paths_exactly(pruned, enumerate_paths(pruned), scorer, lam)
        except TooManyPathsError:
            logger.info("%s: too many paths for the exhaustive oracle; skipped", lat.utt_id)
            tables[lat.utt_id] = None
            continue
        _, best, _ = _pick_best(scored)
        tables[lat.utt_id] = ({p.words: s for s, p, _ in scored}, best.words)
    return tables


def _bench_rows(base, epsilons, orders):
    for strategy in (Strategy.NON_ITERATIVE, Strategy.ITERATIVE):
        for eps in epsilons:
            yield replace(base, strategy=strategy, expansion=ExpansionMethod.POSTERIOR,
                          epsilon=eps), "posterior", eps
        for order in orders:
            yield replace(base, strategy=strategy, expansion=ExpansionMethod.NGRAM,
                          ngram_order=order), "ngram", order
    yield replace(base, strategy=Strategy.REPLACE), "none", None
    yield replace(base, strategy=Strategy.NBEST), "none", base.nbest


def run_bench(lattices, scorer, cfg=None, epsilons=BENCH_EPSILONS, orders=BENCH_NGRAM_ORDERS,
              timing=False, workers=1):
    """
    Sweep strategies and expansion settings over one archive. Log-likelihood
    and oracle agreement are measured with the exact (exhaustive) scores of
    the chosen word sequences on the pruned input lattices.
    """
    base = cfg or RescoreConfig()
    oracle = _oracle_tables(lattices, scorer, base.beam, base.lam)
    rows = []
    for row_cfg, method, param in _bench_rows(base, epsilons, orders):
        started = time.perf_counter()
        results = rescore_archive(lattices, scorer, row_cfg, workers)
        elapsed = time.perf_counter() - started

        frames = sum(total_frames(r.lattice) for r in results)
        depth = sum(arc_frames(r.lattice) for r in results) / frames if frames else 0.0
        logliks, agree = [], []
        for r in results:
            table = oracle[r.utt_id]
            if table is None:
                continue
            scores, oracle_words = table
            agree.append(r.best.words == oracle_words)
            if r.best.words in scores:
                logliks.append(-scores[r.best.words])

        row = {
            "strategy": row_cfg.strategy.value,
            "method": method,
            "param": param,
            "mean_depth": depth,
            "mean_loglik": float(np.mean(logliks)) if logliks else float("nan"),
            "oracle_agreement": float(np.mean(agree)) if agree else float("nan"),
            "hypotheses_scored": sum(r.hypotheses_scored for r in results),
            "scorer_calls": sum(r.scorer_calls for r in results),
        }
        if timing:
            row["wall_time"] = elapsed
        logger.info("bench %s %s=%s: depth %.3f loglik %.3f", row["strategy"], method,
                    param, row["mean_depth"], row["mean_loglik"])
        rows.append(row)
    return pd.DataFrame(rows, columns=BENCH_COLUMNS + (["wall_time"] if timing else []))


def estimation_agreement(lattices, scorer, cfg=None, oracle_scorer=None, workers=1):
    """
    Best-path agreement with the exhaustive oracle for each estimation
    method, plus a sign test of semi-Viterbi against the other two
    (wins: lattices where only semi-Viterbi agrees).
    """
    base = cfg or RescoreConfig()
    oracle = _oracle_tables(lattices, oracle_scorer or scorer, base.beam, base.lam)
    agree = {}
    for method in EstimationMethod:
        results = rescore_archive(lattices, scorer, replace(base, estimation=method), workers)
        agree[method] = {r.utt_id: r.best.words == oracle[r.utt_id][1]
                         for r in results if oracle[r.utt_id] is not None}

    semi = agree[EstimationMethod.SEMI_VITERBI]
    rows = []
    for method in EstimationMethod:
        other = agree[method]
        wins = sum(1 for u in semi if semi[u] and not other[u])
        losses = sum(1 for u in semi if other[u] and not semi[u])
        is_semi = method is EstimationMethod.SEMI_VITERBI
        rows.append({
            "method": method.value,
            "agreement": float(np.mean(list(other.values()))) if other else float("nan"),
            "semi_viterbi_wins": 0 if is_semi else wins,
            "semi_viterbi_losses": 0 if is_semi else losses,
            "p_value": float("nan") if is_semi else sign_test(wins, losses),
        })
    return pd.DataFrame(rows)
