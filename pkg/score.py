# score.py
# LM scorers, batched hypothesis scoring, per-arc score estimation from
# path-cover candidates, and interpolation back into the lattice.
#
# Scorers return one cost (nats) per token plus one for the implicit
# end-of-sentence, i.e. len(tokens) + 1 values per hypothesis.
#
# Scorer specs understood by make_scorer():
#   uniform[:V]   every token costs ln V
#   bigram:PATH   Laplace-smoothed bigram trained on a text file
#   hash          deterministic pseudo-neural costs from a stable hash
#   exec:CMD      external process speaking line-delimited JSON
#   http:URL      remote service, one POST per batch
#   file:PATH     replay a score file written by 'lattice-rescore score'

import contextlib
import enum
import functools
import hashlib
import json
import logging
import math
import os
import select
import shlex
import subprocess
import threading
import time
from collections import Counter
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import requests
from scipy.special import softmax

from config import (
    BOS, DEFAULT_ESTIMATION, DEFAULT_LAMBDA, EOS, EXEC_RESPONSE_TIMEOUT,
    EXEC_STARTUP_TIMEOUT, HASH_COST_MAX, HASH_COST_MIN, HASH_HISTORY_WINDOW, HTTP_SCORER_TIMEOUT,
    SCORER_COST_TOLERANCE, STRUCTURAL_TOKENS, UNIFORM_VOCAB_SIZE, UNK,
)
from cover import constrained_path_cover, cover_to_hypotheses
from errors import (
    ConfigError, HypothesisError, ScorerError, ScorerProtocolError, ScorerUnavailableError,
    UncoveredArcError,
)
from lattice import FINAL, ArcRef, costs_tie

logger = logging.getLogger(__name__)


# ============================================
# SCORERS
# ============================================

class Scorer:
    """
    Base scorer. Subclasses implement score_batch().

    serialized: calls must not overlap (one request in flight at a time);
                score_hypotheses() takes self.lock around every call.
    vocab:      set of known words, or None when the scorer has no fixed
                vocabulary (then nothing is mapped to <unk>).
    """
    name = "scorer"
    serialized = False
    vocab = None

    def __init__(self):
        self.lock = threading.Lock()

    def score_batch(self, requests_, utt_id=""):
        """requests_: [(id, tokens)] -> {id: [cost per token..., end cost]}"""
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class UniformScorer(Scorer):
    name = "uniform"

    def __init__(self, vocab_size=UNIFORM_VOCAB_SIZE):
        super().__init__()
        if vocab_size < 1:
            raise ConfigError(f"uniform vocab size must be >= 1, got {vocab_size}")
        self.vocab_size = vocab_size
        self.cost = math.log(vocab_size)

    def score_batch(self, requests_, utt_id=""):
        return {rid: [self.cost] * (len(tokens) + 1) for rid, tokens in requests_}


class BigramScorer(Scorer):
    """
    Add-one smoothed bigram model:
        P(w | h) = (c(h, w) + 1) / (c(h) + |V|)
    V is the training vocabulary plus </s> and <unk>; every sentence is
    wrapped in <s> ... </s> for counting.
    """
    name = "bigram"

    def __init__(self, sentences):
        super().__init__()
        self.bigrams = Counter()
        self.contexts = Counter()
        words = set()
        for sentence in sentences:
            tokens = [BOS, *sentence, EOS]
            words.update(sentence)
            for h, w in zip(tokens, tokens[1:]):
                self.bigrams[(h, w)] += 1
                self.contexts[h] += 1
        self.vocab = frozenset(words | {EOS, UNK})

    @classmethod
    def from_text(cls, text):
        return cls([line.split() for line in text.splitlines() if line.strip()])

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_text(f.read())
        except OSError as e:
            raise ScorerUnavailableError(f"cannot read bigram training text: {e}") from None

    def cost(self, history, word):
        p = (self.bigrams[(history, word)] + 1) / (self.contexts[history] + len(self.vocab))
        return -math.log(p)

    def score_batch(self, requests_, utt_id=""):
        out = {}
        for rid, tokens in requests_:
            seq = [BOS, *tokens, EOS]
            out[rid] = [self.cost(h, w) for h, w in zip(seq, seq[1:])]
        return out


class HashScorer(Scorer):
    """
    Stand-in for a neural LM: the cost of a word is a stable hash of the
    word and its (windowed) full history, so identical prefixes always
    agree and different histories give unrelated costs.
    """
    name = "hash"

    def __init__(self, window=HASH_HISTORY_WINDOW, low=HASH_COST_MIN, high=HASH_COST_MAX):
        super().__init__()
        self.window = window
        self.low = low
        self.high = high

    def cost(self, history, word):
        key = "\x1f".join(history[-self.window:]) + "\x1e" + word
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        u = int.from_bytes(digest, "big") / 2 ** 64
        return self.low + (self.high - self.low) * u

    def score_batch(self, requests_, utt_id=""):
        out = {}
        for rid, tokens in requests_:
            history = [BOS]
            costs = []
            for w in [*tokens, EOS]:
                costs.append(self.cost(history, w))
                history.append(w)
            out[rid] = costs
        return out


class ExecScorer(Scorer):
    """
    External scorer process, line-delimited JSON on stdin/stdout.

    handshake (scorer -> us):  {"ready": true, "vocab_size": N}
    request   (us -> scorer):  {"id": 3, "tokens": ["a", "b"]}
    response  (scorer -> us):  {"id": 3, "costs": [c_a, c_b, c_end]}

    A batch is written by a helper thread while this thread reads the
    responses (any order), so neither pipe can fill up and stall the
    other. Every read waits at most response_timeout seconds for new
    output. Calls are serialized.
    """
    name = "exec"
    serialized = True

    def __init__(self, command, startup_timeout=EXEC_STARTUP_TIMEOUT,
                 response_timeout=EXEC_RESPONSE_TIMEOUT):
        super().__init__()
        self.command = command
        self.response_timeout = response_timeout
        self._pending = b""
        argv = shlex.split(command)
        if not argv:
            raise ConfigError("exec scorer needs a command")
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as e:
            raise ScorerUnavailableError(f"cannot start scorer '{command}': {e}") from None

        try:
            hello = self._read(startup_timeout, "handshake")
            if hello.get("ready") is not True:
                raise ScorerProtocolError(f"bad handshake from scorer: {hello}")
        except ScorerError:
            self.close()
            raise
        self.vocab_size = hello.get("vocab_size")
        logger.info("exec scorer ready: %s (vocab_size=%s)", command, self.vocab_size)

    def _read_line(self, timeout, waiting_for):
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._pending:
            ready, _, _ = select.select([fd], [], [], timeout)
            if not ready:
                raise ScorerUnavailableError(
                    f"scorer '{self.command}' sent no {waiting_for} within {timeout}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ScorerUnavailableError(
                    f"scorer stdout closed (exit code {self.proc.poll()})")
            self._pending += chunk
        line, _, self._pending = self._pending.partition(b"\n")
        return line.decode("utf-8", errors="replace")

    def _read(self, timeout, waiting_for="response"):
        while True:
            line = self._read_line(timeout, waiting_for).strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise ScorerProtocolError(f"scorer sent invalid JSON: {line[:200]}") from None
            if not isinstance(obj, dict):
                raise ScorerProtocolError(f"scorer sent a non-object: {line[:200]}")
            return obj

    def _write_requests(self, requests_, failures):
        try:
            for rid, tokens in requests_:
                line = json.dumps({"id": rid, "tokens": list(tokens)}, ensure_ascii=False)
                self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (OSError, ValueError) as e:
            failures.append(e)

    def score_batch(self, requests_, utt_id=""):
        failures = []
        writer = threading.Thread(target=self._write_requests, args=(requests_, failures),
                                  daemon=True)
        writer.start()
        out = {}
        try:
            for _ in requests_:
                obj = self._read(self.response_timeout)
                if "id" not in obj or "costs" not in obj:
                    raise ScorerProtocolError(f"scorer response needs 'id' and 'costs': {obj}")
                out[obj["id"]] = obj["costs"]
        except ScorerError:
            # the stream is out of step with our requests; the process is unusable
            with contextlib.suppress(OSError):
                self.proc.kill()
            raise
        finally:
            writer.join()
        if failures:
            raise ScorerUnavailableError(f"scorer process is gone: {failures[0]}")
        return out

    def close(self):
        proc = getattr(self, "proc", None)
        if proc is None or proc.poll() is not None:
            return
        with contextlib.suppress(OSError):
            proc.stdin.close()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class HttpScorer(Scorer):
    """
    Remote scorer: POST {"requests": [{"id", "tokens"}...]} and expect
    {"responses": [{"id", "costs"}...]} back.
    """
    name = "http"

    def __init__(self, url, timeout=HTTP_SCORER_TIMEOUT):
        super().__init__()
        self.url = url
        self.timeout = timeout

    def score_batch(self, requests_, utt_id=""):
        body = {"utt_id": utt_id,
                "requests": [{"id": rid, "tokens": list(tokens)} for rid, tokens in requests_]}
        try:
            resp = requests.post(self.url, json=body, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as e:
            raise ScorerUnavailableError(f"http scorer {self.url}: {e}") from None
        try:
            data = resp.json()
        except ValueError:
            raise ScorerProtocolError(f"http scorer {self.url} returned invalid JSON") from None
        try:
            return {item["id"]: item["costs"] for item in data["responses"]}
        except (KeyError, TypeError):
            raise ScorerProtocolError(
                f"http scorer {self.url}: expected {{'responses': [{{'id', 'costs'}}]}}") from None


class FileScorer(Scorer):
    """Replays costs from a score file (see write_score_file)."""
    name = "file"

    def __init__(self, path):
        super().__init__()
        try:
            with open(path, encoding="utf-8") as f:
                self.scores = read_score_file(f.read())
        except OSError as e:
            raise ScorerUnavailableError(f"cannot read score file: {e}") from None

    def score_batch(self, requests_, utt_id=""):
        table = self.scores.get(utt_id)
        if table is None:
            raise ScorerProtocolError(f"score file has no utterance '{utt_id}'")
        return {rid: table[rid] for rid, _ in requests_ if rid in table}


class CountingScorer(Scorer):
    """Wraps a scorer and counts calls, hypotheses and tokens."""

    def __init__(self, inner):
        super().__init__()
        self.inner = inner
        self.name = inner.name
        self.serialized = inner.serialized
        self.vocab = inner.vocab
        self.lock = inner.lock
        self._count_lock = threading.Lock()
        self.calls = 0
        self.hypotheses = 0
        self.tokens = 0

    def score_batch(self, requests_, utt_id=""):
        with self._count_lock:
            self.calls += 1
            self.hypotheses += len(requests_)
            self.tokens += sum(len(t) + 1 for _, t in requests_)
        return self.inner.score_batch(requests_, utt_id=utt_id)

    def close(self):
        self.inner.close()


class LatencyScorer(Scorer):
    """Adds a fixed delay per call; used to study the cost of scorer round trips."""

    def __init__(self, inner, delay):
        super().__init__()
        self.inner = inner
        self.delay = delay
        self.name = inner.name
        self.serialized = inner.serialized
        self.vocab = inner.vocab
        self.lock = inner.lock

    def score_batch(self, requests_, utt_id=""):
        time.sleep(self.delay)
        return self.inner.score_batch(requests_, utt_id=utt_id)

    def close(self):
        self.inner.close()


def make_scorer(spec):
    kind, _, arg = spec.partition(":")
    if kind == "uniform":
        if not arg:
            return UniformScorer()
        try:
            return UniformScorer(int(arg))
        except ValueError:
            raise ConfigError(f"uniform vocab size must be an integer, got '{arg}'") from None
    if kind == "hash" and not arg:
        return HashScorer()
    if kind == "bigram" and arg:
        return BigramScorer.from_file(arg)
    if kind == "exec" and arg:
        return ExecScorer(arg)
    if kind == "http" and arg:
        return HttpScorer(arg)
    if kind == "file" and arg:
        return FileScorer(arg)
    raise ConfigError(
        f"unknown scorer '{spec}' (use uniform[:V], bigram:PATH, hash, exec:CMD, "
        "http:URL or file:PATH)")


# ============================================
# BATCH SCORING
# ============================================

@dataclass(frozen=True)
class ScoreBatch:
    requests: tuple   # ((id, tokens), ...) as submitted
    costs: dict       # id -> tuple of len(tokens) + 1 costs


def map_oov(tokens, vocab):
    if vocab is None:
        return tuple(tokens)
    return tuple(t if t in vocab else UNK for t in tokens)


def score_hypotheses(scorer, hypotheses, utt_id=""):
    """
    Score a batch of (id, tokens) in one scorer call and validate the
    response: same ids, len(tokens) + 1 finite non-negative costs each.
    """
    if not hypotheses:
        raise HypothesisError("empty hypothesis batch")
    ids = [rid for rid, _ in hypotheses]
    if len(set(ids)) != len(ids):
        raise HypothesisError("hypothesis ids must be unique within a batch")
    for rid, tokens in hypotheses:
        bad = [t for t in tokens if t in STRUCTURAL_TOKENS]
        if bad:
            raise HypothesisError(f"hypothesis {rid} contains structural tokens {bad}")

    mapped = [(rid, map_oov(tokens, scorer.vocab)) for rid, tokens in hypotheses]
    guard = scorer.lock if scorer.serialized else contextlib.nullcontext()
    with guard:
        raw = scorer.score_batch(mapped, utt_id=utt_id)

    if not isinstance(raw, dict) or set(raw) != set(ids):
        got = sorted(raw) if isinstance(raw, dict) else raw
        raise ScorerProtocolError(f"{utt_id}: scorer returned ids {got}, expected {sorted(ids)}")
    costs = {}
    for rid, tokens in hypotheses:
        values = raw[rid]
        if not isinstance(values, (list, tuple)) or len(values) != len(tokens) + 1:
            raise ScorerProtocolError(
                f"{utt_id}: hypothesis {rid} has {len(tokens)} tokens, "
                f"expected {len(tokens) + 1} costs, got {values!r}")
        try:
            values = tuple(float(c) for c in values)
        except (TypeError, ValueError):
            raise ScorerProtocolError(f"{utt_id}: non-numeric cost for hypothesis {rid}") from None
        if any(not math.isfinite(c) or c < -SCORER_COST_TOLERANCE for c in values):
            raise ScorerProtocolError(
                f"{utt_id}: hypothesis {rid} has a negative or non-finite cost")
        costs[rid] = tuple(max(c, 0.0) for c in values)
    return ScoreBatch(tuple((rid, tuple(t)) for rid, t in hypotheses), costs)


# ============================================
# ESTIMATION
# ============================================

class EstimationMethod(str, enum.Enum):
    AVERAGE = "average"
    WEIGHTED = "weighted"
    SEMI_VITERBI = "semi-viterbi"


def parse_estimation(value):
    if isinstance(value, EstimationMethod):
        return value
    normalized = str(value).replace("_", "-")
    if normalized == "weighted-average":
        normalized = "weighted"
    try:
        return EstimationMethod(normalized)
    except ValueError:
        raise ConfigError(
            f"estimation must be average, weighted or semi-viterbi, got '{value}'") from None


class Candidate(NamedTuple):
    path_id: int
    token_cost: float     # neural cost of the arc's word on this path
    history_cost: float   # neural cost of the path's words before it
    path_cost: float      # lattice cost of the whole path


def _semi_viterbi_order(a, b):
    if not costs_tie(a.path_cost, b.path_cost):
        return -1 if a.path_cost < b.path_cost else 1
    return (a.path_id > b.path_id) - (a.path_id < b.path_id)


def estimate(candidates, method):
    """Collapse the candidate costs of one arc into one estimate."""
    method = parse_estimation(method)
    if not candidates:
        raise UncoveredArcError("no candidates to estimate from")
    costs = np.array([c.token_cost for c in candidates])
    if method is EstimationMethod.AVERAGE:
        return float(np.mean(costs))
    if method is EstimationMethod.WEIGHTED:
        weights = softmax(-np.array([c.history_cost for c in candidates]))
        return float(np.dot(weights, costs))
    return min(candidates, key=functools.cmp_to_key(_semi_viterbi_order)).token_cost


@dataclass(frozen=True)
class ArcScoreTable:
    candidates: dict   # ArcRef -> [Candidate]
    estimates: dict    # ArcRef -> float
    method: EstimationMethod


def _token_positions(words):
    """Per arc position (plus the end position): index of the LM token it carries."""
    positions = []
    k = 0
    for w in words:
        positions.append(k)
        if w not in STRUCTURAL_TOKENS:
            k += 1
    positions.append(k)
    return positions


def build_arc_scores(lat, cover, batch, method=DEFAULT_ESTIMATION):
    """
    Gather, for every coverage item, the scores it received on each cover
    path through it, and estimate one neural cost per item. Structural
    arcs (<s>, </s>) get no candidates.
    """
    method = parse_estimation(method)
    positions = {}
    for pid, cp in enumerate(cover.paths):
        if pid not in batch.costs:
            raise UncoveredArcError(f"{lat.utt_id}: no scores for cover path {pid}")
        positions[pid] = _token_positions(cp.path.words)

    candidates = {}
    for item, uses in cover.arc_to_paths.items():
        if item.index != FINAL and lat.arc(item).word in STRUCTURAL_TOKENS:
            continue
        found = []
        for pid, pos in uses:
            costs = batch.costs[pid]
            k = positions[pid][pos]
            found.append(Candidate(pid, costs[k], math.fsum(costs[:k]), cover.paths[pid].cost))
        candidates[item] = found

    for s, out in enumerate(lat.arcs):
        for i, arc in enumerate(out):
            if arc.word not in STRUCTURAL_TOKENS and ArcRef(s, i) not in candidates:
                raise UncoveredArcError(
                    f"{lat.utt_id}: arc {s}->{arc.next_state} '{arc.word}' is on no cover path")
        if lat.is_final(s) and ArcRef(s, FINAL) not in candidates:
            raise UncoveredArcError(f"{lat.utt_id}: final state {s} is on no cover path")

    estimates = {item: estimate(cands, method) for item, cands in candidates.items()}
    return ArcScoreTable(candidates, estimates, method)


# ============================================
# INTERPOLATION
# ============================================

@dataclass(frozen=True)
class InterpolationConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")


def merge_scores(lat, table, cfg):
    """
    New graph cost = lam * neural estimate + (1 - lam) * old graph cost,
    for every arc and every final cost. Acoustic costs and structure are
    unchanged; structural arcs take a neural estimate of 0.
    """
    lam = cfg.lam

    def mix(item, old):
        est = table.estimates.get(item)
        if est is None:
            raise UncoveredArcError(f"{lat.utt_id}: no estimate for {tuple(item)}")
        return lam * est + (1.0 - lam) * old

    arcs = []
    for s, out in enumerate(lat.arcs):
        new_out = []
        for i, arc in enumerate(out):
            if arc.word in STRUCTURAL_TOKENS:
                graph = (1.0 - lam) * arc.graph_cost
            else:
                graph = mix(ArcRef(s, i), arc.graph_cost)
            new_out.append(replace(arc, graph_cost=graph))
        arcs.append(tuple(new_out))
    finals = {s: mix(ArcRef(s, FINAL), c) for s, c in lat.final_costs.items()}
    return replace(lat, arcs=tuple(arcs), final_costs=finals)


def replace_scores(lat, scorer, method=DEFAULT_ESTIMATION, cfg=None, base=None):
    """
    Cover, score, estimate and merge on the lattice as given (no expansion).

    base: lattice with lat's structure whose graph costs the estimates are
    interpolated with; defaults to lat itself.
    """
    if cfg is None:
        cfg = InterpolationConfig()
    cover = constrained_path_cover(lat)
    batch = score_hypotheses(scorer, cover_to_hypotheses(cover), utt_id=lat.utt_id)
    table = build_arc_scores(lat, cover, batch, method)
    return merge_scores(lat if base is None else base, table, cfg)


# ============================================
# OFFLINE HYPOTHESIS / SCORE FILES
# ============================================
# hypothesis file (cover.format_hypotheses):
#   UTT <id>
#   PATH <path id> <lattice cost> <token> ...
# score file:
#   UTT <id>
#   <path id> <cost> <cost> ...      (len(tokens) + 1 costs)

def read_hypotheses(text):
    """-> {utt_id: [(path id, tokens), ...]} in file order."""
    out = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if tokens[0] == "UTT" and len(tokens) == 2:
            current = out.setdefault(tokens[1], [])
        elif tokens[0] == "PATH" and len(tokens) >= 3 and current is not None:
            try:
                current.append((int(tokens[1]), tuple(tokens[3:])))
            except ValueError:
                raise ScorerProtocolError(f"hypothesis file line {line_no}: bad path id") from None
        else:
            raise ScorerProtocolError(f"hypothesis file line {line_no}: unexpected '{raw.strip()}'")
    return out


def write_score_file(results):
    """results: [(utt_id, ScoreBatch)] -> text"""
    lines = []
    for utt_id, batch in results:
        lines.append(f"UTT {utt_id}")
        for rid, _ in batch.requests:
            lines.append(" ".join([str(rid), *(repr(c) for c in batch.costs[rid])]))
    return "\n".join(lines) + "\n" if lines else ""


def read_score_file(text):
    """-> {utt_id: {path id: [costs]}}"""
    out = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if tokens[0] == "UTT" and len(tokens) == 2:
            current = out.setdefault(tokens[1], {})
            continue
        if current is None:
            raise ScorerProtocolError(f"score file line {line_no}: scores before any UTT line")
        try:
            current[int(tokens[0])] = [float(c) for c in tokens[1:]]
        except ValueError:
            raise ScorerProtocolError(f"score file line {line_no}: bad number") from None
    return out


def score_hypothesis_file(scorer, hypotheses):
    """{utt_id: [(id, tokens)]} -> [(utt_id, ScoreBatch)], one scorer call per utterance."""
    results = []
    for utt_id, hyps in hypotheses.items():
        if not hyps:
            continue
        results.append((utt_id, score_hypotheses(scorer, hyps, utt_id=utt_id)))
    return results
