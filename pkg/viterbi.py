# viterbi.py
# Forward-backward computations over a lattice: best / total scores,
# best predecessor and successor links, best paths and arc posteriors.
#
# Everything here works in log-probability space (costs negated at the
# boundary), so alpha + beta are log-probs and posteriors are exp() of a
# non-positive number.

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import ConfigError
from lattice import FINAL, ArcRef, costs_tie, make_path

logger = logging.getLogger(__name__)


class Semiring(str, enum.Enum):
    MAX = "max"
    SUM = "sum"


def parse_semiring(value):
    try:
        return Semiring(value)
    except ValueError:
        raise ConfigError(f"semiring must be 'max' or 'sum', got '{value}'") from None


@dataclass(frozen=True)
class ForwardBackwardTable:
    alpha: np.ndarray     # log-prob of reaching each state from the start
    beta: np.ndarray      # log-prob of finishing from each state (final cost included)
    best_pred: tuple      # per state: (previous state, ArcRef) or None; max semiring only
    best_succ: tuple      # per state: (next state, ArcRef) or None = stop here; max only
    semiring: Semiring

    @property
    def total(self):
        """Best (max) or total (sum) log-prob of the lattice."""
        return float(self.beta[0])


def _better(score, words, best_score, best_words):
    """Higher log-prob wins; near-ties go to the lexicographically smaller words."""
    if best_words is None:
        return True
    if not costs_tie(score, best_score):
        return score > best_score
    return words < best_words


def _forward_max(lat):
    n = lat.num_states
    alpha = [-math.inf] * n
    prefix = [None] * n
    pred = [None] * n
    alpha[lat.start] = 0.0
    prefix[lat.start] = ()
    for s in range(n):
        if prefix[s] is None:
            continue
        for i, arc in enumerate(lat.arcs[s]):
            t = arc.next_state
            score = alpha[s] - arc.cost
            words = prefix[s] + (arc.word,)
            if _better(score, words, alpha[t], prefix[t]):
                alpha[t] = score
                prefix[t] = words
                pred[t] = (s, ArcRef(s, i))
    return alpha, pred


def _backward_max(lat):
    n = lat.num_states
    beta = [-math.inf] * n
    suffix = [None] * n
    succ = [None] * n
    for s in range(n - 1, -1, -1):
        if lat.is_final(s):
            beta[s] = -lat.final_costs[s]
            suffix[s] = ()
        for i, arc in enumerate(lat.arcs[s]):
            t = arc.next_state
            if suffix[t] is None:
                continue
            score = -arc.cost + beta[t]
            words = (arc.word,) + suffix[t]
            if _better(score, words, beta[s], suffix[s]):
                beta[s] = score
                suffix[s] = words
                succ[s] = (t, ArcRef(s, i))
    return beta, succ


def _forward_sum(lat):
    alpha = np.full(lat.num_states, -np.inf)
    alpha[lat.start] = 0.0
    for s, out in enumerate(lat.arcs):
        for arc in out:
            t = arc.next_state
            alpha[t] = np.logaddexp(alpha[t], alpha[s] - arc.cost)
    return alpha


def _backward_sum(lat):
    beta = np.full(lat.num_states, -np.inf)
    for s in range(lat.num_states - 1, -1, -1):
        acc = -lat.final_costs[s] if lat.is_final(s) else -np.inf
        for arc in lat.arcs[s]:
            acc = np.logaddexp(acc, -arc.cost + beta[arc.next_state])
        beta[s] = acc
    return beta


def forward_backward(lat, semiring=Semiring.MAX):
    """
    Fill alpha/beta for every state. In the max semiring the best
    predecessor and successor of each state are recorded, with near-ties
    broken by lexicographic word sequence.
    """
    semiring = parse_semiring(semiring)
    if semiring is Semiring.MAX:
        alpha, pred = _forward_max(lat)
        beta, succ = _backward_max(lat)
        return ForwardBackwardTable(np.array(alpha), np.array(beta), tuple(pred),
                                    tuple(succ), semiring)
    none = (None,) * lat.num_states
    return ForwardBackwardTable(_forward_sum(lat), _backward_sum(lat), none, none, semiring)


def arc_posteriors(lat, semiring=Semiring.SUM, table=None):
    """
    Posterior of every arc e = (s -> t):
        exp(alpha[s] + logp(e) + beta[t] - beta[start])
    Returns {ArcRef: posterior}. In the max semiring this is the best path
    through e relative to the overall best path.
    """
    if table is None:
        table = forward_backward(lat, semiring)
    total = table.beta[lat.start]
    posts = {}
    for s, out in enumerate(lat.arcs):
        for i, arc in enumerate(out):
            log_post = table.alpha[s] - arc.cost + table.beta[arc.next_state] - total
            posts[ArcRef(s, i)] = float(np.exp(min(0.0, log_post)))
    return posts


def _prefix_refs(table, state):
    refs = []
    while table.best_pred[state] is not None:
        prev, ref = table.best_pred[state]
        refs.append(ref)
        state = prev
    refs.reverse()
    return refs


def _suffix_refs(table, state):
    refs = []
    while table.best_succ[state] is not None:
        state, ref = table.best_succ[state]
        refs.append(ref)
    return refs


def best_path_through(lat, table, ref):
    """
    Best complete path using arc ref: best prefix into its source, the arc,
    best suffix out of its destination. ref.index == FINAL asks for the
    best path that terminates at ref.state.
    """
    if table.semiring is not Semiring.MAX:
        raise ConfigError("best paths need a max-semiring table")
    refs = _prefix_refs(table, ref.state)
    if ref.index != FINAL:
        refs.append(ref)
        refs.extend(_suffix_refs(table, lat.arc(ref).next_state))
    return make_path(lat, refs)


def best_path(lat, table=None):
    """Minimum-cost complete path; near-ties go to the smaller word sequence."""
    if table is None:
        table = forward_backward(lat, Semiring.MAX)
    return make_path(lat, _suffix_refs(table, lat.start))
