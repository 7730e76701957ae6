# expand.py
# Lattice expansion: posterior-based state splitting and the n-gram
# history baseline it is compared against.

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from config import DEFAULT_EPSILON, DEFAULT_POSTERIOR_SEMIRING
from errors import ConfigError
from lattice import build_lattice
from viterbi import Semiring, forward_backward, parse_semiring

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpansionConfig:
    epsilon: float = DEFAULT_EPSILON
    posterior_semiring: Semiring = Semiring(DEFAULT_POSTERIOR_SEMIRING)

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError(f"epsilon must be in (0, 1), got {self.epsilon}")
        object.__setattr__(self, "posterior_semiring", parse_semiring(self.posterior_semiring))


@dataclass
class StatePairMap:
    """
    pairs:  (input state, output state) -> output state used as arc source
    shared: input state -> its single shared (non-fresh) output copy
    """
    pairs: dict = field(default_factory=dict)
    shared: dict = field(default_factory=dict)


def expand_posterior(lat, cfg):
    """
    Split arcs off their destination state when the arc posterior,
    computed with the forward log-prob of the *output* history, exceeds
    cfg.epsilon. Other arcs go to the input state's one shared copy.

    The work queue is a heap on (input state, output state), not a FIFO:
    pending pairs are dequeued in input topological order, and in
    creation order within one input state. A plain FIFO can pop a shared
    copy while arcs into it are still waiting in the queue, and would
    then expand it with a partial forward log-prob. With the heap every
    incoming contribution has arrived first. Every output state copies
    all outgoing arcs of its input state, which keeps the word/cost
    language unchanged.
    """
    table = forward_backward(lat, cfg.posterior_semiring)
    beta = table.beta
    total = beta[lat.start]
    accumulate = np.logaddexp if cfg.posterior_semiring is Semiring.SUM else max

    alpha = [0.0]
    state_map = StatePairMap()
    state_map.pairs[(lat.start, 0)] = 0
    queue = [(lat.start, 0)]
    arcs = []
    finals = {}

    def add_state(s_in, a_e):
        s_out = len(alpha)
        alpha.append(a_e)
        state_map.pairs[(s_in, s_out)] = s_out
        heapq.heappush(queue, (s_in, s_out))
        return s_out

    while queue:
        s_in, s_out = heapq.heappop(queue)
        if lat.is_final(s_in):
            finals[s_out] = lat.final_costs[s_in]
        for arc in lat.arcs[s_in]:
            t_in = arc.next_state
            a_e = alpha[s_out] - arc.cost
            post = math.exp(min(0.0, a_e + beta[t_in] - total))
            if post > cfg.epsilon:
                t_out = add_state(t_in, a_e)
            elif t_in not in state_map.shared:
                t_out = add_state(t_in, a_e)
                state_map.shared[t_in] = t_out
            else:
                t_out = state_map.shared[t_in]
                alpha[t_out] = float(accumulate(alpha[t_out], a_e))
            arcs.append((state_map.pairs[(s_in, s_out)], replace(arc, next_state=t_out)))

    out = build_lattice(arcs, finals, start=0, utt_id=lat.utt_id, report=False)
    logger.debug("%s: posterior expansion eps=%s: %d -> %d states", lat.utt_id,
                 cfg.epsilon, lat.num_states, out.num_states)
    return out


def expand_ngram(lat, order):
    """
    n-gram history expansion: one output state per (input state, last
    order-1 words) reachable from the start state.
    """
    if order < 2:
        raise ConfigError(f"n-gram order must be >= 2, got {order}")
    keep = order - 1

    ids = {(lat.start, ()): 0}
    queue = deque([(lat.start, ())])
    arcs = []
    finals = {}
    while queue:
        state, history = queue.popleft()
        src = ids[(state, history)]
        if lat.is_final(state):
            finals[src] = lat.final_costs[state]
        for arc in lat.arcs[state]:
            key = (arc.next_state, (history + (arc.word,))[-keep:])
            if key not in ids:
                ids[key] = len(ids)
                queue.append(key)
            arcs.append((src, replace(arc, next_state=ids[key])))

    out = build_lattice(arcs, finals, start=0, utt_id=lat.utt_id, report=False)
    logger.debug("%s: %d-gram expansion: %d -> %d states", lat.utt_id, order,
                 lat.num_states, out.num_states)
    return out
