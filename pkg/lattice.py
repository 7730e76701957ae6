# lattice.py
# Lattice data model, text archive format, structural validation,
# trimming, beam pruning and path enumeration.
#
# A lattice is an acyclic, word-deterministic acceptor. States are dense
# integers renumbered in topological order with the start state at 0.
# Costs are negative natural-log probabilities (nats); every arc cost is
# split into a graph (LM) part and an acoustic part.

import functools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import networkx as nx

from config import (
    DEFAULT_NUM_FRAMES, DEFAULT_PATH_LIMIT, EPS, STRUCTURAL_TOKENS,
    TIE_TOLERANCE,
)
from errors import (
    ConfigError, CycleError, LatticeError, NondeterminismError, ParseError,
    TooManyPathsError, UnreachableStateError,
)

logger = logging.getLogger(__name__)

# ArcRef.index of a final termination (the virtual "end of sentence" step
# out of a final state). Real arcs have index >= 0.
FINAL = -1


class ArcRef(NamedTuple):
    """Stable arc id: (source state, position in its outgoing list)."""
    state: int
    index: int


@dataclass(frozen=True)
class Arc:
    word: str
    graph_cost: float
    acoustic_cost: float
    next_state: int
    num_frames: int = DEFAULT_NUM_FRAMES

    @property
    def cost(self):
        return self.graph_cost + self.acoustic_cost


@dataclass(frozen=True)
class Lattice:
    # arcs[s] is the ordered tuple of outgoing arcs of state s
    arcs: tuple
    # state -> final cost; treated as read-only
    final_costs: dict
    utt_id: str = ""
    start: int = 0

    @property
    def num_states(self):
        return len(self.arcs)

    @property
    def num_arcs(self):
        return sum(len(out) for out in self.arcs)

    def arc(self, ref):
        return self.arcs[ref.state][ref.index]

    def arc_refs(self):
        """All arc ids in state order, then outgoing order."""
        return [ArcRef(s, i) for s, out in enumerate(self.arcs) for i in range(len(out))]

    def is_final(self, state):
        return state in self.final_costs

    def in_degrees(self):
        deg = [0] * self.num_states
        for out in self.arcs:
            for arc in out:
                deg[arc.next_state] += 1
        return deg


@dataclass(frozen=True)
class Path:
    arcs: tuple          # ArcRef sequence from start to final_state
    words: tuple         # one word per arc, structural tokens included
    cost: float          # graph + acoustic + final cost
    graph_cost: float    # graph part, final cost included
    acoustic_cost: float
    final_state: int

    @property
    def tokens(self):
        """Words an LM sees: structural tokens removed."""
        return tuple(w for w in self.words if w not in STRUCTURAL_TOKENS)


# ============================================
# TIE-BREAKING
# ============================================

def costs_tie(a, b):
    return abs(a - b) <= TIE_TOLERANCE * max(1.0, abs(a), abs(b))


def compare_paths(p, q):
    """Ascending cost, then lexicographic word sequence, then final state."""
    if not costs_tie(p.cost, q.cost):
        return -1 if p.cost < q.cost else 1
    if p.words != q.words:
        return -1 if p.words < q.words else 1
    return (p.final_state > q.final_state) - (p.final_state < q.final_state)


path_sort_key = functools.cmp_to_key(compare_paths)


# ============================================
# CONSTRUCTION / VALIDATION
# ============================================

def build_lattice(arcs, final_costs, start=0, utt_id="", strict=False, report=True):
    """
    Validate raw (src, Arc) pairs and return a normalized Lattice.

    Checks word-determinism and acyclicity, trims states that are not on
    any start-to-final path and renumbers states in topological order so
    the start state becomes 0. Arc order within a state is preserved.

    report: log (or with strict=True, raise) when states get trimmed.
    Pruning and expansion trim on purpose and pass report=False.
    """
    seen = set()
    for src, arc in arcs:
        if (src, arc.word) in seen:
            raise NondeterminismError(
                f"state {src} has more than one outgoing arc labelled '{arc.word}'")
        seen.add((src, arc.word))

    graph = nx.MultiDiGraph()
    graph.add_node(start)
    graph.add_nodes_from(final_costs)
    for src, arc in arcs:
        graph.add_edge(src, arc.next_state)

    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        states = " -> ".join(str(u) for u, *_ in cycle)
        raise CycleError(f"lattice has a cycle through states {states}")

    reachable = nx.descendants(graph, start) | {start}
    coaccessible = set(final_costs)
    for f in final_costs:
        coaccessible |= nx.ancestors(graph, f)
    keep = reachable & coaccessible

    if start not in keep:
        raise LatticeError("no path from the start state to a final state")

    dropped = set(graph.nodes) - keep
    if dropped and report:
        msg = (f"{len(dropped)} state(s) not on any start-to-final path: "
               f"{sorted(dropped)[:10]}")
        if strict:
            raise UnreachableStateError(msg)
        logger.warning("%s%s; trimmed", f"{utt_id}: " if utt_id else "", msg)

    order = list(nx.lexicographical_topological_sort(graph.subgraph(keep)))
    new_id = {old: i for i, old in enumerate(order)}

    out = [[] for _ in order]
    for src, arc in arcs:
        if src in keep and arc.next_state in keep:
            out[new_id[src]].append(Arc(
                arc.word, float(arc.graph_cost), float(arc.acoustic_cost),
                new_id[arc.next_state], int(arc.num_frames)))
    finals = {new_id[s]: float(c) for s, c in sorted(final_costs.items()) if s in keep}

    return Lattice(tuple(tuple(a) for a in out), finals, utt_id=utt_id, start=0)


# ============================================
# TEXT FORMAT
# ============================================
# arc line:   SRC DST WORD GRAPH_COST,ACOUSTIC_COST[,NUM_FRAMES]
# final line: STATE [FINAL_COST]
# '# ...' starts a comment (whole line or trailing); 'UTT <id>' names the
# next lattice; a blank line separates lattices in an archive.

def _parse_state(tok, line_no):
    try:
        s = int(tok)
    except ValueError:
        raise ParseError(f"bad state id '{tok}'", line_no) from None
    if s < 0:
        raise ParseError(f"negative state id {s}", line_no)
    return s


def _parse_cost(tok, line_no):
    try:
        c = float(tok)
    except ValueError:
        raise ParseError(f"bad cost '{tok}'", line_no) from None
    if not math.isfinite(c):
        raise ParseError(f"cost must be finite, got '{tok}'", line_no)
    return c


def _strip_comment(line):
    tokens = []
    for tok in line.split():
        if tok.startswith("#"):
            break
        tokens.append(tok)
    return tokens


def _split_blocks(text):
    """Yield (utt_id, [(line_no, tokens), ...]) per lattice in the document."""
    utt_id = ""
    block = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            if block:
                yield utt_id, block
                utt_id, block = "", []
            continue
        tokens = _strip_comment(raw)
        if not tokens:
            continue
        if tokens[0] == "UTT":
            if len(tokens) != 2:
                raise ParseError("UTT header needs exactly one id", line_no)
            if block:
                yield utt_id, block
                block = []
            utt_id = tokens[1]
            continue
        block.append((line_no, tokens))
    if block or utt_id:
        yield utt_id, block


def _parse_block(utt_id, lines, strict):
    arcs = []          # (src, Arc, line_no)
    finals = {}
    start = None

    for line_no, tokens in lines:
        if len(tokens) == 4:
            src = _parse_state(tokens[0], line_no)
            dst = _parse_state(tokens[1], line_no)
            fields = tokens[3].split(",")
            if len(fields) not in (2, 3):
                raise ParseError(
                    f"weight must be GRAPH,ACOUSTIC[,FRAMES], got '{tokens[3]}'", line_no)
            graph_cost = _parse_cost(fields[0], line_no)
            acoustic_cost = _parse_cost(fields[1], line_no)
            num_frames = DEFAULT_NUM_FRAMES
            if len(fields) == 3:
                try:
                    num_frames = int(fields[2])
                except ValueError:
                    raise ParseError(f"bad frame count '{fields[2]}'", line_no) from None
                if num_frames < 0:
                    raise ParseError("frame count must be >= 0", line_no)
            if start is None:
                start = src
            arcs.append((src, Arc(tokens[2], graph_cost, acoustic_cost, dst, num_frames), line_no))
        elif len(tokens) in (1, 2):
            state = _parse_state(tokens[0], line_no)
            if state in finals:
                raise ParseError(f"state {state} listed as final twice", line_no)
            finals[state] = _parse_cost(tokens[1], line_no) if len(tokens) == 2 else 0.0
        else:
            raise ParseError(f"expected an arc or final line, got {len(tokens)} fields", line_no)

    if start is None:
        if not finals:
            raise ParseError("no start state")
        start = next(iter(finals))

    arcs = _fold_epsilons(arcs, finals)

    try:
        return build_lattice([(s, a) for s, a, _ in arcs], finals, start=start,
                             utt_id=utt_id, strict=strict)
    except NondeterminismError as e:
        # point at the offending line
        seen = set()
        for src, arc, line_no in arcs:
            if (src, arc.word) in seen:
                raise NondeterminismError(f"line {line_no}: {e}") from None
            seen.add((src, arc.word))
        raise


def _fold_epsilons(arcs, finals):
    """
    Fold cost-only <eps> transitions into final costs.

    An <eps> arc is legal only when it ends in a final state without
    outgoing arcs and its source is not itself final. Its cost plus the
    destination's final cost becomes the source's final cost.
    """
    has_out = {src for src, arc, _ in arcs if arc.word != EPS}
    kept = []
    folded_into = set()
    for src, arc, line_no in arcs:
        if arc.word != EPS:
            kept.append((src, arc, line_no))
            continue
        dst = arc.next_state
        if dst not in finals or dst in has_out or any(
                s == dst for s, a, _ in arcs if a.word == EPS):
            raise ParseError(
                "<eps> arcs are only allowed as cost-only transitions into a final state",
                line_no)
        if src in finals:
            raise ParseError(f"state {src} is already final; cannot fold <eps> arc", line_no)
        finals[src] = arc.cost + finals[dst]
        folded_into.add(dst)

    # a final reached only through folded <eps> arcs is no longer referenced
    targets = {arc.next_state for _, arc, _ in kept}
    for dst in folded_into:
        if dst not in targets:
            del finals[dst]
    return kept


def parse_archive(text, strict=False):
    """Parse a multi-lattice archive into a list of Lattices (document order)."""
    lattices = []
    for utt_id, lines in _split_blocks(text):
        lattices.append(_parse_block(utt_id, lines, strict))
    return lattices


def parse_lattice(text, strict=False):
    """Parse a document holding exactly one lattice."""
    blocks = list(_split_blocks(text))
    if not blocks:
        raise ParseError("no start state")
    if len(blocks) > 1:
        raise ParseError(f"expected one lattice, found {len(blocks)}")
    utt_id, lines = blocks[0]
    return _parse_block(utt_id, lines, strict)


def _fmt(x):
    return repr(float(x))


def serialize_lattice(lat, posteriors=None):
    """
    Render one lattice as text (UTT header included when it has an id).

    posteriors: optional {ArcRef: value}; each arc line then carries a
    trailing '# posterior=...' comment, which the parser ignores.
    """
    lines = []
    if lat.utt_id:
        lines.append(f"UTT {lat.utt_id}")
    for s, out in enumerate(lat.arcs):
        for i, arc in enumerate(out):
            weight = f"{_fmt(arc.graph_cost)},{_fmt(arc.acoustic_cost)}"
            if arc.num_frames != DEFAULT_NUM_FRAMES:
                weight += f",{arc.num_frames}"
            line = f"{s} {arc.next_state} {arc.word} {weight}"
            if posteriors is not None:
                line += f" # posterior={posteriors[ArcRef(s, i)]:.6f}"
            lines.append(line)
    for s in sorted(lat.final_costs):
        lines.append(f"{s} {_fmt(lat.final_costs[s])}")
    return "\n".join(lines) + "\n"


def serialize_archive(lattices, posteriors=None):
    """posteriors: optional list aligned with lattices."""
    parts = []
    for k, lat in enumerate(lattices):
        parts.append(serialize_lattice(lat, posteriors[k] if posteriors is not None else None))
    return "\n".join(parts)


# ============================================
# COSTS AND PATHS
# ============================================

def forward_costs(lat):
    """Best (minimum) cost from the start state to every state."""
    fwd = [math.inf] * lat.num_states
    fwd[lat.start] = 0.0
    for s, out in enumerate(lat.arcs):
        if fwd[s] == math.inf:
            continue
        for arc in out:
            c = fwd[s] + arc.cost
            if c < fwd[arc.next_state]:
                fwd[arc.next_state] = c
    return fwd


def backward_costs(lat):
    """Best (minimum) cost from every state to a final state, final cost included."""
    bwd = [math.inf] * lat.num_states
    for s in range(lat.num_states - 1, -1, -1):
        best = lat.final_costs.get(s, math.inf)
        for arc in lat.arcs[s]:
            best = min(best, arc.cost + bwd[arc.next_state])
        bwd[s] = best
    return bwd


def best_cost(lat):
    return backward_costs(lat)[lat.start]


def count_paths(lat):
    counts = [0] * lat.num_states
    for s in range(lat.num_states - 1, -1, -1):
        counts[s] = (1 if lat.is_final(s) else 0) + sum(counts[a.next_state] for a in lat.arcs[s])
    return counts[lat.start]


def make_path(lat, refs):
    """Build a Path from arc ids, summing costs left to right."""
    state = lat.start
    cost = graph = acoustic = 0.0
    words = []
    for ref in refs:
        if ref.state != state:
            raise LatticeError(f"arc {tuple(ref)} does not leave state {state}")
        arc = lat.arc(ref)
        cost = cost + arc.cost
        graph += arc.graph_cost
        acoustic += arc.acoustic_cost
        words.append(arc.word)
        state = arc.next_state
    if state not in lat.final_costs:
        raise LatticeError(f"path ends in non-final state {state}")
    final = lat.final_costs[state]
    return Path(tuple(ArcRef(*r) for r in refs), tuple(words), cost + final,
                graph + final, acoustic, state)


def find_path(lat, words):
    """Follow a word sequence from the start state; None if it is not a complete path."""
    state = lat.start
    refs = []
    for w in words:
        for i, arc in enumerate(lat.arcs[state]):
            if arc.word == w:
                refs.append(ArcRef(state, i))
                state = arc.next_state
                break
        else:
            return None
    if not lat.is_final(state):
        return None
    return make_path(lat, refs)


def enumerate_paths(lat, limit=DEFAULT_PATH_LIMIT):
    """All complete paths sorted by cost, then word sequence."""
    if limit < 1:
        raise ConfigError(f"path limit must be positive, got {limit}")
    total = count_paths(lat)
    if total > limit:
        raise TooManyPathsError(total, limit)

    paths = []
    stack = [(lat.start, ())]
    while stack:
        state, refs = stack.pop()
        if lat.is_final(state):
            paths.append(make_path(lat, refs))
        for i, arc in enumerate(lat.arcs[state]):
            stack.append((arc.next_state, refs + (ArcRef(state, i),)))
    paths.sort(key=path_sort_key)
    return paths


# ============================================
# PRUNING
# ============================================

def prune(lat, beam):
    """
    Beam pruning: drop every arc (and final termination) whose best
    complete path costs more than best_cost + beam, then trim.

    The best path always survives. A path made only of surviving arcs
    can itself be outside the beam when it combines arcs from different
    good paths; only arc-level survival is decided here.
    """
    if beam < 0 or math.isnan(beam):
        raise ConfigError(f"beam must be >= 0, got {beam}")
    fwd = forward_costs(lat)
    bwd = backward_costs(lat)
    threshold = bwd[lat.start] + beam
    slack = TIE_TOLERANCE * max(1.0, abs(threshold)) if math.isfinite(threshold) else 0.0

    arcs = []
    for s, out in enumerate(lat.arcs):
        for arc in out:
            if fwd[s] + arc.cost + bwd[arc.next_state] <= threshold + slack:
                arcs.append((s, arc))
    finals = {s: c for s, c in lat.final_costs.items() if fwd[s] + c <= threshold + slack}

    pruned = build_lattice(arcs, finals, start=lat.start, utt_id=lat.utt_id, report=False)
    logger.debug("%s: prune beam=%s kept %d/%d arcs", lat.utt_id, beam,
                 pruned.num_arcs, lat.num_arcs)
    return pruned


# ============================================
# STRUCTURE HELPERS
# ============================================

def total_frames(lat):
    """Utterance length in frames: the largest frame sum over complete paths."""
    longest = [-math.inf] * lat.num_states
    for s in range(lat.num_states - 1, -1, -1):
        best = 0 if lat.is_final(s) else -math.inf
        for arc in lat.arcs[s]:
            best = max(best, arc.num_frames + longest[arc.next_state])
        longest[s] = best
    return int(longest[lat.start])


def arc_frames(lat):
    return sum(arc.num_frames for out in lat.arcs for arc in out)


def lattice_depth(lat):
    """Average number of arcs crossing a frame."""
    frames = total_frames(lat)
    return arc_frames(lat) / frames if frames else 0.0


def canonical_form(lat):
    """
    Relabel states by depth-first discovery from the start state, visiting
    arcs in word order. Two deterministic lattices are isomorphic exactly
    when their canonical forms match.

    Returns a list with one entry per state:
    (final cost or None, ((word, graph, acoustic, frames, next id), ...)).
    """
    new_id = {lat.start: 0}
    order = [lat.start]
    stack = [lat.start]
    while stack:
        s = stack.pop()
        for arc in sorted(lat.arcs[s], key=lambda a: a.word, reverse=True):
            if arc.next_state not in new_id:
                new_id[arc.next_state] = len(order)
                order.append(arc.next_state)
                stack.append(arc.next_state)
    form = []
    for s in order:
        out = tuple(sorted(
            (a.word, a.graph_cost, a.acoustic_cost, a.num_frames, new_id[a.next_state])
            for a in lat.arcs[s]))
        form.append((lat.final_costs.get(s), out))
    return form


def isomorphic(a, b, tol=1e-9):
    """Structure must match exactly; costs to within tol."""
    fa, fb = canonical_form(a), canonical_form(b)
    if len(fa) != len(fb):
        return False

    def close(x, y):
        if x is None or y is None:
            return x is y
        return math.isclose(x, y, rel_tol=tol, abs_tol=tol)

    for (final_a, out_a), (final_b, out_b) in zip(fa, fb):
        if not close(final_a, final_b) or len(out_a) != len(out_b):
            return False
        for (wa, ga, aa, na, da), (wb, gb, ab, nb, db) in zip(out_a, out_b):
            if (wa, na, da) != (wb, nb, db) or not close(ga, gb) or not close(aa, ab):
                return False
    return True
