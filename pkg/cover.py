# cover.py
# Constrained path cover: a small set of paths such that every arc (and
# every final termination) lies on at least one of them, and each path is
# the best path through some arc it covers.

import logging
from collections import Counter
from dataclasses import dataclass

import networkx as nx

from lattice import FINAL, ArcRef, path_sort_key
from viterbi import Semiring, best_path_through, forward_backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoverPath:
    path: object            # lattice.Path
    cost: float
    covered_arcs: frozenset  # ArcRefs this path is the best path through


@dataclass(frozen=True)
class PathCover:
    paths: tuple             # CoverPath, ascending cost; position = path id
    arc_to_paths: dict       # ArcRef -> ((path id, arc position), ...)
    bound: int               # min_cover_size() of the lattice
    utt_id: str = ""

    def __len__(self):
        return len(self.paths)


def coverage_items(lat):
    """Every arc plus one FINAL item per final state, in state order."""
    items = []
    for s, out in enumerate(lat.arcs):
        items.extend(ArcRef(s, i) for i in range(len(out)))
        if lat.is_final(s):
            items.append(ArcRef(s, FINAL))
    return items


def path_items(path):
    return path.arcs + (ArcRef(path.final_state, FINAL),)


def min_cover_size(lat):
    """
    Degree-excess count of the paths needed to cover every arc:
    sum over states of max(out-degree - in-degree, 0), where ending at a
    final state counts as one more outgoing arc and the start state has
    no incoming arcs.

    Equals the true minimum on chains, trees and diamonds. When arcs merge
    before a later branch it can overcount; it never undercounts (see
    exact_min_cover_size).
    """
    in_deg = lat.in_degrees()
    in_deg[lat.start] = 0
    total = 0
    for s, out in enumerate(lat.arcs):
        total += max(len(out) + (1 if lat.is_final(s) else 0) - in_deg[s], 0)
    return total


def exact_min_cover_size(lat):
    """
    True minimum number of start-to-final paths covering every arc and
    final termination, as a minimum flow: every arc carries at least one
    unit and each unit leaving the start state is one path.

    Every edge is capped at the number of coverage items, which no minimum
    cover exceeds; uncapped edges make network simplex report an unbounded
    cycle.
    """
    sink = "sink"
    lower = Counter()
    for s, out in enumerate(lat.arcs):
        for arc in out:
            lower[(s, arc.next_state)] += 1
        if lat.is_final(s):
            lower[(s, sink)] += 1

    cap = sum(lower.values())
    graph = nx.DiGraph()
    graph.add_nodes_from(range(lat.num_states), demand=0)
    graph.add_node(sink, demand=0)
    for (u, v), lb in lower.items():
        graph.add_edge(u, v, weight=0, capacity=cap)
        graph.nodes[u]["demand"] += lb
        graph.nodes[v]["demand"] -= lb
    graph.add_edge(sink, lat.start, weight=1, capacity=cap)
    return int(nx.min_cost_flow_cost(graph))


def constrained_path_cover(lat):
    table = forward_backward(lat, Semiring.MAX)

    candidates = []      # [path, set of items]
    by_arcs = {}         # path arc tuple -> candidate index
    for item in coverage_items(lat):
        path = best_path_through(lat, table, item)
        k = by_arcs.get(path.arcs)
        if k is None:
            k = by_arcs[path.arcs] = len(candidates)
            candidates.append((path, set()))
        candidates[k][1].add(item)

    candidates.sort(key=lambda c: path_sort_key(c[0]))

    # drop redundant paths, worst first, while every item stays covered
    counts = Counter(item for path, _ in candidates for item in path_items(path))
    kept = []
    for path, covered in reversed(candidates):
        items = path_items(path)
        if all(counts[item] > 1 for item in items):
            counts.subtract(items)
            continue
        kept.append((path, covered))
    kept.reverse()

    paths = tuple(CoverPath(path, path.cost, frozenset(covered)) for path, covered in kept)
    arc_to_paths = {}
    for pid, cp in enumerate(paths):
        for pos, item in enumerate(path_items(cp.path)):
            arc_to_paths.setdefault(item, []).append((pid, pos))

    cover = PathCover(paths, {k: tuple(v) for k, v in arc_to_paths.items()},
                      min_cover_size(lat), lat.utt_id)
    logger.debug("%s: cover of %d paths (bound %d, %d candidates)", lat.utt_id,
                 len(cover), cover.bound, len(candidates))
    return cover


def cover_to_hypotheses(cover):
    """(path id, LM tokens) per cover path; structural tokens removed."""
    return [(pid, cp.path.tokens) for pid, cp in enumerate(cover.paths)]


def format_hypotheses(covers):
    """
    Hypothesis list for offline scoring, one block per utterance:
        UTT <id>
        PATH <path id> <cost> <token> <token> ...
    """
    lines = []
    for cover in covers:
        lines.append(f"UTT {cover.utt_id}")
        for pid, cp in enumerate(cover.paths):
            lines.append(" ".join(["PATH", str(pid), repr(float(cp.cost)), *cp.path.tokens]))
    return "\n".join(lines) + "\n" if lines else ""
