# conftest.py
# Shared lattice fixtures for the test suite

import itertools
import math

import pytest

from cover import coverage_items, path_items
from lattice import Arc, build_lattice, enumerate_paths, parse_lattice
from pipeline import GeneratorProfile, generate_lattices

P75 = -math.log(0.75)
P25 = -math.log(0.25)

CHAIN = """\
0 1 a 1.0,2.0
1 2 b 0.5,0.5
2 3 c 1.0,1.0
3 0.0
"""

# branch posteriors 0.75 / 0.25, both branches end in word c
DIAMOND = f"""\
0 1 a {P75!r},0.0
0 2 b {P25!r},0.0
1 3 c 0.0,0.0
2 3 c 0.0,0.0
3 0.0
"""

# path costs 1.0 and 5.0
COST_DIAMOND = """\
0 1 a 1.0,0.0
0 2 b 5.0,0.0
1 3 c 0.0,0.0
2 3 d 0.0,0.0
3 0.0
"""

# two branch words merging into state 3, shared suffix z
MERGE_DIAMOND = """\
0 1 a 1.0,0.5
0 2 b 2.5,0.5
1 3 x 1.0,0.5
2 3 y 0.5,0.5
3 4 z 1.0,0.5
4 0.0
"""

DOUBLE_DIAMOND = """\
0 1 a 1.0,0.0
0 2 b 2.0,0.0
1 3 c 1.0,0.0
2 3 d 1.0,0.0
3 4 e 1.0,0.0
3 5 f 3.0,0.0
4 6 g 1.0,0.0
5 6 h 1.0,0.0
6 0.0
"""

# leaves 2, 3, 4
PREFIX_TREE = """\
0 1 a 1.0,0.0
0 2 b 2.0,0.0
1 3 c 1.0,0.0
1 4 d 2.0,0.0
2 0.0
3 0.0
4 0.0
"""

# arcs merge at 4 before the three-way branch at 5
MERGE_THEN_BRANCH = """\
0 1 a 1.0,0.0
1 2 b 1.0,0.0
1 3 c 2.0,0.0
2 4 d 1.0,0.0
3 4 e 1.0,0.0
4 5 f 1.0,0.0
5 6 g 1.0,0.0
5 7 h 2.0,0.0
5 8 i 3.0,0.0
6 0.0
7 0.0
8 0.0
"""

SMALL_PROFILE = GeneratorProfile(num_states=6, branching=3, vocab_size=12,
                                 cost_noise=1.0, max_span=3)


@pytest.fixture
def chain():
    return parse_lattice(CHAIN)


@pytest.fixture
def diamond():
    return parse_lattice(DIAMOND)


@pytest.fixture
def cost_diamond():
    return parse_lattice(COST_DIAMOND)


@pytest.fixture
def merge_diamond():
    return parse_lattice(MERGE_DIAMOND)


@pytest.fixture
def double_diamond():
    return parse_lattice(DOUBLE_DIAMOND)


@pytest.fixture
def prefix_tree():
    return parse_lattice(PREFIX_TREE)


@pytest.fixture
def merge_then_branch():
    return parse_lattice(MERGE_THEN_BRANCH)


@pytest.fixture
def binary_chain():
    """Depth-10 lattice with two arcs per step: 1024 paths."""
    arcs = []
    for s in range(10):
        arcs.append((s, Arc("x", 1.0, 0.0, s + 1)))
        arcs.append((s, Arc("y", 1.5, 0.0, s + 1)))
    return build_lattice(arcs, {10: 0.0})


@pytest.fixture
def small_lattices():
    return generate_lattices(11, 20, SMALL_PROFILE)


@pytest.fixture
def brute_force_min_cover():
    """Smallest number of complete paths covering every arc and final."""
    def count(lat):
        covers = [set(path_items(p)) for p in enumerate_paths(lat)]
        items = set(coverage_items(lat))
        for k in range(1, len(covers) + 1):
            for combo in itertools.combinations(covers, k):
                if set().union(*combo) >= items:
                    return k
        return None
    return count


def path_multiset(lat):
    return sorted((p.words, round(p.cost, 6)) for p in enumerate_paths(lat, limit=100000))


@pytest.fixture
def multiset():
    return path_multiset
