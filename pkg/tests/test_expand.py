import pytest

from errors import ConfigError
from expand import ExpansionConfig, expand_ngram, expand_posterior
from lattice import count_paths, isomorphic, parse_lattice
from viterbi import Semiring, arc_posteriors

FULL = 1e-300


def is_prefix_tree(lat):
    return all(d <= 1 for d in lat.in_degrees())


def test_config_rejects_bad_epsilon():
    for eps in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ConfigError):
            ExpansionConfig(eps)
    assert ExpansionConfig(0.3, "max").posterior_semiring is Semiring.MAX


def test_high_epsilon_leaves_lattice_unchanged(double_diamond):
    assert max(arc_posteriors(double_diamond).values()) < 0.999
    out = expand_posterior(double_diamond, ExpansionConfig(0.999))
    assert isomorphic(out, double_diamond)


def test_tiny_epsilon_gives_prefix_tree(double_diamond, multiset):
    out = expand_posterior(double_diamond, ExpansionConfig(FULL))
    assert is_prefix_tree(out)
    assert out.num_states == 13
    assert multiset(out) == multiset(double_diamond)


def test_diamond_copies_only_the_likely_branch(diamond, multiset):
    out = expand_posterior(diamond, ExpansionConfig(0.5))
    # start, one copy per branch state, and the merge state split in two:
    # the 0.75 branch gets a fresh copy, the 0.25 branch the shared one
    assert out.num_states == 5
    assert len(out.final_costs) == 2
    assert is_prefix_tree(out)
    assert multiset(out) == multiset(diamond)


def test_shared_copy_collects_unlikely_arcs(merge_diamond, multiset):
    posts = arc_posteriors(merge_diamond)
    assert max(posts.values()) == pytest.approx(1.0)
    out = expand_posterior(merge_diamond, ExpansionConfig(0.5))
    # the likely a-x-z path is copied fresh, b-y-z runs through shared copies
    assert out.num_states == 7
    assert is_prefix_tree(out)
    assert multiset(out) == multiset(merge_diamond)


def test_likely_arcs_get_their_own_destination(small_lattices, multiset):
    for lat in small_lattices:
        for eps in (0.9, 0.5, 0.1):
            out = expand_posterior(lat, ExpansionConfig(eps))
            assert multiset(out) == multiset(lat)
            in_deg = out.in_degrees()
            for ref, post in arc_posteriors(out).items():
                if post > eps:
                    assert in_deg[out.arc(ref).next_state] == 1


def test_expansion_size_between_input_and_prefix_tree(small_lattices):
    for lat in small_lattices:
        tree = expand_posterior(lat, ExpansionConfig(FULL)).num_states
        for eps in (0.9, 0.5, 0.1, 0.01):
            size = expand_posterior(lat, ExpansionConfig(eps)).num_states
            assert lat.num_states <= size <= tree


def test_max_semiring_expansion_preserves_paths(small_lattices, multiset):
    cfg = ExpansionConfig(0.2, Semiring.MAX)
    for lat in small_lattices:
        assert multiset(expand_posterior(lat, cfg)) == multiset(lat)


def test_ngram_rejects_low_order(chain):
    with pytest.raises(ConfigError):
        expand_ngram(chain, 1)


def test_ngram_order_two_keeps_unique_histories(diamond, chain):
    assert isomorphic(expand_ngram(diamond, 2), diamond)
    assert isomorphic(expand_ngram(chain, 2), chain)


def test_ngram_splits_merge_state(merge_diamond, multiset):
    out = expand_ngram(merge_diamond, 2)
    # state 3 is reached after x and after y
    assert out.num_states == merge_diamond.num_states + 1
    assert count_paths(out) == 2
    assert multiset(out) == multiset(merge_diamond)


def test_high_order_ngram_is_prefix_tree(small_lattices, multiset):
    for lat in small_lattices:
        out = expand_ngram(lat, lat.num_states + 1)
        assert is_prefix_tree(out)
        full = expand_posterior(lat, ExpansionConfig(FULL))
        assert isomorphic(out, full)
        for order in (2, 3, 4):
            assert multiset(expand_ngram(lat, order)) == multiset(lat)
