import math

import pytest

import score
from cover import constrained_path_cover, cover_to_hypotheses, format_hypotheses
from errors import (
    ConfigError, ScorerProtocolError, ScorerUnavailableError, UncoveredArcError,
)
from lattice import FINAL, ArcRef, find_path, parse_lattice
from score import (
    ArcScoreTable, BigramScorer, Candidate, CountingScorer, EstimationMethod,
    FileScorer, HashScorer, InterpolationConfig, LatencyScorer, Scorer, UniformScorer,
    build_arc_scores, estimate, make_scorer, map_oov, merge_scores,
    parse_estimation, read_hypotheses, read_score_file, replace_scores,
    score_hypotheses, score_hypothesis_file, write_score_file,
)


class FixedScorer(Scorer):
    """Answers with whatever the test hands it."""

    def __init__(self, response):
        super().__init__()
        self.response = response

    def score_batch(self, requests_, utt_id=""):
        return self.response


def test_uniform_scorer_costs_log_vocab():
    batch = score_hypotheses(UniformScorer(4), [(0, ("a", "b", "c"))])
    assert batch.costs[0] == pytest.approx((math.log(4),) * 4)


def test_bigram_scorer_laplace_costs():
    scorer = BigramScorer.from_text("a b\na c\n")
    costs = scorer.score_batch([(0, ("a", "b"))])[0]
    assert costs == pytest.approx([-math.log(3 / 7), -math.log(2 / 7), -math.log(2 / 6)])
    assert scorer.vocab == {"a", "b", "c", "</s>", "<unk>"}


def test_bigram_maps_unknown_words():
    scorer = BigramScorer.from_text("a b\n")
    assert map_oov(("a", "zzz"), scorer.vocab) == ("a", "<unk>")
    assert map_oov(("zzz",), None) == ("zzz",)
    batch = score_hypotheses(scorer, [(0, ("a", "zzz"))])
    # the response keeps the caller's tokens
    assert batch.requests == ((0, ("a", "zzz")),)
    assert len(batch.costs[0]) == 3


def test_hash_scorer_depends_on_history():
    scorer = HashScorer()
    out = scorer.score_batch([(0, ("a", "b")), (1, ("c", "b")), (2, ("a", "b", "d"))])
    assert out[0][0] == out[2][0]
    assert out[0][1] == out[2][1]
    assert out[0][1] != out[1][1]
    assert all(scorer.low <= c <= scorer.high for costs in out.values() for c in costs)


def test_batch_is_one_call():
    counter = CountingScorer(HashScorer())
    score_hypotheses(counter, [(k, ("a",) * k) for k in range(5)])
    assert counter.calls == 1
    assert counter.hypotheses == 5
    assert counter.tokens == sum(k + 1 for k in range(5))


def test_score_hypotheses_rejects_bad_batches():
    scorer = HashScorer()
    with pytest.raises(ValueError):
        score_hypotheses(scorer, [])
    with pytest.raises(ValueError):
        score_hypotheses(scorer, [(0, ("a",)), (0, ("b",))])
    with pytest.raises(ValueError):
        score_hypotheses(scorer, [(0, ("<s>", "a"))])


@pytest.mark.parametrize("response", [
    {1: [1.0, 1.0]},
    {0: [1.0]},
    {0: [1.0, "x"]},
    {0: [1.0, -0.5]},
    {0: [1.0, float("inf")]},
    [1.0, 1.0],
])
def test_score_hypotheses_validates_responses(response):
    with pytest.raises(ScorerProtocolError):
        score_hypotheses(FixedScorer(response), [(0, ("a",))])


def test_round_off_negatives_are_clamped():
    batch = score_hypotheses(FixedScorer({0: [-1e-9, 2.0]}), [(0, ("a",))])
    assert batch.costs[0] == (0.0, 2.0)


def test_make_scorer_specs(tmp_path):
    assert isinstance(make_scorer("uniform"), UniformScorer)
    assert make_scorer("uniform:7").vocab_size == 7
    assert isinstance(make_scorer("hash"), HashScorer)
    text = tmp_path / "train.txt"
    text.write_text("a b\n")
    assert isinstance(make_scorer(f"bigram:{text}"), BigramScorer)
    for bad in ("nope", "uniform:x", "uniform:0", "bigram", "hash:3"):
        with pytest.raises(ConfigError):
            make_scorer(bad)
    with pytest.raises(ScorerUnavailableError):
        make_scorer(f"bigram:{tmp_path / 'missing.txt'}")


def test_parse_estimation_aliases():
    assert parse_estimation("semi_viterbi") is EstimationMethod.SEMI_VITERBI
    assert parse_estimation("weighted-average") is EstimationMethod.WEIGHTED
    with pytest.raises(ConfigError):
        parse_estimation("median")


def test_estimation_methods():
    cands = [Candidate(0, 1.0, 0.0, 5.0), Candidate(1, 3.0, 0.0, 4.0)]
    assert estimate(cands, "average") == pytest.approx(2.0)
    assert estimate(cands, "semi-viterbi") == 3.0
    equal = [Candidate(0, 1.0, math.log(2), 5.0), Candidate(1, 3.0, math.log(2), 4.0)]
    assert estimate(equal, "weighted") == pytest.approx(2.0)
    # lower history cost weighs more
    skewed = [Candidate(0, 1.0, 0.0, 5.0), Candidate(1, 3.0, math.log(3), 4.0)]
    assert estimate(skewed, "weighted") == pytest.approx(0.75 * 1.0 + 0.25 * 3.0)


def test_semi_viterbi_ties_go_to_first_path():
    cands = [Candidate(2, 1.0, 0.0, 4.0), Candidate(0, 3.0, 0.0, 4.0)]
    assert estimate(cands, "semi-viterbi") == 3.0


def test_single_candidate_agrees_across_methods():
    cands = [Candidate(0, 1.7, 2.0, 3.0)]
    assert {estimate(cands, m) for m in EstimationMethod} == {1.7}
    with pytest.raises(UncoveredArcError):
        estimate([], "average")


def test_arc_scores_follow_token_positions(diamond):
    cover = constrained_path_cover(diamond)
    scorer = HashScorer()
    batch = score_hypotheses(scorer, cover_to_hypotheses(cover))
    table = build_arc_scores(diamond, cover, batch, "average")
    a_costs = scorer.score_batch([(0, ("a", "c"))])[0]
    b_costs = scorer.score_batch([(0, ("b", "c"))])[0]
    assert table.estimates[ArcRef(0, 0)] == a_costs[0]
    assert table.estimates[ArcRef(2, 0)] == b_costs[1]
    # the final termination carries the end-of-sentence cost of both paths
    assert table.estimates[ArcRef(3, FINAL)] == pytest.approx((a_costs[2] + b_costs[2]) / 2)
    assert [c.history_cost for c in table.candidates[ArcRef(1, 0)]] == [a_costs[0]]


def test_arc_scores_skip_structural_arcs():
    lat = parse_lattice("0 1 <s> 0,0\n1 2 a 1,0\n2 3 </s> 0,0\n3 0\n")
    cover = constrained_path_cover(lat)
    batch = score_hypotheses(UniformScorer(10), cover_to_hypotheses(cover))
    table = build_arc_scores(lat, cover, batch)
    assert set(table.estimates) == {ArcRef(1, 0), ArcRef(3, FINAL)}
    merged = merge_scores(lat, table, InterpolationConfig(1.0))
    assert merged.arcs[0][0].graph_cost == 0.0
    assert merged.arcs[1][0].graph_cost == pytest.approx(math.log(10))


def test_missing_path_scores_are_uncovered(diamond):
    cover = constrained_path_cover(diamond)
    batch = score_hypotheses(HashScorer(), cover_to_hypotheses(cover)[:1])
    with pytest.raises(UncoveredArcError):
        build_arc_scores(diamond, cover, batch)


def test_merge_interpolates_graph_costs():
    lat = parse_lattice("0 1 a 1.0,0.5\n1 0.0\n")
    table = ArcScoreTable({}, {ArcRef(0, 0): 2.0, ArcRef(1, FINAL): 0.5},
                          EstimationMethod.SEMI_VITERBI)
    merged = merge_scores(lat, table, InterpolationConfig(0.8))
    assert merged.arcs[0][0].graph_cost == pytest.approx(1.8)
    assert merged.arcs[0][0].acoustic_cost == 0.5
    assert merged.final_costs[1] == pytest.approx(0.4)
    assert merge_scores(lat, table, InterpolationConfig(0.0)) == lat
    full = merge_scores(lat, table, InterpolationConfig(1.0))
    assert full.arcs[0][0].graph_cost == 2.0


def test_interpolation_range():
    for lam in (-0.1, 1.1):
        with pytest.raises(ConfigError):
            InterpolationConfig(lam)


def test_replace_scores_on_chain_is_exact(chain):
    scorer = HashScorer()
    costs = scorer.score_batch([(0, ("a", "b", "c"))])[0]
    out = replace_scores(chain, scorer, "semi-viterbi", InterpolationConfig(0.5))
    graph = [arc.graph_cost for out_arcs in out.arcs for arc in out_arcs]
    assert graph == pytest.approx([0.5 * c + 0.5 * g for c, g in zip(costs, (1.0, 0.5, 1.0))])
    assert out.final_costs[3] == pytest.approx(0.5 * costs[3])


def test_replace_scores_identity_at_lambda_zero(double_diamond):
    assert replace_scores(double_diamond, HashScorer(), cfg=InterpolationConfig(0.0)) \
        == double_diamond


def test_replace_scores_uniform_diamond(diamond):
    out = replace_scores(diamond, UniformScorer(20), "average", InterpolationConfig(1.0))
    for out_arcs in out.arcs:
        for arc in out_arcs:
            assert arc.graph_cost == pytest.approx(math.log(20))
    assert find_path(out, ("a", "c")).cost == pytest.approx(find_path(out, ("b", "c")).cost)


def test_score_file_replay_matches_direct_scoring(diamond, double_diamond, tmp_path):
    lattices = [parse_lattice(f"UTT u1\n{t}") for t in ("0 1 a 1,0\n1 0\n",)]
    lattices += [diamond.__class__(diamond.arcs, diamond.final_costs, "u2"),
                 double_diamond.__class__(double_diamond.arcs, double_diamond.final_costs, "u3")]
    text = format_hypotheses([constrained_path_cover(lat) for lat in lattices])
    hyps = read_hypotheses(text)
    assert list(hyps) == ["u1", "u2", "u3"]

    scores = tmp_path / "scores.txt"
    scores.write_text(write_score_file(score_hypothesis_file(HashScorer(), hyps)))
    assert set(read_score_file(scores.read_text())) == {"u1", "u2", "u3"}

    replay = FileScorer(str(scores))
    cfg = InterpolationConfig(0.8)
    for lat in lattices:
        assert replace_scores(lat, replay, cfg=cfg) == replace_scores(lat, HashScorer(), cfg=cfg)


def test_file_scorer_unknown_utterance(tmp_path):
    scores = tmp_path / "scores.txt"
    scores.write_text("UTT u1\n0 1.0 2.0\n")
    with pytest.raises(ScorerProtocolError):
        score_hypotheses(FileScorer(str(scores)), [(0, ("a",))], utt_id="u9")
    with pytest.raises(ScorerUnavailableError):
        FileScorer(str(tmp_path / "missing.txt"))


def test_malformed_offline_files():
    with pytest.raises(ScorerProtocolError):
        read_hypotheses("PATH 0 1.0 a\n")
    with pytest.raises(ScorerProtocolError):
        read_score_file("0 1.0\n")
    with pytest.raises(ScorerProtocolError):
        read_score_file("UTT u\n0 abc\n")


def test_latency_scorer_sleeps_once_per_call(monkeypatch):
    naps = []
    monkeypatch.setattr(score.time, "sleep", naps.append)
    slow = LatencyScorer(HashScorer(), 0.25)
    batch = score_hypotheses(slow, [(0, ("a",)), (1, ("b",))])
    assert naps == [0.25]
    assert batch.costs == score_hypotheses(HashScorer(), [(0, ("a",)), (1, ("b",))]).costs
