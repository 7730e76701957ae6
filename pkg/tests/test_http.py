import pytest
import requests

import score
from errors import ScorerProtocolError, ScorerUnavailableError
from score import HashScorer, HttpScorer, make_scorer, score_hypotheses

URL = "http://scorer.invalid/score"


class FakeResponse:
    def __init__(self, payload=None, status=200, bad_json=False):
        self.payload = payload
        self.status = status
        self.bad_json = bad_json

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} error")

    def json(self):
        if self.bad_json:
            raise ValueError("not json")
        return self.payload


def serve(monkeypatch, response):
    sent = []

    def fake_post(url, json=None, timeout=None):
        sent.append((url, json, timeout))
        if isinstance(response, Exception):
            raise response
        return response(json) if callable(response) else response

    monkeypatch.setattr(score.requests, "post", fake_post)
    return sent


def test_http_scorer_round_trip(monkeypatch):
    hashed = HashScorer()

    def answer(body):
        reqs = [(r["id"], tuple(r["tokens"])) for r in body["requests"]]
        costs = hashed.score_batch(reqs)
        return FakeResponse({"responses": [{"id": rid, "costs": costs[rid]} for rid, _ in reqs]})

    sent = serve(monkeypatch, answer)
    scorer = make_scorer(f"http:{URL}")
    assert isinstance(scorer, HttpScorer)
    hyps = [(0, ("a", "b")), (1, ("c",))]
    batch = score_hypotheses(scorer, hyps, utt_id="u1")
    assert batch.costs == score_hypotheses(hashed, hyps).costs
    url, body, timeout = sent[0]
    assert url == URL
    assert body["utt_id"] == "u1"
    assert body["requests"][0] == {"id": 0, "tokens": ["a", "b"]}
    assert timeout == scorer.timeout


def test_connection_failure_is_unavailable(monkeypatch):
    serve(monkeypatch, requests.ConnectionError("refused"))
    with pytest.raises(ScorerUnavailableError):
        score_hypotheses(HttpScorer(URL), [(0, ("a",))])


def test_server_error_is_unavailable(monkeypatch):
    serve(monkeypatch, FakeResponse(status=503))
    with pytest.raises(ScorerUnavailableError):
        score_hypotheses(HttpScorer(URL), [(0, ("a",))])


@pytest.mark.parametrize("response", [
    FakeResponse(bad_json=True),
    FakeResponse({"costs": [1.0, 1.0]}),
    FakeResponse({"responses": [{"id": 0}]}),
    FakeResponse({"responses": [{"id": 0, "costs": [1.0]}]}),
])
def test_bad_replies_are_protocol_errors(monkeypatch, response):
    serve(monkeypatch, response)
    with pytest.raises(ScorerProtocolError):
        score_hypotheses(HttpScorer(URL), [(0, ("a",))])
