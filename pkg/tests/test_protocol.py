import pathlib
import shlex
import sys

import pytest

from errors import ScorerProtocolError, ScorerUnavailableError
from lattice import serialize_archive
from pipeline import RescoreConfig, rescore_archive
from score import ExecScorer, HashScorer, make_scorer, score_hypotheses

ECHO = pathlib.Path(__file__).resolve().parent.parent / "tools" / "echo_scorer.py"
PYTHON = shlex.quote(sys.executable)


def script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text("import json, sys\n" + body)
    return f"{PYTHON} {shlex.quote(str(path))}"


def test_echo_scorer_matches_hash_scorer(small_lattices):
    cfg = RescoreConfig(epsilon=0.1)
    expected = serialize_archive([r.lattice for r in
                                  rescore_archive(small_lattices, HashScorer(), cfg)])
    with make_scorer(f"exec:{PYTHON} {shlex.quote(str(ECHO))} --vocab-size 12") as scorer:
        assert scorer.vocab_size == 12
        serial = rescore_archive(small_lattices, scorer, cfg, workers=1)
        threaded = rescore_archive(small_lattices, scorer, cfg, workers=4)
    assert serialize_archive([r.lattice for r in serial]) == expected
    assert serialize_archive([r.lattice for r in threaded]) == expected


def test_handshake_must_be_json(tmp_path):
    cmd = script(tmp_path, "garbage.py", "print('hello', flush=True)\nsys.stdin.read()\n")
    with pytest.raises(ScorerProtocolError):
        ExecScorer(cmd)


def test_handshake_must_say_ready(tmp_path):
    cmd = script(tmp_path, "not_ready.py",
                 "print(json.dumps({'ready': False}), flush=True)\nsys.stdin.read()\n")
    with pytest.raises(ScorerProtocolError):
        ExecScorer(cmd)


def test_scorer_that_exits_at_once(tmp_path):
    with pytest.raises(ScorerUnavailableError):
        ExecScorer(script(tmp_path, "quit.py", "sys.exit(0)\n"))


def test_silent_scorer_times_out(tmp_path):
    cmd = script(tmp_path, "silent.py", "sys.stdin.read()\n")
    with pytest.raises(ScorerUnavailableError):
        ExecScorer(cmd, startup_timeout=0.2)


def test_missing_binary():
    with pytest.raises(ScorerUnavailableError):
        ExecScorer("/nonexistent/scorer-binary --flag")


def test_wrong_cost_count(tmp_path):
    cmd = script(tmp_path, "short.py", """\
print(json.dumps({"ready": True}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "costs": [1.0]}), flush=True)
""")
    with ExecScorer(cmd) as scorer:
        with pytest.raises(ScorerProtocolError):
            score_hypotheses(scorer, [(0, ("a", "b"))])


def test_scorer_dies_after_handshake(tmp_path):
    cmd = script(tmp_path, "dies.py", """\
print(json.dumps({"ready": True}), flush=True)
sys.stdin.readline()
sys.exit(1)
""")
    with ExecScorer(cmd) as scorer:
        with pytest.raises(ScorerUnavailableError):
            score_hypotheses(scorer, [(0, ("a",)), (1, ("b",))])


def test_large_batch_does_not_stall():
    # several hundred long hypotheses overflow both pipe buffers at once
    hyps = [(i, tuple(f"word{i}_{j}" for j in range(60))) for i in range(400)]
    with ExecScorer(f"{PYTHON} {shlex.quote(str(ECHO))}", response_timeout=30) as scorer:
        remote = score_hypotheses(scorer, hyps)
    assert remote.costs == score_hypotheses(HashScorer(), hyps).costs


def test_scorer_that_stalls_mid_batch(tmp_path):
    cmd = script(tmp_path, "stalls.py", """\
import time
print(json.dumps({"ready": True}), flush=True)
sys.stdin.readline()
time.sleep(60)
""")
    with ExecScorer(cmd, response_timeout=0.3) as scorer:
        with pytest.raises(ScorerUnavailableError):
            score_hypotheses(scorer, [(0, ("a",)), (1, ("b",))])
