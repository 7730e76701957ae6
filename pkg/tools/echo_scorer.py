"""
Reference external scorer for the exec: protocol.

Answers every request with the in-process hash scorer's costs, so
rescoring through

    --scorer "exec:python3 tools/echo_scorer.py"

must produce byte-identical output to --scorer hash.

Protocol (line-delimited JSON):
    -> {"ready": true, "vocab_size": N}           once, on startup
    <- {"id": 3, "tokens": ["a", "b"]}
    -> {"id": 3, "costs": [c_a, c_b, c_end]}
EOF on stdin ends the process.
"""
import sys, pathlib
sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import argparse
import json
import time

from score import HashScorer


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--vocab-size", type=int, default=0,
                        help="value reported in the handshake (0 = open vocabulary)")
    parser.add_argument("--delay", type=float, default=0.0,
                        help="seconds to sleep before each response")
    args = parser.parse_args()

    scorer = HashScorer()
    print(json.dumps({"ready": True, "vocab_size": args.vocab_size}), flush=True)

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        rid = req["id"]
        costs = scorer.score_batch([(rid, req["tokens"])])[rid]
        if args.delay:
            time.sleep(args.delay)
        print(json.dumps({"id": rid, "costs": costs}), flush=True)


if __name__ == "__main__":
    main()
