"""Toy evaluator for engine tests.

Reads the candidate file, finds `SCORE = <float>`, and prints a result block
with that score. Extra directives in the candidate drive failure modes:

    SLEEP = <seconds>   sleep before reporting (timeout tests)
    EXIT_CODE = <int>   exit with that code, no block
    NO_MARKER = 1       print metrics but no result block
    BAD_JSON = 1        print a malformed result block
"""

import argparse
import json
import re
import sys
import time


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--code", required=True)
    parser.add_argument("--callbacks", default=None)
    parser.add_argument("--check", action="store_true")
    parser.add_argument("--log-lines", type=int, default=3)
    args = parser.parse_args()

    with open(args.code) as fh:
        src = fh.read()

    if args.check:
        try:
            compile(src, args.code, "exec")
        except SyntaxError as exc:
            print(f"syntax error: {exc}")
            return 1
        print("check ok")
        return 0

    if args.callbacks:
        with open(args.callbacks) as fh:
            callbacks_src = fh.read()
        first_line = callbacks_src.splitlines()[0] if callbacks_src else ""
        print(f"callbacks loaded ({len(callbacks_src)} bytes): {first_line}")

    sleep = re.search(r"^SLEEP\s*=\s*([0-9.]+)", src, re.M)
    if sleep:
        print("sleeping before evaluation")
        sys.stdout.flush()
        time.sleep(float(sleep.group(1)))

    exit_code = re.search(r"^EXIT_CODE\s*=\s*(\d+)", src, re.M)
    if exit_code:
        print("candidate requested failure")
        return int(exit_code.group(1))

    score_match = re.search(r"^SCORE\s*=\s*(-?[0-9.]+)", src, re.M)
    if score_match is None:
        print("no SCORE constant found")
        return 1
    score = float(score_match.group(1))

    for i in range(args.log_lines):
        print(f"evaluating step {i}: objective so far {score}")

    if re.search(r"^NO_MARKER\s*=\s*1", src, re.M):
        print(f"metrics: objective {score}")
        return 0

    if re.search(r"^BAD_JSON\s*=\s*1", src, re.M):
        print("[[ORA_RESULT]]")
        print("{not json at all")
        print("[[/ORA_RESULT]]")
        return 0

    body = {
        "metrics": {"objective": score},
        "features": [int(round(score * 10))],
        "score": score,
    }
    print("[[ORA_RESULT]]")
    print(json.dumps(body))
    print("[[/ORA_RESULT]]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
