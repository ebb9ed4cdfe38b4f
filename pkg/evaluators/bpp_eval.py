#!/usr/bin/env python3
"""Online bin-packing evaluator.

The candidate file must define

    def choose_bin(item, remaining_capacities) -> int

returning the index of the bin to place the item in, or
len(remaining_capacities) to open a new bin. Items arrive one at a time from
seeded streams; placements that overflow a bin are validity failures (logged,
nonzero exit, no result block). The score is the negative mean bin count
across streams.
"""

import argparse
import json
import sys

import numpy as np

RESULT_BEGIN = "[[ORA_RESULT]]"
RESULT_END = "[[/ORA_RESULT]]"

CAPACITY = 1.0
TOLERANCE = 1e-9


def build_stream(seed: int, stream: int, num_items: int) -> list:
    rng = np.random.default_rng(seed * 1_000 + stream)
    return [float(x) for x in rng.uniform(0.1, 0.7, size=num_items)]


def simulate(choose_bin, items) -> int:
    """Feed the stream through the candidate's placement policy."""
    remaining: list = []
    for item in items:
        index = choose_bin(item, list(remaining))
        if not isinstance(index, int) or not 0 <= index <= len(remaining):
            raise ValueError(f"invalid bin index {index!r} for {len(remaining)} bins")
        if index == len(remaining):
            if item > CAPACITY + TOLERANCE:
                raise ValueError(f"item {item} exceeds bin capacity {CAPACITY}")
            remaining.append(CAPACITY - item)
        else:
            if remaining[index] < item - TOLERANCE:
                raise ValueError(
                    f"capacity violated: item {item:.4f} into bin {index} "
                    f"with {remaining[index]:.4f} left"
                )
            remaining[index] -= item
    return len(remaining)


def load_candidate(path: str):
    with open(path) as fh:
        source = fh.read()
    namespace: dict = {}
    exec(compile(source, path, "exec"), namespace)
    fn = namespace.get("choose_bin")
    if fn is None:
        raise ValueError("candidate does not define choose_bin")
    return fn


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--code", required=True)
    parser.add_argument("--callbacks", default=None)  # accepted, unused here
    parser.add_argument("--check", action="store_true")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--num-streams", type=int, default=5)
    parser.add_argument("--num-items", type=int, default=100)
    args = parser.parse_args()

    if args.check:
        with open(args.code) as fh:
            source = fh.read()
        try:
            compile(source, args.code, "exec")
        except SyntaxError as exc:
            print(f"syntax check failed: {exc}")
            return 1
        print("syntax check ok")
        return 0

    choose_bin = load_candidate(args.code)

    counts = {}
    for stream in range(args.num_streams):
        items = build_stream(args.seed, stream, args.num_items)
        try:
            bins = simulate(choose_bin, items)
        except ValueError as exc:
            print(f"[!] Stream {stream}: validity failure: {exc}")
            return 1
        counts[stream] = bins
        print(f"[*] Stream {stream}: {len(items)} items packed into {bins} bins")

    mean_bins = (sum(counts.values()) / len(counts)) if counts else 0.0
    body = {
        "metrics": {f"stream{s}": float(b) for s, b in counts.items()}
        | {"avg_bins": mean_bins},
        "features": [int(round(mean_bins))],
        "score": -mean_bins if mean_bins else 0.0,
    }
    print(RESULT_BEGIN)
    print(json.dumps(body, sort_keys=True))
    print(RESULT_END)
    return 0


if __name__ == "__main__":
    sys.exit(main())
