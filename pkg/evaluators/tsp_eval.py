#!/usr/bin/env python3
"""Constructive-TSP evaluator.

The candidate file must define

    def select_next_node(current_node, destination_node, unvisited_nodes,
                         distance_matrix) -> int

Tours are built over seeded random Euclidean instances (20 and 50 cities at
desk scale), starting and ending at node 0. The score is the negative mean
tour length, so higher is better. Free-form progress lines come first, then
the machine-readable result block:

    [[ORA_RESULT]]
    {"metrics": ..., "features": ..., "score": ...}
    [[/ORA_RESULT]]

`--check` compiles the candidate without executing it and exits 0/1.
"""

import argparse
import json
import sys

import numpy as np

RESULT_BEGIN = "[[ORA_RESULT]]"
RESULT_END = "[[/ORA_RESULT]]"

SIZES = (20, 50)
INSTANCES_PER_SIZE = 4


def build_instances(size: int, seed: int, count: int = INSTANCES_PER_SIZE):
    """Seeded Euclidean instances: points in the unit square, full distance
    matrix. Deterministic for a given (seed, size)."""
    rng = np.random.default_rng(seed * 10_000 + size)
    instances = []
    for _ in range(count):
        points = rng.random((size, 2))
        deltas = points[:, None, :] - points[None, :, :]
        instances.append(np.sqrt((deltas ** 2).sum(axis=2)))
    return instances


def construct_tour(select_next_node, distance_matrix) -> float:
    """Run the candidate's constructive policy from node 0 around the cycle."""
    n = distance_matrix.shape[0]
    current = 0
    unvisited = list(range(1, n))
    length = 0.0
    while unvisited:
        chosen = select_next_node(current, 0, list(unvisited), distance_matrix)
        if chosen not in unvisited:
            raise ValueError(f"candidate picked {chosen!r}, not an unvisited node")
        length += float(distance_matrix[current, chosen])
        unvisited.remove(chosen)
        current = chosen
    length += float(distance_matrix[current, 0])
    return length


def load_candidate(path: str):
    with open(path) as fh:
        source = fh.read()
    namespace: dict = {}
    exec(compile(source, path, "exec"), namespace)
    fn = namespace.get("select_next_node")
    if fn is None:
        raise ValueError("candidate does not define select_next_node")
    return fn


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--code", required=True)
    parser.add_argument("--callbacks", default=None)  # accepted, unused here
    parser.add_argument("--check", action="store_true")
    parser.add_argument("--seed", type=int, default=42)
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

    select_next_node = load_candidate(args.code)

    averages = {}
    for size in SIZES:
        instances = build_instances(size, args.seed)
        print(f"[*] Evaluating tsp{size}_dataset ({len(instances)} instances, seed {args.seed})")
        sys.stdout.flush()
        lengths = [construct_tour(select_next_node, dm) for dm in instances]
        averages[size] = sum(lengths) / len(lengths)
        print(f"Average for {size} cities: {averages[size]:.3f}")
        sys.stdout.flush()

    mean_length = sum(averages.values()) / len(averages)
    body = {
        "metrics": {str(size): averages[size] for size in SIZES},
        "features": [int(averages[size]) for size in SIZES],
        "score": -mean_length,
    }
    print(RESULT_BEGIN)
    print(json.dumps(body, sort_keys=True))
    print(RESULT_END)
    return 0


if __name__ == "__main__":
    sys.exit(main())
