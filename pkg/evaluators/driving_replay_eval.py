#!/usr/bin/env python3
"""Driving-metrics replay evaluator.

No traffic simulator runs here: a fixture file supplies per-case metrics (and
optional per-step state for callback probing), and this script replays them.
The candidate must still load cleanly and define the control entry point

    def control_vehicle(**kwargs) -> dict

so broken policies fail like they would against a real simulator. When
`--callbacks` is given, the callbacks class's on_step_end hook is invoked over
every replayed step, and whatever it prints lands in the log ahead of the
result block.

The result block carries metrics only; the engine derives the driving score
and behavioral signature from them.
"""

import argparse
import json
import sys

RESULT_BEGIN = "[[ORA_RESULT]]"
RESULT_END = "[[/ORA_RESULT]]"


def load_module(path: str) -> dict:
    with open(path) as fh:
        source = fh.read()
    namespace: dict = {}
    exec(compile(source, path, "exec"), namespace)
    return namespace


def aggregate(cases) -> dict:
    keys = set()
    for case in cases:
        keys.update(case["metrics"])
    return {
        key: sum(float(case["metrics"].get(key, 0.0)) for case in cases) / len(cases)
        for key in sorted(keys)
    }


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--code", required=True)
    parser.add_argument("--callbacks", default=None)
    parser.add_argument("--check", action="store_true")
    parser.add_argument("--fixture", required=False)
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

    if not args.fixture:
        print("a metrics fixture is required outside --check mode")
        return 1

    candidate = load_module(args.code)
    if "control_vehicle" not in candidate:
        print("candidate does not define control_vehicle")
        return 1

    with open(args.fixture) as fh:
        fixture = json.load(fh)
    cases = fixture["cases"]

    callbacks = None
    if args.callbacks:
        namespace = load_module(args.callbacks)
        callbacks_cls = namespace.get("Callbacks")
        if callbacks_cls is not None:
            callbacks = callbacks_cls()

    for case in cases:
        steps = case.get("steps", [])
        print(f"[*] Replaying case {case['name']} ({len(steps)} steps)")
        sys.stdout.flush()
        if callbacks is not None and hasattr(callbacks, "on_step_end"):
            for step in steps:
                callbacks.on_step_end(**step)
                sys.stdout.flush()

    body = {"metrics": aggregate(cases)}
    print(RESULT_BEGIN)
    print(json.dumps(body, sort_keys=True))
    print(RESULT_END)
    return 0


if __name__ == "__main__":
    sys.exit(main())
