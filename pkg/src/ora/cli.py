"""Command-line entry point.

    ora run    --spec canvas.yaml --config config.yaml --backend scripted \
               --playbook playbook.yaml --rounds 2 --seed 0 --out runs --run-id demo
    ora tree   --run runs/demo --round 1 [--lead 1]
    ora report --runs runs/demo runs/other --out report

Exit codes: 0 ok, 2 configuration error, 3 backend error, 4 budget exhausted
before any valid solution.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import canvas as canvas_mod
from . import scorelab
from .modelgate import HttpBackend, ScriptExhausted, ScriptedBackend, TransportError
from .runner import execute_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_NO_SOLUTION = 4


class UnknownRun(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ora", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute research rounds")
    run.add_argument("--spec", required=True, help="canvas file")
    run.add_argument("--config", default=None, help="run config file (defaults apply)")
    run.add_argument("--backend", choices=("http", "scripted"), default="http")
    run.add_argument("--playbook", default=None, help="playbook file for the scripted backend")
    run.add_argument("--rounds", type=int, default=1)
    run.add_argument("--seed", type=int, default=0, help="RNG seed for parent sampling")
    run.add_argument("--out", default="runs", help="output root directory")
    run.add_argument("--run-id", default=None, help="run directory name (default: timestamp)")
    run.add_argument("--prompts", default=None, help="directory of prompt template overrides")

    tree = sub.add_parser("tree", help="print a stored research tree")
    tree.add_argument("--run", required=True, help="run directory")
    tree.add_argument("--round", type=int, required=True)
    tree.add_argument("--lead", type=int, default=1)

    report = sub.add_parser("report", help="emit normalized scores and budget curves")
    report.add_argument("--runs", nargs="+", required=True, help="run directories")
    report.add_argument("--out", default="report", help="report output directory")
    report.add_argument("--direction", choices=("max", "min"), default="max")
    return parser


def cmd_run(args) -> int:
    try:
        spec = canvas_mod.load_problem_spec(args.spec)
        config = (
            canvas_mod.load_run_config(args.config)
            if args.config
            else canvas_mod.RunConfig()
        )
    except canvas_mod.CanvasError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.backend == "scripted":
        if not args.playbook:
            print("scripted backend needs --playbook", file=sys.stderr)
            return EXIT_CONFIG
        try:
            backend = ScriptedBackend.from_file(args.playbook)
        except (OSError, ValueError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        try:
            backend = HttpBackend.from_env()
        except TransportError as exc:
            print(f"backend error: {exc}", file=sys.stderr)
            return EXIT_BACKEND

    run_id = args.run_id or time.strftime("run-%Y%m%d-%H%M%S")
    try:
        manifest, run_dir, db = execute_run(
            spec,
            config,
            backend,
            args.backend,
            args.out,
            run_id,
            rounds=args.rounds,
            seed=args.seed,
            spec_path=args.spec,
            config_path=args.config or "",
            prompts_dir=args.prompts,
        )
    except ScriptExhausted as exc:
        print(f"backend error: playbook exhausted: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TransportError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    print(f"run {manifest.run_id}: "
          f"llm_calls={manifest.llm_calls_used} evaluations={manifest.evaluations_used} "
          f"best={manifest.best_solution_id or 'none'} score={manifest.best_score}")
    if manifest.best_score is None:
        print("budget exhausted before any valid solution", file=sys.stderr)
        return EXIT_NO_SOLUTION
    return EXIT_OK


def cmd_tree(args) -> int:
    run_dir = Path(args.run)
    if not (run_dir / "manifest.json").exists():
        print(f"unknown run: {args.run}", file=sys.stderr)
        return EXIT_CONFIG
    tree_path = run_dir / f"lead{args.lead}_round{args.round}_tree.txt"
    if not tree_path.exists():
        print(f"no tree recorded for lead {args.lead}, round {args.round}")
        return EXIT_OK
    sys.stdout.write(tree_path.read_text())
    return EXIT_OK


def _load_run(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise UnknownRun(str(run_dir))
    manifest = json.loads(manifest_path.read_text())
    progress = []
    progress_path = run_dir / "progress.jsonl"
    if progress_path.exists():
        for line in progress_path.read_text().splitlines():
            if line.strip():
                progress.append(json.loads(line))
    return {"manifest": manifest, "progress": progress, "dir": run_dir}


def _write_curves(run: dict, out: Path) -> None:
    run_id = run["manifest"]["run_id"]
    for axis in ("llm_calls", "evaluations"):
        rows = []
        best = None
        for point in run["progress"]:
            score = point.get("best_score")
            if score is None:
                continue
            best = score if best is None else max(best, score)
            rows.append((point[axis], best))
        path = out / f"{run_id}_best_by_{axis}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([axis, "best_score"])
            writer.writerows(rows)


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        runs = [_load_run(Path(r)) for r in args.runs]
    except UnknownRun as exc:
        print(f"unknown run: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    entries_by_problem: dict[str, list[scorelab.BenchmarkEntry]] = {}
    for run in runs:
        m = run["manifest"]
        if m.get("best_score") is None:
            continue
        problem = Path(m["spec_path"]).stem or "problem"
        entries_by_problem.setdefault(problem, []).append(
            scorelab.BenchmarkEntry(
                problem=problem,
                algorithm=m["run_id"],
                raw_score=m["best_score"],
                llm_calls=m["llm_calls_used"],
                evaluations=m["evaluations_used"],
            )
        )
        _write_curves(run, out)

    table_path = out / "normalized_scores.csv"
    with table_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "algorithm", "raw_score", "normalized"])
        for problem, entries in sorted(entries_by_problem.items()):
            normalized = scorelab.normalized_scores(entries, direction=args.direction)
            for entry in entries:
                writer.writerow([
                    problem,
                    entry.algorithm,
                    entry.raw_score,
                    f"{normalized[entry.algorithm]:.3f}",
                ])
    print(f"report written to {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "tree":
        return cmd_tree(args)
    return cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
